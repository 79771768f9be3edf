"""Canonical data types, the bit-exact trial file format, and manifest handling.

A Trial is one EEG epoch: a channels x samples float32 matrix plus label,
sampling rate, channel names, and provenance strings.  Trials are immutable
after construction (the data buffer is marked read-only) so they can be shared
freely across threads and cached without defensive copies.

Trial files are a small little-endian binary format:

    magic "MIRP" | version u32 | C u32 | T u32 | fs f32 | label i32 (-1 = none)
    | per channel: name-length u16 + utf-8 bytes | row-major f32 samples

The manifest is a JSON document with keys name, fs, channels, label_vocab and
subjects[].sessions[].trials[]; trial paths are stored relative to the
manifest file.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC", "FORMAT_VERSION", "UNIFIED_VOCAB",
    "Trial", "SessionEntry", "SubjectEntry", "DatasetManifest",
    "write_trial_file", "read_trial_file",
    "save_manifest", "load_manifest", "iter_trials", "split_calibration",
]

MAGIC = b"MIRP"
FORMAT_VERSION = 1

# one label space across datasets; per-dataset label sets map injectively into it
UNIFIED_VOCAB = ("left_hand", "right_hand", "feet", "tongue", "rest")


@dataclass(frozen=True, eq=False)
class Trial:
    """One epoch of EEG.

    role tags provenance for leakage checks: "" (unassigned), "pretrain",
    "calibration" or "test".  Fit-type operations assert on it.
    """

    data: np.ndarray
    label: int | None
    fs: float
    channels: tuple[str, ...]
    subject_id: str = ""
    session_id: str = ""
    role: str = ""

    def __post_init__(self) -> None:
        # float32 and float64 pass through untouched (files store f32; the
        # numeric pipeline runs f64); everything else is coerced to f32
        arr = np.ascontiguousarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"trial data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] != len(self.channels):
            raise ValueError(
                f"trial has {arr.shape[0]} rows but {len(self.channels)} channel names"
            )
        if arr.shape[1] < 1:
            raise ValueError("trial must contain at least one sample")
        if not np.isfinite(arr).all():
            raise ValueError("non-finite sample in trial data")
        if not (math.isfinite(self.fs) and self.fs > 0):
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if self.label is not None and self.label < 0:
            raise ValueError(f"label must be a non-negative class id, got {self.label}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_role(self, role: str) -> "Trial":
        return replace(self, role=role)


def write_trial_file(trial: Trial, path) -> None:
    """Serialize a Trial; inverse of read_trial_file, bit-exact round trip."""
    path = Path(path)
    c, t = trial.data.shape
    head = bytearray()
    head += MAGIC
    head += struct.pack("<IIIfi", FORMAT_VERSION, c, t, trial.fs,
                        -1 if trial.label is None else trial.label)
    for name in trial.channels:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("channel name too long")
        head += struct.pack("<H", len(raw))
        head += raw
    payload = np.ascontiguousarray(trial.data, dtype="<f4").tobytes()
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "wb") as fh:
        fh.write(bytes(head))
        fh.write(payload)
    tmp.replace(path)


def read_trial_file(path, subject_id: str = "", session_id: str = "") -> Trial:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic in {path}: {blob[:4]!r}")
    off = 4
    version, c, t, fs, label = struct.unpack_from("<IIIfi", blob, off)
    off += struct.calcsize("<IIIfi")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported trial-file version {version} in {path}")
    names = []
    for _ in range(c):
        if off + 2 > len(blob):
            raise ValueError(f"truncated channel table in {path}")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + nlen > len(blob):
            raise ValueError(f"truncated channel table in {path}")
        names.append(blob[off:off + nlen].decode("utf-8"))
        off += nlen
    need = c * t * 4
    if len(blob) - off < need:
        raise ValueError(f"truncated payload in {path}: need {need} bytes, have {len(blob) - off}")
    data = np.frombuffer(blob, dtype="<f4", count=c * t, offset=off).reshape(c, t)
    return Trial(data=data, label=None if label < 0 else label, fs=fs,
                 channels=tuple(names), subject_id=subject_id, session_id=session_id)


@dataclass(frozen=True)
class SessionEntry:
    id: str
    trials: tuple[str, ...]  # paths relative to the manifest


@dataclass(frozen=True)
class SubjectEntry:
    id: str
    sessions: tuple[SessionEntry, ...]


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    fs: float
    channels: tuple[str, ...]
    label_vocab: tuple[str, ...]
    subjects: tuple[SubjectEntry, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        if len(set(self.label_vocab)) != len(self.label_vocab):
            raise ValueError("duplicate entries in label_vocab")
        object.__setattr__(self, "root", Path(self.root))

    def subject_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.subjects)

    def trial_paths(self, subject_id: str | None = None):
        for sub in self.subjects:
            if subject_id is not None and sub.id != subject_id:
                continue
            for ses in sub.sessions:
                for rel in ses.trials:
                    yield sub.id, ses.id, self.root / rel


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    doc = {
        "name": manifest.name,
        "fs": manifest.fs,
        "channels": list(manifest.channels),
        "label_vocab": list(manifest.label_vocab),
        "subjects": [
            {
                "id": sub.id,
                "sessions": [
                    {"id": ses.id, "trials": list(ses.trials)} for ses in sub.sessions
                ],
            }
            for sub in manifest.subjects
        ],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path, validate: bool = True) -> DatasetManifest:
    """Parse a manifest; optionally check that every trial header agrees with it."""
    path = Path(path)
    doc = json.loads(path.read_text())
    known = {"name", "fs", "channels", "label_vocab", "subjects"}
    extra = set(doc) - known
    if extra:
        raise ValueError(f"unknown manifest keys: {sorted(extra)}")
    manifest = DatasetManifest(
        name=doc["name"],
        fs=float(doc["fs"]),
        channels=tuple(doc["channels"]),
        label_vocab=tuple(doc["label_vocab"]),
        subjects=tuple(
            SubjectEntry(
                id=sub["id"],
                sessions=tuple(
                    SessionEntry(id=ses["id"], trials=tuple(ses["trials"]))
                    for ses in sub["sessions"]
                ),
            )
            for sub in doc["subjects"]
        ),
        root=path.parent,
    )
    if validate:
        for _sub, _ses, tp in manifest.trial_paths():
            if not tp.exists():
                raise FileNotFoundError(f"manifest references missing trial file {tp}")
            _validate_header(tp, manifest)
    return manifest


def _validate_header(tp: Path, manifest: DatasetManifest) -> None:
    with open(tp, "rb") as fh:
        head = fh.read(4 + struct.calcsize("<IIIfi"))
    if head[:4] != MAGIC:
        raise ValueError(f"bad magic in {tp}")
    _ver, c, _t, fs, label = struct.unpack_from("<IIIfi", head, 4)
    if c != len(manifest.channels):
        raise ValueError(f"{tp}: header declares {c} channels, manifest {len(manifest.channels)}")
    if not math.isclose(fs, manifest.fs, rel_tol=1e-6):
        raise ValueError(f"{tp}: header fs {fs} disagrees with manifest fs {manifest.fs}")
    if label >= len(manifest.label_vocab):
        raise ValueError(f"{tp}: label id {label} outside vocabulary of {len(manifest.label_vocab)}")


def iter_trials(manifest: DatasetManifest, subject_id: str | None = None,
                role: str = ""):
    """Load trials referenced by the manifest, provenance fields filled in."""
    for sub, ses, tp in manifest.trial_paths(subject_id):
        trial = read_trial_file(tp, subject_id=sub, session_id=ses)
        yield trial if not role else trial.with_role(role)


def split_calibration(trials, fraction: float):
    """Chronological split: first ceil(fraction * n) trials are calibration.

    Trials must already be in acquisition order.  Both sides are tagged with
    their role so downstream fit operations can assert no test leakage.
    """
    trials = list(trials)
    n = len(trials)
    if n < 2:
        raise ValueError(f"need at least 2 trials to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    k = math.ceil(fraction * n)
    if k >= n:
        raise ValueError(f"fraction {fraction} leaves no test trials (n={n})")
    cal = [t.with_role("calibration") for t in trials[:k]]
    test = [t.with_role("test") for t in trials[k:]]
    return cal, test
