"""Channel-template interpolation and Euclidean alignment.

Interpolation maps an arbitrary source layout onto the fixed 23-electrode
sensorimotor template by inverse-distance weighting over projected scalp
coordinates.  A template electrode that coincides with a source electrode is
copied through exactly (one-hot row); otherwise weights are d^-1 normalized to
sum 1, so constants are preserved.

Euclidean alignment whitens every trial of a subject-session by the inverse
square root of the mean trial covariance.  After alignment the mean covariance
over the fitting set is the identity.  A relative ridge (1e-8 * trace / C)
keeps the reference invertible for short or rank-deficient trials; because the
ridge scales with the data, whitening stays exactly invariant under global
rescaling of the input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from .data import Trial
from .montage import Montage, canonical_name, get_standard_1010

__all__ = [
    "TEMPLATE_23", "TemplateSpec", "TemplateWeights", "AlignReference",
    "electrode_distances", "interp_weights", "template_weights", "apply_template",
    "ea_reference", "ea_whiten", "save_align_reference", "load_align_reference",
]

# frontal-central, central, centro-parietal and temporal rows of the 10-10
# system: symmetric coverage of sensorimotor cortex including C3/Cz/C4
TEMPLATE_23 = (
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
    "T7", "T8",
)

RIDGE_SCALE = 1e-8      # ridge = RIDGE_SCALE * trace(R) / C
EIG_FLOOR = 1e-12       # eigenvalue floor relative to the largest eigenvalue


@dataclass(frozen=True)
class TemplateSpec:
    electrodes: tuple[str, ...] = TEMPLATE_23
    montage: Montage = field(default_factory=get_standard_1010)

    def __post_init__(self) -> None:
        names = tuple(canonical_name(e) for e in self.electrodes)
        if len(set(names)) != len(names):
            raise ValueError("duplicate template electrodes")
        for e in names:
            if e not in self.montage:
                raise KeyError(f"template electrode {e!r} missing from montage")
        object.__setattr__(self, "electrodes", names)


@dataclass(frozen=True)
class TemplateWeights:
    matrix: np.ndarray            # C x C_s, rows sum to 1, entries in [0, 1]
    source_channels: tuple[str, ...]
    template_channels: tuple[str, ...]

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != len(self.source_channels):
            raise ValueError("weight matrix shape does not match source channels")
        if w.shape[0] != len(self.template_channels):
            raise ValueError("weight matrix shape does not match template channels")
        w.setflags(write=False)
        object.__setattr__(self, "matrix", w)


def electrode_distances(template_names, source_channels, montage: Montage) -> np.ndarray:
    """Pairwise Euclidean distances between projected coordinates, C x C_s."""
    tpos = montage.positions(template_names)
    spos = montage.positions(source_channels)
    diff = tpos[:, None, :] - spos[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def interp_weights(distances: np.ndarray, source_channels,
                   template_channels) -> TemplateWeights:
    """Inverse-distance weights row by row; zero distance short-circuits to one-hot."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("distance matrix must be 2-D")
    if (d < 0).any() or np.isnan(d).any():
        raise ValueError("distances must be non-negative and not NaN")
    w = np.zeros_like(d)
    for i, row in enumerate(d):
        hit = np.flatnonzero(row == 0.0)
        if hit.size:
            w[i, hit[0]] = 1.0
            continue
        finite = np.isfinite(row)
        if not finite.any():
            raise ValueError(f"template row {i}: all source distances are infinite")
        # normalize by the row minimum before inverting so 1/d cannot overflow
        dmin = row[finite].min()
        inv = np.zeros_like(row)
        inv[finite] = dmin / row[finite]
        w[i] = inv / inv.sum()
    return TemplateWeights(matrix=w, source_channels=tuple(source_channels),
                           template_channels=tuple(template_channels))


def template_weights(source_channels, spec: TemplateSpec = None) -> TemplateWeights:
    """Convenience: distances plus weights for the given source layout."""
    spec = spec if spec is not None else TemplateSpec()
    src = tuple(canonical_name(c) for c in source_channels)
    d = electrode_distances(spec.electrodes, src, spec.montage)
    return interp_weights(d, src, spec.electrodes)


def apply_template(trial: Trial, weights: TemplateWeights) -> Trial:
    src = tuple(canonical_name(c) for c in trial.channels)
    if src != weights.source_channels:
        raise ValueError(
            f"channel mismatch: trial has {src}, weights expect {weights.source_channels}")
    out = weights.matrix @ trial.data.astype(np.float64)
    return replace(trial, data=out, channels=weights.template_channels)


@dataclass(frozen=True)
class AlignReference:
    """Mean trial covariance (ridge included) and its inverse square root."""

    R_bar: np.ndarray
    R_inv_sqrt: np.ndarray
    n: int
    epsilon: float

    def __post_init__(self) -> None:
        for name in ("R_bar", "R_inv_sqrt"):
            m = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            m.setflags(write=False)
            object.__setattr__(self, name, m)


def ea_reference(trials) -> AlignReference:
    """Fit the alignment reference on a list of trials (Eq. 5 with a ridge).

    Trials tagged role="test" are rejected: the reference must only ever see
    calibration or pretraining data.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("cannot fit an alignment reference on an empty trial list")
    c = trials[0].n_channels
    acc = np.zeros((c, c), dtype=np.float64)
    for tr in trials:
        if tr.role == "test":
            raise ValueError(
                f"test trial ({tr.subject_id}/{tr.session_id}) passed to ea_reference")
        if tr.n_channels != c:
            raise ValueError("trials disagree in channel count")
        x = tr.data.astype(np.float64)
        acc += x @ x.T
    acc /= len(trials)
    eps = RIDGE_SCALE * np.trace(acc) / c
    r_bar = acc + eps * np.eye(c)
    evals, evecs = linalg.eigh(r_bar)
    evals = np.maximum(evals, EIG_FLOOR * evals.max())
    r_inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return AlignReference(R_bar=r_bar, R_inv_sqrt=r_inv_sqrt, n=len(trials),
                          epsilon=float(eps))


def ea_whiten(trial: Trial, ref: AlignReference) -> Trial:
    if trial.n_channels != ref.R_bar.shape[0]:
        raise ValueError(
            f"trial has {trial.n_channels} channels, reference expects {ref.R_bar.shape[0]}")
    out = ref.R_inv_sqrt @ trial.data.astype(np.float64)
    return replace(trial, data=out)


def save_align_reference(ref: AlignReference, path) -> None:
    doc = {
        "n": ref.n,
        "epsilon": ref.epsilon,
        "R_bar": [list(map(float, row)) for row in ref.R_bar],
        "R_inv_sqrt": [list(map(float, row)) for row in ref.R_inv_sqrt],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_align_reference(path) -> AlignReference:
    doc = json.loads(Path(path).read_text())
    return AlignReference(R_bar=np.array(doc["R_bar"]),
                          R_inv_sqrt=np.array(doc["R_inv_sqrt"]),
                          n=int(doc["n"]), epsilon=float(doc["epsilon"]))
