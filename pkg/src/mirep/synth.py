"""Synthetic motor-imagery EEG for desk-scale experiments.

Each trial is pink (1/f) background noise on the 23 sensorimotor template
channels plus a 10 Hz rhythm over the two hand-knob regions.  Imagery of one
hand attenuates the rhythm on the contralateral hemisphere (event-related
desynchronization): left_hand weakens the C4 neighborhood, right_hand the C3
neighborhood.  The attenuation factor is drawn once per subject from
U[0.3, 0.7], so subjects differ in how separable they are, and every random
draw is keyed deterministically to (seed, subject_id).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (DatasetManifest, SessionEntry, SubjectEntry, Trial,
                   save_manifest, write_trial_file)
from .spatial import TEMPLATE_23

__all__ = ["SynthSpec", "synth_dataset", "subject_rng"]

# rhythm carriers around each hand knob
_LEFT_PATCH = ("C3", "C1", "C5", "FC3", "CP3")    # left hemisphere, right hand
_RIGHT_PATCH = ("C4", "C2", "C6", "FC4", "CP4")   # right hemisphere, left hand

_SUPPORTED = ("left_hand", "right_hand")


@dataclass(frozen=True)
class SynthSpec:
    """Generator knobs; defaults give a learnable but non-trivial task."""

    rhythm_hz: float = 10.0
    rhythm_jitter_hz: float = 1.0  # per-subject alpha-peak spread (individual alpha)
    rhythm_amp: float = 1.0       # oscillation amplitude relative to unit noise
    noise_amp: float = 1.0
    erd_low: float = 0.3          # per-subject attenuation factor range
    erd_high: float = 0.7
    patch_falloff: float = 0.5    # amplitude multiplier for non-central patch channels

    def __post_init__(self) -> None:
        if not 0.0 <= self.erd_low <= self.erd_high < 1.0:
            raise ValueError(f"need 0 <= erd_low <= erd_high < 1, got "
                             f"({self.erd_low}, {self.erd_high})")
        if self.rhythm_hz <= 0 or self.rhythm_jitter_hz < 0:
            raise ValueError("rhythm_hz must be positive, jitter non-negative")
        if min(self.rhythm_amp, self.noise_amp, self.patch_falloff) < 0:
            raise ValueError("amplitudes and falloff must be non-negative")


def subject_rng(seed: int, subject_id: str) -> np.random.Generator:
    """Deterministic per-subject stream keyed on (seed, crc32(subject_id))."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(subject_id.encode("utf-8"))])
    )


def _pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int) -> np.ndarray:
    """1/f-power noise per channel, unit variance, via spectral shaping."""
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    freq = np.fft.rfftfreq(n_samples)
    shape = np.zeros_like(freq)
    shape[1:] = freq[1:] ** -0.5  # amplitude ~ f^-1/2 so power ~ 1/f
    spec *= shape
    x = np.fft.irfft(spec, n=n_samples, axis=1)
    sd = x.std(axis=1, keepdims=True)
    sd[sd == 0.0] = 1.0
    return x / sd


def _patch_gains(channels, patch, falloff: float) -> np.ndarray:
    g = np.zeros(len(channels))
    for i, name in enumerate(channels):
        if name == patch[0]:
            g[i] = 1.0
        elif name in patch:
            g[i] = falloff
    return g


def synth_dataset(out_dir, n_subjects: int, trials_per_class: int,
                  classes=("left_hand", "right_hand"), fs: float = 250.0,
                  duration: float = 4.0, seed: int = 0,
                  name: str = "synth", spec: SynthSpec = SynthSpec()) -> DatasetManifest:
    """Generate a dataset on disk and return its manifest.

    Pure function of its arguments including seed: rerunning with the same
    arguments produces byte-identical trial files.
    """
    classes = tuple(classes)
    if not classes or any(c not in _SUPPORTED for c in classes):
        raise ValueError(f"unsupported class set {classes}; supported: {_SUPPORTED}")
    if n_subjects < 1 or trials_per_class < 1:
        raise ValueError("need at least one subject and one trial per class")
    n_samples = int(round(duration * fs))
    if n_samples < 250:
        raise ValueError(f"duration*fs = {n_samples} samples; need >= 250")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = TEMPLATE_23
    left_gain = _patch_gains(channels, _LEFT_PATCH, spec.patch_falloff)
    right_gain = _patch_gains(channels, _RIGHT_PATCH, spec.patch_falloff)
    t_axis = np.arange(n_samples) / fs

    subjects = []
    for s in range(n_subjects):
        subject_id = f"S{s:02d}"
        rng = subject_rng(seed, subject_id)
        erd = rng.uniform(spec.erd_low, spec.erd_high)
        f_subject = spec.rhythm_hz + rng.uniform(-spec.rhythm_jitter_hz,
                                                 spec.rhythm_jitter_hz)
        channel_gain = rng.uniform(0.8, 1.2, size=len(channels))

        # interleave classes in acquisition order so chronological splits stay balanced
        order = []
        for k in range(trials_per_class):
            for ci, _ in enumerate(classes):
                order.append((k * len(classes) + ci, ci))

        rel_paths = []
        for idx, ci in order:
            label_name = classes[ci]
            phase = rng.uniform(0.0, 2.0 * np.pi)
            rhythm = np.sin(2.0 * np.pi * f_subject * t_axis + phase)
            #                 left patch            right patch
            amp_l, amp_r = (1.0, erd) if label_name == "left_hand" else (erd, 1.0)
            signal = spec.rhythm_amp * rhythm * (
                amp_l * left_gain[:, None] + amp_r * right_gain[:, None]
            )
            noise = spec.noise_amp * _pink_noise(rng, len(channels), n_samples)
            data = channel_gain[:, None] * (signal + noise)
            trial = Trial(data=data, label=ci, fs=fs, channels=channels,
                          subject_id=subject_id, session_id="s0")
            rel = f"{subject_id}_s0_t{idx:04d}.mirp"
            write_trial_file(trial, out_dir / rel)
            rel_paths.append(rel)

        subjects.append(SubjectEntry(
            id=subject_id,
            sessions=(SessionEntry(id="s0", trials=tuple(rel_paths)),),
        ))

    manifest = DatasetManifest(name=name, fs=fs, channels=channels,
                               label_vocab=classes, subjects=tuple(subjects),
                               root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
