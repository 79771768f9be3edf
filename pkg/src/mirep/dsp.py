"""Temporal filtering and resampling, applied per trial before spatial steps.

bandpass: 4th-order Butterworth sections run forward-backward (zero phase)
with reflection padding, so epochs keep their event alignment.

resample: polyphase Kaiser-windowed-sinc with an explicit length rule
T_out = round(T * f_target / fs).  The rational rate ratio is reduced with
Fraction, the input is reflect-padded far enough that every retained output
sample sees a fully supported kernel, and the anti-alias cutoff is the tighter
of the two Nyquist rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import signal

from .data import Trial

__all__ = ["FilterSpec", "ResampleSpec", "bandpass", "resample"]


@dataclass(frozen=True)
class FilterSpec:
    low_hz: float = 8.0
    high_hz: float = 30.0
    order: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.low_hz < self.high_hz:
            raise ValueError(f"need 0 < low_hz < high_hz, got ({self.low_hz}, {self.high_hz})")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")


@dataclass(frozen=True)
class ResampleSpec:
    f_target: float = 250.0
    kernel_half_width: int = 16   # sinc zero crossings per side, times max(up, down)
    window_beta: float = 8.6

    def __post_init__(self) -> None:
        if self.f_target <= 0:
            raise ValueError("f_target must be positive")
        if self.kernel_half_width < 1:
            raise ValueError("kernel_half_width must be >= 1")


def bandpass(trial: Trial, spec: FilterSpec = FilterSpec()) -> Trial:
    if spec.high_hz >= trial.fs / 2.0:
        raise ValueError(
            f"band edge {spec.high_hz} Hz at or beyond Nyquist {trial.fs / 2.0} Hz")
    if trial.n_samples <= 3 * spec.order:
        raise ValueError(
            f"trial too short to filter: T={trial.n_samples}, order={spec.order}")
    sos = signal.butter(spec.order, [spec.low_hz, spec.high_hz],
                        btype="bandpass", fs=trial.fs, output="sos")
    padlen = min(trial.n_samples - 1, 9 * spec.order)
    out = signal.sosfiltfilt(sos, trial.data.astype(np.float64), axis=1,
                             padtype="odd", padlen=padlen)
    return replace(trial, data=out)


def _design_kernel(up: int, down: int, half_width: int, beta: float) -> np.ndarray:
    # windowed sinc at the upsampled rate; gain `up` restores amplitude after
    # zero insertion; cutoff at the tighter Nyquist
    half_len = half_width * max(up, down)
    n = np.arange(-half_len, half_len + 1)
    cutoff = 1.0 / max(up, down)  # in units of the upsampled Nyquist
    h = cutoff * np.sinc(cutoff * n)
    h *= np.kaiser(2 * half_len + 1, beta)
    return up * h


def resample(trial: Trial, spec: ResampleSpec = ResampleSpec()) -> Trial:
    fs = trial.fs
    target = spec.f_target
    if fs == target:
        return trial
    ratio = Fraction(target) / Fraction(fs)
    ratio = ratio.limit_denominator(10_000)
    up, down = ratio.numerator, ratio.denominator
    t_in = trial.n_samples
    t_out = int(round(t_in * target / fs))
    if t_out < 2:
        raise ValueError(f"resampling {t_in} samples {fs}->{target} Hz leaves {t_out} samples")

    h = _design_kernel(up, down, spec.kernel_half_width, spec.window_beta)
    half_len = (len(h) - 1) // 2

    # reflect-pad so every retained output index is fully supported, and pick
    # the padding so the kernel delay lands on the downsample grid exactly
    pad = math.ceil(half_len / up)
    while (pad * up + half_len) % down != 0:
        pad += 1
    x = np.pad(trial.data.astype(np.float64), ((0, 0), (pad, pad)), mode="reflect")
    full = signal.upfirdn(h, x, up=up, down=down, axis=1)
    offset = (pad * up + half_len) // down
    if full.shape[1] < offset + t_out:
        raise RuntimeError("internal resampler error: insufficient output length")
    out = full[:, offset:offset + t_out]
    return replace(trial, data=out, fs=float(target))
