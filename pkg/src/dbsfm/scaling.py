"""Reconstruction-loss scaling that corrects the low-frequency bias of MAE.

Field-potential spectra fall off roughly as 1/f^beta, so after the log10
transform the mean spectrum is approximately a negative log function of
frequency. A plain mean absolute error over log-power tokens therefore
concentrates loss mass at low frequencies. The per-frequency weight vector
built here is the log-transformed frequency axis shifted by the dataset's
mean log-power level, which flattens that bias without any iterative
periodic/aperiodic decomposition.
"""

from dataclasses import dataclass, field

import numpy as np

from dbsfm.errors import ValidationError


@dataclass(frozen=True)
class AperiodicModel:
    """Power-law background plus Gaussian peaks, all in log10-power units.

    peaks: list of (center_hz, height_log10, width_hz).
    """

    beta: float
    offset: float
    peaks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")
        for center, _height, width in self.peaks:
            if width <= 0:
                raise ValidationError("peak width must be positive")
            if center <= 0:
                raise ValidationError("peak center must be positive")


@dataclass(frozen=True)
class MeanLogProfile:
    """Per-bin mean of log10 PSD across training spectra."""

    p: np.ndarray

    def __post_init__(self):
        if self.p.ndim != 1 or self.p.size == 0:
            raise ValidationError("profile must be a non-empty vector")
        if not np.all(np.isfinite(self.p)):
            raise ValidationError("profile entries must be finite")


@dataclass(frozen=True)
class ScalingVector:
    """Per-frequency loss weights plus the weight for the hour feature slot."""

    freqs: np.ndarray
    k: np.ndarray
    hour_weight: float = 0.0

    def __post_init__(self):
        if self.freqs.shape != self.k.shape:
            raise ValidationError("freqs and k must have identical shape")
        if not np.all(np.isfinite(self.k)):
            raise ValidationError("k entries must be finite")

    def token_weights(self) -> np.ndarray:
        """k extended by the hour weight to match the full token dimension."""
        return np.concatenate([self.k, [self.hour_weight]])


def mean_log_profile(spectra: np.ndarray) -> MeanLogProfile:
    """Column-wise mean of an N x F matrix of log10 PSD values."""
    arr = np.asarray(spectra, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValidationError("spectra must be a non-empty N x F matrix")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("spectra contain non-finite entries")
    return MeanLogProfile(p=arr.mean(axis=0))


def scaling_vector(
    profile: MeanLogProfile, freqs: np.ndarray, hour_weight: float = 0.0
) -> ScalingVector:
    """k_i = log10(f_i) + mean over bins of the profile."""
    f = np.asarray(freqs, dtype=np.float64)
    if f.shape != profile.p.shape:
        raise ValidationError("freqs must match the profile length")
    if np.any(f < 1.0):
        raise ValidationError("all frequencies must be >= 1 Hz (log weighting)")
    k = np.log10(f) + profile.p.mean()
    return ScalingVector(freqs=f, k=k, hour_weight=float(hour_weight))


def alignment_residual(profile: MeanLogProfile, freqs: np.ndarray) -> float:
    """How well -log10(f) + const tracks the mean log spectrum.

    Returns the standard deviation over bins of log10(f) + p(f); zero means
    the mean spectrum is exactly a beta=1 power law in these bins.
    """
    f = np.asarray(freqs, dtype=np.float64)
    if f.shape != profile.p.shape:
        raise ValidationError("freqs must match the profile length")
    if np.any(f < 1.0):
        raise ValidationError("all frequencies must be >= 1 Hz")
    return float(np.std(np.log10(f) + profile.p))


def scaled_masked_mae(
    target: np.ndarray,
    prediction: np.ndarray,
    k: ScalingVector,
    mask,
) -> float:
    """Mean over masked-token elements of |k_j * (target - prediction)|.

    target, prediction: T x F token matrices where F = len(k) + 1 and the
    trailing column is the hour feature, weighted by k.hour_weight. Only
    tokens whose index is in ``mask`` contribute; every element of a masked
    token (hour included) counts toward the denominator.
    """
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 2:
        raise ValidationError("target and prediction must be equal-shape T x F")
    weights = k.token_weights()
    if t.shape[1] != weights.size:
        raise ValidationError(
            f"token dimension {t.shape[1]} does not match weights {weights.size}"
        )
    idx = np.asarray(sorted(set(int(i) for i in mask)), dtype=np.intp)
    if idx.size == 0:
        raise ValidationError("mask must contain at least one token index")
    if idx.min() < 0 or idx.max() >= t.shape[0]:
        raise ValidationError("mask index out of range")
    resid = (t[idx] - p[idx]) * weights
    return float(np.abs(resid).mean())


def synth_log_psd(model: AperiodicModel, freqs: np.ndarray) -> np.ndarray:
    """log10 PSD of a power-law background with Gaussian peaks.

    offset - beta * log10(f) + sum of height * exp(-(f - center)^2 / (2 w^2)).
    """
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f < 1.0):
        raise ValidationError("all frequencies must be >= 1 Hz")
    out = model.offset - model.beta * np.log10(f)
    for center, height, width in model.peaks:
        out = out + height * np.exp(-((f - center) ** 2) / (2.0 * width**2))
    return out
