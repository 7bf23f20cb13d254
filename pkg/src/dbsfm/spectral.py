"""Welch power spectral density estimation and log-power transform.

The default configuration (250 Hz sampling, 1 s segments, 50 % overlap,
raised-cosine taper) gives exactly 1 Hz bin spacing over 0..125 Hz, so a
2-minute window maps onto 126 PSD bins of which 1..124 Hz feed the token
features downstream.
"""

from dataclasses import dataclass

import numpy as np

from dbsfm.errors import ValidationError

MIN_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class WelchConfig:
    fs_hz: float = 250.0
    segment_len_samples: int = 250
    overlap_fraction: float = 0.5
    window: str = "hann"
    log_floor: float = 1e-12

    def __post_init__(self):
        if self.fs_hz <= 0:
            raise ValidationError("fs_hz must be positive")
        if self.segment_len_samples < 2 or self.segment_len_samples % 2 != 0:
            raise ValidationError("segment_len_samples must be an even integer >= 2")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValidationError("overlap_fraction must be in [0, 1)")
        if self.window != "hann":
            raise ValidationError(f"unsupported window {self.window!r}")
        if self.log_floor < 0:
            raise ValidationError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.segment_len_samples // 2 + 1

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.rfftfreq(self.segment_len_samples, d=1.0 / self.fs_hz)

    @property
    def step_samples(self) -> int:
        step = int(round(self.segment_len_samples * (1.0 - self.overlap_fraction)))
        return max(step, 1)


@dataclass(frozen=True)
class PsdEstimate:
    freqs: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        if self.freqs.shape != self.power.shape:
            raise ValidationError("freqs and power must have identical shape")


def _hann_periodic(n: int) -> np.ndarray:
    # periodic (DFT-even) raised cosine, the standard Welch taper
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(signal: np.ndarray, cfg: WelchConfig) -> PsdEstimate:
    """Averaged modified periodogram of a 1-d signal.

    One-sided density normalization: interior bins carry the doubling
    factor, DC and Nyquist do not. No detrending is applied; the estimate
    is deterministic for a given input.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("signal must be one-dimensional")
    nper = cfg.segment_len_samples
    if x.size < nper:
        raise ValidationError(
            f"signal has {x.size} samples, shorter than one segment ({nper})"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError("signal contains non-finite samples")

    step = cfg.step_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, nper)[::step]
    win = _hann_periodic(nper)
    spec = np.fft.rfft(frames * win, axis=1)
    mean_sq = np.mean(spec.real**2 + spec.imag**2, axis=0)

    # density scaling: divide by fs * sum(win^2), double interior bins
    power = mean_sq / (cfg.fs_hz * np.sum(win * win))
    power[1:-1] *= 2.0
    return PsdEstimate(freqs=cfg.freqs, power=power)


def log_power(psd: PsdEstimate, log_floor: float) -> np.ndarray:
    """Element-wise log10(power + floor); the floor keeps silence finite.

    Floors below 1e-12 (including 0) are clamped up to 1e-12.
    """
    if log_floor < 0:
        raise ValidationError("log_floor must be positive")
    floor = max(log_floor, MIN_LOG_FLOOR)
    return np.log10(psd.power + floor)
