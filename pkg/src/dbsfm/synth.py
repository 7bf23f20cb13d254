"""Synthetic chronic field-potential cohort with planted symptom structure.

Each subject is a 1/f^beta log spectrum with Gaussian peaks. Per 2-minute
window the driving peaks fluctuate (an i.i.d. latent driver per symptom)
and one band's peak follows a circadian cosine in the local hour. Symptom
labels are a linear readout of the window's standardized band log-power
plus Gaussian noise, so the best attainable Pearson correlation is the
closed form gain / sqrt(gain^2 + noise_sd^2).

Signals are synthesized per window by inverse FFT with deterministic
amplitudes from the target spectrum and i.i.d. uniform phases; windows are
independent, which the PSD-token pipeline never observes.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dbsfm.errors import ValidationError
from dbsfm.scaling import AperiodicModel, synth_log_psd
from dbsfm.tokens import TOKEN_SECONDS, LabelSeries, Recording, hour_feature
from dbsfm.training import derive_seed

FS_HZ = 250.0
WINDOW_SAMPLES = int(TOKEN_SECONDS * FS_HZ)  # 30000
TOKEN_FREQS = np.arange(1.0, 125.0)
# 2023-11-15T00:00:00Z, a midnight so hour features span full days cleanly
DEFAULT_START_UNIX_S = 1_700_006_400


@dataclass(frozen=True)
class CircadianSpec:
    band_hz: tuple
    depth: float
    acrophase_hour: float

    def __post_init__(self):
        if not 0.0 <= self.depth < 1.0:
            raise ValidationError("circadian depth must be in [0, 1)")


@dataclass(frozen=True)
class LabelModel:
    band_hz: tuple
    gain: float
    noise_sd: float
    driver_sd: float = 0.3

    def __post_init__(self):
        lo, hi = self.band_hz
        if not (0 < lo < hi < 125):
            raise ValidationError("band must lie within (0, 125) Hz")
        if self.noise_sd < 0 or self.driver_sd < 0:
            raise ValidationError("noise_sd and driver_sd must be >= 0")

    def ceiling_r(self) -> float:
        """Best attainable |Pearson r| between label and band log-power."""
        denom = np.hypot(self.gain, self.noise_sd)
        return abs(self.gain) / denom if denom > 0 else 0.0


@dataclass
class SubjectSpec:
    subject_id: str
    beta: float
    offset: float
    peaks: tuple  # of (center_hz, height_log10, width_hz)
    circadian: Optional[CircadianSpec]
    label_models: "OrderedDict[str, LabelModel]"
    days: float
    seed: int
    start_unix_s: int = DEFAULT_START_UNIX_S
    timezone_offset_s: int = 0

    @property
    def n_windows(self) -> int:
        return int(round(self.days * 86400 / TOKEN_SECONDS))


def _hann_dtft_power(offsets_hz: np.ndarray, nper: int, fs_hz: float) -> np.ndarray:
    """|DTFT of the periodic Hann taper|^2 at arbitrary frequency offsets.

    Closed form via Dirichlet kernels: the taper is 0.5 minus two complex
    exponentials at +-fs/nper, so its transform is a three-term combination
    of geometric sums.
    """

    def geometric(nu):
        theta = 2.0 * np.pi * nu / fs_hz
        near_zero = np.isclose(np.mod(theta, 2.0 * np.pi), 0.0, atol=1e-12) | np.isclose(
            np.mod(theta, 2.0 * np.pi), 2.0 * np.pi, atol=1e-12
        )
        safe = np.where(near_zero, 1.0, theta)
        num = 1.0 - np.exp(-1j * safe * nper)
        den = 1.0 - np.exp(-1j * safe)
        return np.where(near_zero, nper + 0j, num / den)

    f0 = fs_hz / nper
    w = 0.5 * geometric(offsets_hz) - 0.25 * geometric(offsets_hz - f0) - 0.25 * geometric(offsets_hz + f0)
    return (w * w.conj()).real


_RESPONSE_CACHE = {}


def welch_response_matrix(n_samples: int, fs_hz: float = FS_HZ, nper: int = 250) -> np.ndarray:
    """Linear map from a fine one-sided density (rFFT bins of n_samples,
    DC excluded by convention) to the expected Welch density at 1..124 Hz.

    Rows are normalized so a flat density maps to itself exactly; the matrix
    captures the taper's spectral leakage, which otherwise biases steep
    power-law bins and sharp peak flanks.
    """
    key = (int(n_samples), float(fs_hz), int(nper))
    if key not in _RESPONSE_CACHE:
        nu_fine = np.fft.rfftfreq(n_samples, d=1.0 / fs_hz)
        rows = []
        for m in TOKEN_FREQS:
            gains = _hann_dtft_power(m - nu_fine, nper, fs_hz) + _hann_dtft_power(
                m + nu_fine, nper, fs_hz
            )
            gains[0] = 0.0  # synthesis never places power at DC
            rows.append(gains / gains.sum())
        _RESPONSE_CACHE[key] = np.asarray(rows)
    return _RESPONSE_CACHE[key]


_BIN_SOLVE_CACHE = {}


def _bin_solver(n_samples: int, fs_hz: float):
    """(bin response M, its inverse, fine-bin assignment) for this geometry.

    The synthesis spectrum is piecewise constant over 1 Hz-wide blocks
    centered on the integer bins (edge blocks absorb the tails toward DC
    and Nyquist; the DC line itself carries no power). The 124 x 124 bin
    response M = R @ G is then exact, and solving M q = p gives block
    powers q whose expected Welch view equals the target p identically.
    """
    key = (int(n_samples), float(fs_hz))
    if key not in _BIN_SOLVE_CACHE:
        response = welch_response_matrix(n_samples, fs_hz)
        nu_fine = np.fft.rfftfreq(n_samples, d=1.0 / fs_hz)
        assign = np.clip(np.rint(nu_fine), TOKEN_FREQS[0], TOKEN_FREQS[-1]).astype(np.intp) - 1
        group = np.zeros((nu_fine.size, TOKEN_FREQS.size))
        group[np.arange(1, nu_fine.size), assign[1:]] = 1.0  # DC line excluded
        m = response @ group
        _BIN_SOLVE_CACHE[key] = (m, np.linalg.inv(m), assign)
    return _BIN_SOLVE_CACHE[key]


def corrected_bin_powers(
    target_power: np.ndarray, n_samples: int, fs_hz: float = FS_HZ, refine_steps: int = 100
) -> np.ndarray:
    """Per-bin synthesis powers whose expected Welch estimate is the target.

    Accepts (..., 124) linear power. When the direct solve is nonnegative
    the result is exact; rows where clipping was needed (targets steeper or
    sharper than the taper response can realize) get multiplicative
    Richardson-Lucy refinement toward the best nonnegative fit, which
    spreads the irreducible error instead of ringing.
    """
    m, inv, _ = _bin_solver(n_samples, fs_hz)
    p = np.atleast_2d(np.asarray(target_power, dtype=np.float64))
    q = p @ inv.T
    bad = (q < 0).any(axis=1)
    q = np.maximum(q, 0.0)
    if bad.any() and refine_steps > 0:
        col_sum = m.sum(axis=0)
        qb, pb = q[bad], p[bad]
        for _ in range(refine_steps):
            est = qb @ m.T
            qb = qb * ((pb / np.maximum(est, 1e-300)) @ m) / col_sum
        q[bad] = qb
    return q.reshape(np.shape(target_power))


def _corrected_fine_density(target: np.ndarray, n_samples: int, fs_hz: float) -> np.ndarray:
    q = corrected_bin_powers(10.0**target, n_samples, fs_hz)
    _, _, assign = _bin_solver(n_samples, fs_hz)
    density = q[assign]
    density[0] = 0.0
    return density


def synth_segment(
    target_log_psd: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
    fs_hz: float = FS_HZ,
    correct_response: bool = True,
) -> np.ndarray:
    """Random-phase time series whose Welch PSD tracks a 1..124 Hz log target.

    Amplitudes per rFFT bin are deterministic. By default the synthesis
    spectrum is piecewise constant over 1 Hz blocks with block powers
    solved against the Welch taper's leakage response, so the expected
    analyzed spectrum (not just the synthesis spectrum) equals the target
    at every integer bin. With correct_response=False the raw target is
    interpolated in (log10 f, log10 P) space instead. Only the phases are
    random. DC is zero; the Nyquist bin keeps its proper (undoubled)
    one-sided weight.
    """
    target = np.asarray(target_log_psd, dtype=np.float64)
    if target.shape != TOKEN_FREQS.shape:
        raise ValidationError("target must cover the 1..124 Hz bins")
    if not np.all(np.isfinite(target)):
        raise ValidationError("target log PSD must be finite")
    if n_samples % 2 != 0:
        raise ValidationError("n_samples must be even")

    if correct_response:
        density = _corrected_fine_density(target, n_samples, fs_hz)
    else:
        f_fine = np.fft.rfftfreq(n_samples, d=1.0 / fs_hz)
        log_f = np.log10(np.clip(f_fine, TOKEN_FREQS[0], TOKEN_FREQS[-1]))
        density = 10.0 ** np.interp(log_f, np.log10(TOKEN_FREQS), target)

    amp = np.sqrt(density * fs_hz * n_samples / 2.0)
    amp[-1] = np.sqrt(density[-1] * fs_hz * n_samples)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=amp.size)
    spec = amp * np.exp(1j * phases)
    spec[0] = 0.0
    spec[-1] = amp[-1] if phases[-1] < np.pi else -amp[-1]
    return np.fft.irfft(spec, n_samples)


def _window_peak_sets(spec: SubjectSpec):
    """Per-window peak tuples and driver draws; the deterministic plan.

    Returns (hours, peaks_per_window, drivers) where drivers maps symptom
    name to its (n_windows,) standard-normal latent series.
    """
    n = spec.n_windows
    hours = np.array(
        [hour_feature(spec.start_unix_s + w * TOKEN_SECONDS, spec.timezone_offset_s) for w in range(n)]
    )
    drivers = {
        name: np.random.default_rng(derive_seed(spec.seed, "driver", name)).standard_normal(n)
        for name in spec.label_models
    }

    def in_band(center, band):
        lo, hi = band
        return lo <= center <= hi

    peaks_per_window = []
    for w in range(n):
        peaks = []
        for center, height, width in spec.peaks:
            h = height
            if spec.circadian is not None and in_band(center, spec.circadian.band_hz):
                phase = 2.0 * np.pi * (hours[w] - spec.circadian.acrophase_hour) / 24.0
                h = h * (1.0 + spec.circadian.depth * np.cos(phase))
            for name, lm in spec.label_models.items():
                if in_band(center, lm.band_hz):
                    h = h + lm.driver_sd * drivers[name][w]
            peaks.append((center, h, width))
        peaks_per_window.append(tuple(peaks))
    return hours, peaks_per_window, drivers


def window_targets(spec: SubjectSpec) -> np.ndarray:
    """(n_windows, 124) matrix of per-window target log10 PSDs."""
    _, peaks_per_window, _ = _window_peak_sets(spec)
    out = np.empty((spec.n_windows, TOKEN_FREQS.size))
    for w, peaks in enumerate(peaks_per_window):
        out[w] = synth_log_psd(
            AperiodicModel(beta=spec.beta, offset=spec.offset, peaks=peaks), TOKEN_FREQS
        )
    return out


def band_log_power(targets: np.ndarray, band_hz) -> np.ndarray:
    """Mean log10 PSD over the integer bins inside [lo, hi] Hz."""
    lo, hi = band_hz
    cols = (TOKEN_FREQS >= lo) & (TOKEN_FREQS <= hi)
    if not cols.any():
        raise ValidationError(f"band {band_hz} contains no 1..124 Hz bins")
    return targets[:, cols].mean(axis=1)


def subject_truth(spec: SubjectSpec) -> dict:
    """Ground-truth internals: hours, targets, and per-symptom band powers.

    Used by tests and diagnostics to check planted correlations against the
    generating formulas; never consumed by the training pipeline.
    """
    hours, _, drivers = _window_peak_sets(spec)
    targets = window_targets(spec)
    bands = {name: band_log_power(targets, lm.band_hz) for name, lm in spec.label_models.items()}
    return {"hours": hours, "targets": targets, "band_log_power": bands, "drivers": drivers}


def subject_labels(spec: SubjectSpec) -> LabelSeries:
    """Wearable-like 2-minute label series with planted correlations."""
    targets = window_targets(spec)
    n = spec.n_windows
    t = spec.start_unix_s + TOKEN_SECONDS * np.arange(n, dtype=np.int64)
    values = np.empty((n, len(spec.label_models)))
    for j, (name, lm) in enumerate(spec.label_models.items()):
        bp = band_log_power(targets, lm.band_hz)
        sd = bp.std()
        z = (bp - bp.mean()) / sd if sd > 0 else np.zeros_like(bp)
        noise = np.random.default_rng(derive_seed(spec.seed, "labelnoise", name)).standard_normal(n)
        values[:, j] = lm.gain * z + lm.noise_sd * noise
    return LabelSeries(t_unix_s=t, values=values)


def subject_recording(spec: SubjectSpec) -> Recording:
    """Full continuous signal, float32, one window at a time."""
    targets = window_targets(spec)
    samples = np.empty(spec.n_windows * WINDOW_SAMPLES, dtype=np.float32)
    for w in range(spec.n_windows):
        rng = np.random.default_rng(derive_seed(spec.seed, "phase", w))
        seg = synth_segment(targets[w], WINDOW_SAMPLES, rng)
        samples[w * WINDOW_SAMPLES : (w + 1) * WINDOW_SAMPLES] = seg.astype(np.float32)
    return Recording(
        samples=samples,
        fs_hz=FS_HZ,
        start_unix_s=spec.start_unix_s,
        timezone_offset_s=spec.timezone_offset_s,
        subject_id=spec.subject_id,
    )


def synth_subject(spec: SubjectSpec):
    """(recording, labels) for one subject."""
    return subject_recording(spec), subject_labels(spec)


class SynthDataset:
    """Cohort of subject specs; recordings and labels generate on demand."""

    def __init__(self, specs):
        self._specs = OrderedDict((s.subject_id, s) for s in specs)

    @property
    def subject_ids(self):
        return list(self._specs)

    def spec(self, subject_id: str) -> SubjectSpec:
        return self._specs[subject_id]

    def recording(self, subject_id: str) -> Recording:
        return subject_recording(self._specs[subject_id])

    def labels(self, subject_id: str) -> LabelSeries:
        return subject_labels(self._specs[subject_id])


BRADY_BAND = (15.0, 25.0)
DYSK_BAND = (55.0, 75.0)


def default_cohort(n_subjects: int = 8, days: float = 2.0, master_seed: int = 12345) -> SynthDataset:
    """Desk-scale cohort: per-subject power-law exponents in [1, 2], a beta
    peak near 20 Hz driving bradykinesia (circadian-modulated) and a gamma
    peak near 65 Hz driving dyskinesia.

    Bradykinesia labels have a 0.8 correlation ceiling, dyskinesia 0.6.
    """
    if n_subjects < 2:
        raise ValidationError("leave-one-subject-out needs at least 2 subjects")
    specs = []
    for i in range(n_subjects):
        sid = f"S{i + 1:02d}"
        rng = np.random.default_rng(derive_seed(master_seed, "subject", sid))
        specs.append(
            SubjectSpec(
                subject_id=sid,
                beta=float(rng.uniform(1.0, 2.0)),
                offset=float(rng.uniform(1.8, 2.2)),
                peaks=(
                    (float(rng.uniform(18.0, 22.0)), 1.0, 2.0),
                    (float(rng.uniform(62.0, 68.0)), 0.8, 3.0),
                ),
                circadian=CircadianSpec(
                    band_hz=BRADY_BAND,
                    depth=0.4,
                    acrophase_hour=float(rng.uniform(13.0, 17.0)),
                ),
                label_models=OrderedDict(
                    [
                        ("bradykinesia", LabelModel(band_hz=BRADY_BAND, gain=1.0, noise_sd=0.75)),
                        ("dyskinesia", LabelModel(band_hz=DYSK_BAND, gain=1.0, noise_sd=4.0 / 3.0)),
                    ]
                ),
                days=days,
                seed=derive_seed(master_seed, "subject-seed", sid),
            )
        )
    return SynthDataset(specs)
