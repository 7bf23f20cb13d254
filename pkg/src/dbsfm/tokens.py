"""Token and sequence assembly from continuous recordings.

A token is one 2-minute window: 124 log-power bins (1..124 Hz) plus the
local hour of day as an ordinal 0..23, so 125 features total. Fifteen
consecutive tokens form one 30-minute sequence; wearable labels, when
present, attach per token on the same 2-minute grid.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from dbsfm.errors import AlignmentError, ValidationError
from dbsfm.spectral import WelchConfig, log_power, welch_psd

TOKEN_SECONDS = 120
TOKENS_PER_SEQUENCE = 15
LABEL_ALIGN_TOL_S = 1
SYMPTOM_COLUMNS = ("bradykinesia", "dyskinesia")


@dataclass(frozen=True)
class Recording:
    """Continuous single-channel signal with its wall-clock anchor."""

    samples: np.ndarray
    fs_hz: float
    start_unix_s: int
    timezone_offset_s: int
    subject_id: str

    def __post_init__(self):
        if self.samples.ndim != 1:
            raise ValidationError("recording samples must be one-dimensional")
        if self.fs_hz <= 0:
            raise ValidationError("sampling rate must be positive")


@dataclass(frozen=True)
class LabelSeries:
    """Per-window symptom estimates on the 2-minute grid."""

    t_unix_s: np.ndarray
    values: np.ndarray  # (n, 2): bradykinesia, dyskinesia

    def __post_init__(self):
        if self.values.shape != (self.t_unix_s.size, len(SYMPTOM_COLUMNS)):
            raise ValidationError("labels must be (n, 2) aligned with timestamps")


@dataclass(frozen=True)
class Token:
    features: np.ndarray  # (125,)
    t_start_unix_s: int
    subject_id: str


@dataclass(frozen=True)
class Sequence:
    """Fifteen consecutive gap-free tokens plus optional per-token labels."""

    features: np.ndarray  # (15, 125)
    t_start_unix_s: np.ndarray  # (15,)
    subject_id: str
    labels: Optional[np.ndarray] = None  # (15, 2) or None

    def __post_init__(self):
        if self.features.shape[0] != TOKENS_PER_SEQUENCE:
            raise ValidationError(f"sequence must hold {TOKENS_PER_SEQUENCE} tokens")
        steps = np.diff(self.t_start_unix_s)
        if steps.size and not np.all(steps == TOKEN_SECONDS):
            raise ValidationError("token starts must advance by exactly 120 s")
        if self.labels is not None and self.labels.shape != (TOKENS_PER_SEQUENCE, 2):
            raise ValidationError("labels must be (15, 2)")

    def token(self, i: int) -> Token:
        return Token(
            features=self.features[i],
            t_start_unix_s=int(self.t_start_unix_s[i]),
            subject_id=self.subject_id,
        )


@dataclass(frozen=True)
class MaskPlan:
    masked_indices: tuple
    seed_used: int


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def hour_feature(t_unix_s: int, timezone_offset_s: int = 0) -> int:
    """Local hour of day, ordinal 0..23."""
    return int(((int(t_unix_s) + int(timezone_offset_s)) % 86400) // 3600)


def token_features(window: np.ndarray, t_start_unix_s: int, timezone_offset_s: int, cfg: WelchConfig) -> np.ndarray:
    """125-vector for one 2-minute window: log-power bins 1..124 plus hour."""
    lp = log_power(welch_psd(window, cfg), cfg.log_floor)
    out = np.empty(cfg.n_bins - 1, dtype=np.float64)
    out[:-1] = lp[1:-1]  # drop DC and Nyquist
    out[-1] = float(hour_feature(t_start_unix_s, timezone_offset_s))
    return out


def tokenize(recording: Recording, labels: Optional[LabelSeries], cfg: WelchConfig) -> list:
    """Cut a recording into non-overlapping 30-minute sequences of tokens.

    Windows shorter than a sequence at the tail are dropped. Continuous
    arrays are gap-free by construction, so no gap screening is needed here.
    When a label series is given, every token start must match a label
    timestamp within +-1 s or an AlignmentError is raised.
    """
    samples = np.asarray(recording.samples, dtype=np.float64)
    window_len = int(round(TOKEN_SECONDS * recording.fs_hz))
    n_windows = samples.size // window_len
    n_sequences = n_windows // TOKENS_PER_SEQUENCE
    if n_sequences == 0:
        return []

    label_lookup = {}
    if labels is not None:
        label_lookup = {int(t): i for i, t in enumerate(labels.t_unix_s)}

    sequences = []
    for s in range(n_sequences):
        feats = np.empty((TOKENS_PER_SEQUENCE, cfg.n_bins - 1), dtype=np.float64)
        starts = np.empty(TOKENS_PER_SEQUENCE, dtype=np.int64)
        seq_labels = np.empty((TOKENS_PER_SEQUENCE, 2), dtype=np.float64) if labels is not None else None
        for j in range(TOKENS_PER_SEQUENCE):
            w = s * TOKENS_PER_SEQUENCE + j
            t_start = recording.start_unix_s + w * TOKEN_SECONDS
            window = samples[w * window_len : (w + 1) * window_len]
            feats[j] = token_features(window, t_start, recording.timezone_offset_s, cfg)
            starts[j] = t_start
            if seq_labels is not None:
                row = None
                for dt in (0, -LABEL_ALIGN_TOL_S, LABEL_ALIGN_TOL_S):
                    row = label_lookup.get(t_start + dt)
                    if row is not None:
                        break
                if row is None:
                    raise AlignmentError(
                        f"no label within +-{LABEL_ALIGN_TOL_S} s of window start {t_start}"
                    )
                seq_labels[j] = labels.values[row]
        sequences.append(
            Sequence(
                features=feats,
                t_start_unix_s=starts,
                subject_id=recording.subject_id,
                labels=seq_labels,
            )
        )
    return sequences


def apply_mask(features: np.ndarray, ratio: float, seed: int):
    """Zero a uniformly drawn subset of token rows; returns (masked, plan).

    The number of masked tokens is round-half-up(ratio * n_tokens); the
    input is left untouched. Selection is uniform without replacement and
    fully determined by the integer seed.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError("mask ratio must be in [0, 1]")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValidationError("features must be (tokens, features)")
    n_tokens = feats.shape[0]
    n_masked = round_half_up(ratio * n_tokens)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n_tokens, size=n_masked, replace=False)) if n_masked else np.empty(0, dtype=np.intp)
    masked = feats.copy()
    masked[idx] = 0.0
    return masked, MaskPlan(masked_indices=tuple(int(i) for i in idx), seed_used=int(seed))
