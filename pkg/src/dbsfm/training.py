"""Optimization loops: AdamW, masked-autoencoder pre-training, and
supervised fine-tuning with early stopping.

All randomness (shuffling, mask draws, initialization) is derived from a
single integer seed through sha256-based stream splitting, so identical
(config, seed) pairs reproduce runs bit for bit on a given kernel backend.
"""

import csv
import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from dbsfm import autodiff as ad
from dbsfm import kernels, model
from dbsfm.errors import NumericError, ValidationError
from dbsfm.scaling import mean_log_profile, scaling_vector
from dbsfm.tokens import TOKENS_PER_SEQUENCE, SYMPTOM_COLUMNS, apply_mask


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of labels; independent of hash seeds."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.01


class OptimState:
    """First/second moment accumulators aligned with the parameter store."""

    def __init__(self, params):
        self.m = OrderedDict((n, np.zeros_like(a)) for n, a in params.items())
        self.v = OrderedDict((n, np.zeros_like(a)) for n, a in params.items())
        self.step = 0


def adamw_step(params, grads, state: OptimState, cfg: OptimConfig):
    """One decoupled-weight-decay Adam update, in place on the param arrays."""
    state.step += 1
    c1 = 1.0 - cfg.beta1**state.step
    c2 = 1.0 - cfg.beta2**state.step
    for name in state.m:
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for tensor {name!r}")
        kernels.adamw_update(
            params[name].ravel(),
            np.ascontiguousarray(grad, dtype=np.float64).ravel(),
            state.m[name].ravel(),
            state.v[name].ravel(),
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
            cfg.weight_decay,
            c1,
            c2,
        )
    return params, state


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epochs_run: int = 0
    stop_reason: str = ""
    n_steps: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                writer.writerow([i, repr(float(tr)), repr(float(va))])


@dataclass(frozen=True)
class PretrainHyper:
    epochs: int = 100
    batch_size: int = 50
    mask_ratio: float = 0.3
    seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)
    val_fraction: float = 0.1
    hour_weight: float = 0.0
    scale_loss: bool = True


@dataclass(frozen=True)
class FinetuneHyper:
    max_epochs: int = 100
    batch_size: int = 50
    patience: int = 5
    seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)
    val_fraction: float = 0.1
    freeze_backbone: bool = False


def split_train_val(sequences, val_fraction: float):
    """Per-subject split: floor(fraction * n) sequences, spread evenly over
    each subject's chronology, become validation; the rest train.

    Sequences are non-overlapping 30-minute blocks, so an interleaved split
    leaks nothing while keeping validation balanced across the day; a
    tail-only split would sample a single circadian phase. Subject order is
    sorted for stability.
    """
    by_subject = OrderedDict()
    for seq in sequences:
        by_subject.setdefault(seq.subject_id, []).append(seq)
    train, val = [], []
    for sid in sorted(by_subject):
        subject_seqs = by_subject[sid]
        n = len(subject_seqs)
        n_val = int(np.floor(val_fraction * n))
        val_positions = {((j + 1) * n) // (n_val + 1) for j in range(n_val)}
        train.extend(s for i, s in enumerate(subject_seqs) if i not in val_positions)
        val.extend(s for i, s in enumerate(subject_seqs) if i in val_positions)
    return train, val


def loss_weights_from_training_data(train_features, input_dim: int, hour_weight: float) -> np.ndarray:
    """Scaling weights fitted on training spectra only.

    train_features: (N, T, input_dim); the first input_dim - 1 columns are
    log-power bins at 1..input_dim-1 Hz, the last is the hour ordinal.
    """
    spectra = train_features[:, :, : input_dim - 1].reshape(-1, input_dim - 1)
    profile = mean_log_profile(spectra)
    freqs = np.arange(1, input_dim, dtype=np.float64)
    return scaling_vector(profile, freqs, hour_weight=hour_weight).token_weights()


def _stack_features(sequences) -> np.ndarray:
    return np.stack([seq.features for seq in sequences]).astype(np.float64)


def _masked_batch(features, mask_seeds, ratio):
    """Apply per-sequence masks; returns (masked features, bool mask)."""
    masked = np.empty_like(features)
    mask = np.zeros(features.shape[:2], dtype=bool)
    for i in range(features.shape[0]):
        masked[i], plan = apply_mask(features[i], ratio, mask_seeds[i])
        mask[i, list(plan.masked_indices)] = True
    return masked, mask


def _batch_slices(n: int, batch_size: int):
    return [slice(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def pretrain(sequences, model_cfg: model.ModelConfig, hyper: PretrainHyper):
    """Masked-autoencoder pre-training; returns (best params, report).

    Per epoch the training sequences are reshuffled and re-masked from
    seeded streams; validation uses a chronological per-subject split with
    masks fixed across epochs. The loss-scaling weights come from the
    training split only and stay constant. The returned store is the best
    validation checkpoint.
    """
    if not sequences:
        raise ValidationError("pretrain requires at least one sequence")
    train_seqs, val_seqs = split_train_val(sequences, hyper.val_fraction)
    if not train_seqs:
        raise ValidationError("validation split consumed every sequence")
    train_x = _stack_features(train_seqs)
    # degenerate small inputs: validate on the training set itself
    val_x = _stack_features(val_seqs) if val_seqs else train_x

    if hyper.scale_loss:
        weights = loss_weights_from_training_data(train_x, model_cfg.input_dim, hyper.hour_weight)
    else:
        weights = np.ones(model_cfg.input_dim)

    store = model.init_params(model_cfg, derive_seed(hyper.seed, "init"))
    trainable = store.subset_names("encoder") + store.subset_names("recon")
    tensors = model.as_param_tensors(store, trainable)
    state = OptimState({n: store[n] for n in trainable})
    optim = hyper.optim

    n_train = train_x.shape[0]
    val_masked, val_mask = _masked_batch(
        val_x, [derive_seed(hyper.seed, "valmask", i) for i in range(val_x.shape[0])], hyper.mask_ratio
    )

    report = TrainReport(stop_reason="max_epochs")
    best_val = np.inf
    best_store = store.copy()
    for epoch in range(1, hyper.epochs + 1):
        rng = np.random.default_rng(derive_seed(hyper.seed, "shuffle", epoch))
        perm = rng.permutation(n_train)
        epoch_features = train_x[perm]
        mask_seeds = [derive_seed(hyper.seed, "mask", epoch, int(i)) for i in perm]

        total_loss = 0.0
        for sl in _batch_slices(n_train, hyper.batch_size):
            target = epoch_features[sl]
            masked, mask = _masked_batch(target, mask_seeds[sl], hyper.mask_ratio)
            for name in trainable:
                tensors[name].grad = None
            latent = model.encoder_graph(masked, tensors, model_cfg)
            recon = model.reconstruction_graph(latent, tensors)
            loss = ad.masked_wmae_loss(recon, target, weights, mask)
            grads = model.backward(loss, {n: tensors[n] for n in trainable})
            adamw_step({n: store[n] for n in trainable}, grads, state, optim)
            report.n_steps += 1
            total_loss += float(loss.data) * target.shape[0]

        report.train_loss.append(total_loss / n_train)
        report.val_loss.append(
            _eval_masked_loss(val_masked, val_x, val_mask, weights, tensors, model_cfg, hyper.batch_size)
        )
        report.epochs_run = epoch
        if report.val_loss[-1] < best_val:
            best_val = report.val_loss[-1]
            best_store = store.copy()
    return best_store, report


def _eval_masked_loss(masked, target, mask, weights, tensors, model_cfg, batch_size) -> float:
    total = 0.0
    n = target.shape[0]
    with ad.no_grad():
        for sl in _batch_slices(n, batch_size):
            latent = model.encoder_graph(masked[sl], tensors, model_cfg)
            recon = model.reconstruction_graph(latent, tensors)
            loss = ad.masked_wmae_loss(recon, target[sl], weights, mask[sl])
            total += float(loss.data) * (sl.stop - sl.start)
    return total / n


def _eval_mse(features, labels, tensors, model_cfg, symptom, batch_size) -> float:
    total = 0.0
    n = features.shape[0]
    with ad.no_grad():
        for sl in _batch_slices(n, batch_size):
            pred = model.regression_graph(
                model.encoder_graph(features[sl], tensors, model_cfg), tensors, symptom
            )
            loss = ad.mse_loss(pred, labels[sl][:, :, None])
            total += float(loss.data) * (sl.stop - sl.start)
    return total / n


def finetune(
    init_store: model.ParamStore,
    sequences,
    model_cfg: model.ModelConfig,
    hyper: FinetuneHyper,
    symptom: str,
):
    """Supervised per-token regression for one symptom.

    Trains the symptom's MLP head, and by default the encoder with it, under
    mean squared error against the per-token labels. Stops once validation
    loss has gone ``patience`` consecutive epochs without a new best (the
    stopping epoch itself still runs); returns the best-validation params.
    """
    if symptom not in SYMPTOM_COLUMNS:
        raise ValidationError(f"unknown symptom {symptom!r}")
    if not sequences:
        raise ValidationError("finetune requires at least one sequence")
    if any(seq.labels is None for seq in sequences):
        raise ValidationError("every sequence needs labels for fine-tuning")
    if init_store["proj.w"].shape != (model_cfg.input_dim, model_cfg.d_model):
        raise ValidationError("checkpoint does not match the model configuration")

    col = SYMPTOM_COLUMNS.index(symptom)
    train_seqs, val_seqs = split_train_val(sequences, hyper.val_fraction)
    train_x = _stack_features(train_seqs)
    train_y = np.stack([seq.labels[:, col] for seq in train_seqs]).astype(np.float64)
    if val_seqs:
        val_x = _stack_features(val_seqs)
        val_y = np.stack([seq.labels[:, col] for seq in val_seqs]).astype(np.float64)
    else:
        val_x, val_y = train_x, train_y

    store = init_store.copy()
    head_names = store.subset_names(f"head.{symptom}")
    trainable = head_names if hyper.freeze_backbone else store.subset_names("encoder") + head_names
    tensors = model.as_param_tensors(store, trainable)
    state = OptimState({n: store[n] for n in trainable})

    n_train = train_x.shape[0]
    report = TrainReport(stop_reason="max_epochs")
    best_val = np.inf
    best_epoch = 0
    best_store = store.copy()
    for epoch in range(1, hyper.max_epochs + 1):
        rng = np.random.default_rng(derive_seed(hyper.seed, "ft-shuffle", symptom, epoch))
        perm = rng.permutation(n_train)
        total_loss = 0.0
        for sl in _batch_slices(n_train, hyper.batch_size):
            idx = perm[sl]
            for name in trainable:
                tensors[name].grad = None
            pred = model.regression_graph(
                model.encoder_graph(train_x[idx], tensors, model_cfg), tensors, symptom
            )
            loss = ad.mse_loss(pred, train_y[idx][:, :, None])
            grads = model.backward(loss, {n: tensors[n] for n in trainable})
            adamw_step({n: store[n] for n in trainable}, grads, state, hyper.optim)
            report.n_steps += 1
            total_loss += float(loss.data) * idx.size

        report.train_loss.append(total_loss / n_train)
        report.val_loss.append(_eval_mse(val_x, val_y, tensors, model_cfg, symptom, hyper.batch_size))
        report.epochs_run = epoch
        if report.val_loss[-1] < best_val:
            best_val = report.val_loss[-1]
            best_epoch = epoch
            best_store = store.copy()
        elif epoch - best_epoch > hyper.patience:
            report.stop_reason = "early_stop"
            break
    return best_store, report


def make_pretrain_hyper(seed: int, **overrides) -> PretrainHyper:
    return replace(PretrainHyper(seed=seed), **overrides)
