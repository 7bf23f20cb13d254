"""Leave-one-subject-out evaluation: fold driver, Pearson metric, and
embedding export.

Each fold rebuilds everything without the held-out subject: loss-scaling
weights, pre-training, and fine-tuning all see only the other subjects'
data, so no statistic or parameter is ever fit on held-out data. Fold
failures are recorded and the remaining folds continue.
"""

import csv
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from dbsfm import autodiff as ad
from dbsfm import model
from dbsfm.errors import UndefinedCorrelationError, ValidationError
from dbsfm.tokens import SYMPTOM_COLUMNS
from dbsfm.training import (
    FinetuneHyper,
    PretrainHyper,
    TrainReport,
    derive_seed,
    finetune,
    pretrain,
)


def pearson_r(x, y) -> float:
    """Sample Pearson correlation; errors on constant input."""
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ValidationError("pearson_r needs two equal-length vectors")
    if xv.size < 2:
        raise ValidationError("pearson_r needs at least 2 points")
    xc = xv - xv.mean()
    yc = yv - yv.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    return float((xc * yc).sum() / (sx * sy))


def predict_tokens(store, cfg, sequences, symptom, batch_size: int = 50):
    """Per-token predictions over sequences, chronological order preserved.

    Returns (timestamps, predictions); sequences need not carry labels.
    """
    times = np.concatenate([seq.t_start_unix_s for seq in sequences])
    preds = []
    with ad.no_grad():
        tensors = model.as_param_tensors(store)
        for lo in range(0, len(sequences), batch_size):
            batch = sequences[lo : lo + batch_size]
            feats = np.stack([seq.features for seq in batch])
            out = model.regression_graph(model.encoder_graph(feats, tensors, cfg), tensors, symptom)
            preds.append(out.data[:, :, 0].ravel())
    return times, np.concatenate(preds)


@dataclass
class FoldResult:
    held_out_subject: str
    r: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)  # symptom -> (t, true, pred)
    pretrain_report: Optional[TrainReport] = None
    finetune_reports: dict = field(default_factory=dict)
    pretrained: Optional[model.ParamStore] = None
    finetuned: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class CvSummary:
    folds: list
    mean_r: dict
    std_r: dict

    @staticmethod
    def from_folds(folds) -> "CvSummary":
        mean_r, std_r = {}, {}
        for symptom in SYMPTOM_COLUMNS:
            values = [f.r[symptom] for f in folds if not f.failed and symptom in f.r]
            if values:
                mean_r[symptom] = float(np.mean(values))
                std_r[symptom] = float(np.std(values))
        return CvSummary(folds=list(folds), mean_r=mean_r, std_r=std_r)

    @property
    def n_failed(self) -> int:
        return sum(1 for f in self.folds if f.failed)


def run_fold(
    sequences_by_subject,
    held_out: str,
    model_cfg: model.ModelConfig,
    pre_hyper: PretrainHyper,
    ft_hyper: FinetuneHyper,
    symptoms=SYMPTOM_COLUMNS,
) -> FoldResult:
    """Train with one subject excluded and evaluate every one of its tokens."""
    train_seqs = []
    for sid in sorted(sequences_by_subject):
        if sid != held_out:
            train_seqs.extend(sequences_by_subject[sid])
    if not train_seqs:
        raise ValidationError("no training subjects left for this fold")

    fold_pre = replace(pre_hyper, seed=derive_seed(pre_hyper.seed, "fold", held_out))
    pretrained, pre_report = pretrain(train_seqs, model_cfg, fold_pre)

    result = FoldResult(
        held_out_subject=held_out, pretrain_report=pre_report, pretrained=pretrained
    )
    held_seqs = sequences_by_subject[held_out]
    for symptom in symptoms:
        fold_ft = replace(ft_hyper, seed=derive_seed(ft_hyper.seed, "fold", held_out, symptom))
        tuned, ft_report = finetune(pretrained, train_seqs, model_cfg, fold_ft, symptom)
        result.finetune_reports[symptom] = ft_report
        result.finetuned[symptom] = tuned

        times, preds = predict_tokens(tuned, model_cfg, held_seqs, symptom)
        col = SYMPTOM_COLUMNS.index(symptom)
        truth = np.concatenate([seq.labels[:, col] for seq in held_seqs])
        result.predictions[symptom] = (times, truth, preds)
        result.r[symptom] = pearson_r(truth, preds)
    return result


def run_loso(
    sequences_by_subject,
    model_cfg: model.ModelConfig,
    pre_hyper: PretrainHyper,
    ft_hyper: FinetuneHyper,
    symptoms=SYMPTOM_COLUMNS,
) -> CvSummary:
    """Full leave-one-subject-out sweep; failed folds are recorded, not fatal."""
    if len(sequences_by_subject) < 2:
        raise ValidationError("leave-one-subject-out needs at least 2 subjects")
    folds = []
    for held_out in sorted(sequences_by_subject):
        try:
            folds.append(
                run_fold(sequences_by_subject, held_out, model_cfg, pre_hyper, ft_hyper, symptoms)
            )
        except Exception as exc:  # fold isolation: keep the sweep alive
            folds.append(FoldResult(held_out_subject=held_out, error=f"{type(exc).__name__}: {exc}"))
    return CvSummary.from_folds(folds)


def shuffle_labels(sequences_by_subject, seed: int):
    """Permutation control: shuffle each subject's labels across its tokens.

    Returns a new mapping with identical features and destroyed label-time
    alignment; used to establish the null distribution of the evaluation.
    """
    out = OrderedDict()
    for sid in sequences_by_subject:
        seqs = sequences_by_subject[sid]
        if any(seq.labels is None for seq in seqs):
            raise ValidationError("cannot shuffle labels of unlabeled sequences")
        labels = np.concatenate([seq.labels for seq in seqs], axis=0)
        rng = np.random.default_rng(derive_seed(seed, "shuffle-labels", sid))
        labels = labels[rng.permutation(labels.shape[0])]
        shuffled = []
        offset = 0
        for seq in seqs:
            n = seq.features.shape[0]
            shuffled.append(replace(seq, labels=labels[offset : offset + n].copy()))
            offset += n
        out[sid] = shuffled
    return out


def export_embeddings(store, cfg, sequences, out_path, include_cls: bool = False) -> int:
    """Write one CSV row per token: identity, timestamp, 64 embedding values,
    labels when present. With include_cls, one extra row per sequence carries
    the CLS embedding tagged position=CLS. Returns the data row count."""
    header = (
        ["subject_id", "t_start_unix_s", "position"]
        + [f"e{i:02d}" for i in range(cfg.d_model)]
        + list(SYMPTOM_COLUMNS)
    )
    rows_written = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        with ad.no_grad():
            tensors = model.as_param_tensors(store)
            for lo in range(0, len(sequences), 50):
                batch = sequences[lo : lo + 50]
                feats = np.stack([seq.features for seq in batch])
                latent = model.encoder_graph(feats, tensors, cfg).data
                for seq, emb in zip(batch, latent):
                    if include_cls:
                        writer.writerow(
                            [seq.subject_id, int(seq.t_start_unix_s[0]), "CLS"]
                            + [repr(float(v)) for v in emb[0]]
                            + ["", ""]
                        )
                        rows_written += 1
                    for j in range(seq.features.shape[0]):
                        labels = (
                            [repr(float(v)) for v in seq.labels[j]] if seq.labels is not None else ["", ""]
                        )
                        writer.writerow(
                            [seq.subject_id, int(seq.t_start_unix_s[j]), j]
                            + [repr(float(v)) for v in emb[j + 1]]
                            + labels
                        )
                        rows_written += 1
    return rows_written
