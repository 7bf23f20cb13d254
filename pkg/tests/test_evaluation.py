"""Pearson metric, fold isolation, leakage guard, and embedding export."""

import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbsfm import evaluation as ev
from dbsfm.errors import UndefinedCorrelationError, ValidationError
from dbsfm.model import ModelConfig, init_params
from dbsfm.training import FinetuneHyper, PretrainHyper

FAST_PRE = PretrainHyper(epochs=2, batch_size=16, seed=7)
FAST_FT = FinetuneHyper(max_epochs=3, patience=5, batch_size=16, seed=7)
MODEL = ModelConfig()


def test_pearson_identity_and_reversal():
    assert ev.pearson_r([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert ev.pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_pearson_hand_value():
    assert ev.pearson_r([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(UndefinedCorrelationError):
        ev.pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        ev.pearson_r([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        ev.pearson_r([1.0], [2.0])


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.1, 50.0),
    st.floats(-20.0, 20.0),
    st.booleans(),
)
def test_pearson_affine_invariance(a, b, negate):
    x = np.random.default_rng(3).normal(size=64)
    scale = -a if negate else a
    r = ev.pearson_r(x, scale * x + b)
    assert r == pytest.approx(-1.0 if negate else 1.0, abs=1e-12)


def test_run_loso_two_subjects(mini_cohort_sequences):
    two = {sid: mini_cohort_sequences[sid] for sid in ["S01", "S02"]}
    summary = ev.run_loso(two, MODEL, FAST_PRE, FAST_FT)
    assert [f.held_out_subject for f in summary.folds] == ["S01", "S02"]
    assert summary.n_failed == 0
    for fold in summary.folds:
        assert set(fold.r) == {"bradykinesia", "dyskinesia"}
        for r in fold.r.values():
            assert -1.0 <= r <= 1.0
        times, truth, pred = fold.predictions["bradykinesia"]
        assert times.size == truth.size == pred.size == 12 * 15


def test_run_loso_needs_two_subjects(mini_cohort_sequences):
    with pytest.raises(ValidationError):
        ev.run_loso({"S01": mini_cohort_sequences["S01"]}, MODEL, FAST_PRE, FAST_FT)


def test_summary_stats_recompute(mini_cohort_sequences):
    summary = ev.run_loso(mini_cohort_sequences, MODEL, FAST_PRE, FAST_FT)
    for symptom in ("bradykinesia", "dyskinesia"):
        values = [f.r[symptom] for f in summary.folds]
        assert summary.mean_r[symptom] == pytest.approx(np.mean(values), abs=1e-12)
        assert summary.std_r[symptom] == pytest.approx(np.std(values), abs=1e-12)


def test_leakage_guard_held_out_perturbation(mini_cohort_sequences):
    held = "S03"
    base = dict(mini_cohort_sequences)
    mutated = dict(mini_cohort_sequences)
    mutated[held] = [
        replace(
            seq,
            features=seq.features * 3.0 + 1.0,
            labels=seq.labels[::-1].copy(),
        )
        for seq in mini_cohort_sequences[held]
    ]
    fold_a = ev.run_fold(base, held, MODEL, FAST_PRE, FAST_FT)
    fold_b = ev.run_fold(mutated, held, MODEL, FAST_PRE, FAST_FT)
    assert fold_a.pretrained.allclose_equal(fold_b.pretrained)
    for symptom in ("bradykinesia", "dyskinesia"):
        assert fold_a.finetuned[symptom].allclose_equal(fold_b.finetuned[symptom])
    # while the predictions on the perturbed data of course differ
    assert not np.array_equal(
        fold_a.predictions["bradykinesia"][2], fold_b.predictions["bradykinesia"][2]
    )


def test_fold_failure_is_isolated(mini_cohort_sequences):
    # constant labels on one subject: only its own fold's correlation is
    # undefined, training folds that merely include it are unaffected
    broken = dict(mini_cohort_sequences)
    broken["S02"] = [
        replace(seq, labels=np.zeros((15, 2))) for seq in mini_cohort_sequences["S02"]
    ]
    summary = ev.run_loso(broken, MODEL, FAST_PRE, FAST_FT)
    by_subject = {f.held_out_subject: f for f in summary.folds}
    assert by_subject["S02"].failed
    assert "UndefinedCorrelationError" in by_subject["S02"].error
    assert not by_subject["S01"].failed
    assert not by_subject["S03"].failed
    assert summary.n_failed == 1
    assert set(summary.mean_r) == {"bradykinesia", "dyskinesia"}


def test_shuffle_labels_destroys_alignment(mini_cohort_sequences):
    shuffled = ev.shuffle_labels(mini_cohort_sequences, seed=5)
    sid = "S01"
    orig = np.concatenate([s.labels for s in mini_cohort_sequences[sid]])
    new = np.concatenate([s.labels for s in shuffled[sid]])
    assert not np.array_equal(orig, new)
    assert np.array_equal(np.sort(orig[:, 0]), np.sort(new[:, 0]))  # same values
    for a, b in zip(mini_cohort_sequences[sid], shuffled[sid]):
        assert a.features is b.features  # features untouched
    again = ev.shuffle_labels(mini_cohort_sequences, seed=5)
    assert np.array_equal(new, np.concatenate([s.labels for s in again[sid]]))


def test_export_embeddings_row_counts(tmp_path, mini_cohort_sequences):
    store = init_params(MODEL, seed=1)
    seqs = mini_cohort_sequences["S01"][:1]
    out = tmp_path / "emb.csv"
    assert ev.export_embeddings(store, MODEL, seqs, out) == 15
    rows = list(csv.reader(out.open()))
    assert len(rows) == 16  # header + 15 tokens
    assert rows[0][:3] == ["subject_id", "t_start_unix_s", "position"]
    assert len(rows[1]) == 3 + 64 + 2

    assert ev.export_embeddings(store, MODEL, seqs, out, include_cls=True) == 16
    rows = list(csv.reader(out.open()))
    assert len(rows) == 17
    assert rows[1][2] == "CLS"
    assert rows[1][-1] == "" and rows[1][-2] == ""


def test_export_embeddings_total_count(tmp_path, mini_cohort_sequences):
    store = init_params(MODEL, seed=2)
    all_seqs = [s for sid in mini_cohort_sequences for s in mini_cohort_sequences[sid]]
    n_tokens = sum(s.features.shape[0] for s in all_seqs)
    out = tmp_path / "emb.csv"
    assert ev.export_embeddings(store, MODEL, all_seqs, out) == n_tokens


def test_export_embeddings_values_match_forward(tmp_path, mini_cohort_sequences):
    from dbsfm.model import encoder_forward

    store = init_params(MODEL, seed=3)
    seq = mini_cohort_sequences["S02"][0]
    out = tmp_path / "emb.csv"
    ev.export_embeddings(store, MODEL, [seq], out)
    rows = list(csv.reader(out.open()))
    emb = encoder_forward(seq.features, store, MODEL).embeddings
    got = np.array([float(v) for v in rows[1][3:67]])
    np.testing.assert_array_equal(got, emb[1])
