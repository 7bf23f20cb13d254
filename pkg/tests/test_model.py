"""Parameter store accounting, encoder forward contracts, heads, and the
binary checkpoint format."""

from collections import OrderedDict

import numpy as np
import pytest

from dbsfm import autodiff as ad
from dbsfm import model
from dbsfm.errors import CheckpointFormatError, ValidationError

PAPER_CFG = model.ModelConfig()
TOY_CFG = model.ModelConfig(
    input_dim=3, d_model=4, d_ff=2, n_heads=1, n_layers=1, seq_positions=2, head_hidden=2
)


def test_encoder_param_total_identity():
    store = model.init_params(PAPER_CFG, seed=0)
    assert model.param_count(store, "encoder") == 51456


def test_encoder_param_decomposition():
    store = model.init_params(PAPER_CFG, seed=0)
    assert model.param_count(store, "proj.w") + model.param_count(store, "proj.b") == 8064
    assert model.param_count(store, "pos_enc") == 1024
    assert model.param_count(store, "cls") == 64
    for i in range(2):
        layer = sum(store[n].size for n in store.names() if n.startswith(f"layer{i}."))
        assert layer == 21088
        attn = sum(store[n].size for n in store.names() if n.startswith(f"layer{i}.attn."))
        assert attn == 16640
        ff = sum(store[n].size for n in store.names() if n.startswith(f"layer{i}.ff."))
        assert ff == 4192
        lns = sum(store[n].size for n in store.names() if f"layer{i}.ln" in n)
        assert lns == 256
    assert model.param_count(store, "final_ln.gain") + model.param_count(store, "final_ln.bias") == 128
    assert 8064 + 1024 + 64 + 2 * 21088 + 128 == 51456


def test_toy_param_total():
    store = model.init_params(TOY_CFG, seed=0)
    assert model.param_count(store, "encoder") == 154  # 16 + 8 + 4 + 118 + 8


def test_recon_head_count():
    store = model.init_params(PAPER_CFG, seed=0)
    assert model.param_count(store, "recon") == 8125  # 64*125 + 125


def test_empty_subset_counts_zero():
    cfg = model.ModelConfig(symptoms=())
    store = model.init_params(cfg, seed=0)
    assert model.param_count(store, "heads") == 0


def test_unknown_subset_rejected():
    store = model.init_params(TOY_CFG, seed=0)
    with pytest.raises(KeyError):
        model.param_count(store, "decoder")


def test_init_deterministic():
    a = model.init_params(PAPER_CFG, seed=42)
    b = model.init_params(PAPER_CFG, seed=42)
    assert a.allclose_equal(b)
    c = model.init_params(PAPER_CFG, seed=43)
    assert not a.allclose_equal(c)


def test_init_distributions():
    store = model.init_params(PAPER_CFG, seed=7)
    bound = np.sqrt(1.0 / 125.0)
    assert np.abs(store["proj.w"]).max() <= bound
    assert np.all(store["proj.b"] == 0.0)
    assert np.all(store["layer0.ln1.gain"] == 1.0)
    assert store["pos_enc"].std() == pytest.approx(0.02, rel=0.2)


def test_forward_shape_contract():
    store = model.init_params(PAPER_CFG, seed=1)
    single = model.encoder_forward(np.zeros((15, 125)), store, PAPER_CFG)
    assert single.embeddings.shape == (16, 64)
    batched = model.encoder_forward(np.zeros((3, 15, 125)), store, PAPER_CFG)
    assert batched.embeddings.shape == (3, 16, 64)


def test_forward_deterministic():
    store = model.init_params(PAPER_CFG, seed=1)
    x = np.random.default_rng(2).normal(size=(15, 125))
    a = model.encoder_forward(x, store, PAPER_CFG).embeddings
    b = model.encoder_forward(x, store, PAPER_CFG).embeddings
    assert np.array_equal(a, b)


def test_zero_query_key_gives_uniform_attention():
    store = model.init_params(PAPER_CFG, seed=1)
    for i in range(PAPER_CFG.n_layers):
        for proj in ("q", "k"):
            store[f"layer{i}.attn.{proj}.w"] = np.zeros((64, 64))
    collect = {}
    tensors = model.as_param_tensors(store)
    with ad.no_grad():
        model.encoder_graph(np.zeros((1, 15, 125)), tensors, PAPER_CFG, collect=collect)
    for i in range(PAPER_CFG.n_layers):
        np.testing.assert_allclose(collect[f"attn.layer{i}"], 1.0 / 16.0, atol=1e-15)


def test_attention_rows_sum_to_one():
    store = model.init_params(PAPER_CFG, seed=3)
    collect = {}
    tensors = model.as_param_tensors(store)
    x = np.random.default_rng(4).normal(size=(2, 15, 125))
    with ad.no_grad():
        model.encoder_graph(x, tensors, PAPER_CFG, collect=collect)
    for i in range(PAPER_CFG.n_layers):
        sums = collect[f"attn.layer{i}"].sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_permutation_equivariance_without_positions():
    # 4-token toy model, positional encodings zeroed: permuting tokens
    # permutes the token latents identically (CLS row unaffected)
    cfg = model.ModelConfig(
        input_dim=6, d_model=8, d_ff=4, n_heads=2, n_layers=2, seq_positions=5
    )
    store = model.init_params(cfg, seed=5)
    store["pos_enc"] = np.zeros((5, 8))
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 6))
    perm = np.array([2, 0, 3, 1])
    base = model.encoder_forward(x, store, cfg).embeddings
    permuted = model.encoder_forward(x[perm], store, cfg).embeddings
    np.testing.assert_allclose(permuted[1:], base[1:][perm], atol=1e-12)
    np.testing.assert_allclose(permuted[0], base[0], atol=1e-12)


def test_layer_norm_rows_standardized():
    # rows with variance far above eps: normalized rows have mean ~0, var ~1
    x = np.random.default_rng(8).normal(size=(10, 64)) * 20.0
    out = ad.layer_norm(
        ad.Tensor(x), ad.Tensor(np.ones(64)), ad.Tensor(np.zeros(64)), 1e-5
    ).data
    assert np.abs(out.mean(axis=1)).max() < 1e-9
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-6


def test_reconstruction_head_zero_latent():
    store = model.init_params(PAPER_CFG, seed=1)
    store["recon.b"] = np.zeros(125)
    latent = model.LatentOutput(embeddings=np.zeros((16, 64)))
    out = model.reconstruction_head(latent, store)
    assert out.shape == (15, 125)
    assert np.all(out == 0.0)


def test_reconstruction_head_matches_naive_matmul():
    store = model.init_params(PAPER_CFG, seed=9)
    emb = np.random.default_rng(10).normal(size=(16, 64))
    out = model.reconstruction_head(model.LatentOutput(embeddings=emb), store)
    w, b = store["recon.w"], store["recon.b"]
    naive = np.empty((15, 125))
    for i in range(15):
        for j in range(125):
            acc = 0.0
            for k in range(64):
                acc += emb[i + 1, k] * w[k, j]
            naive[i, j] = acc + b[j]
    np.testing.assert_allclose(out, naive, atol=1e-12)


def test_regression_head_hand_example():
    cfg = model.ModelConfig(
        input_dim=3, d_model=2, d_ff=2, n_heads=1, n_layers=1, seq_positions=2, head_hidden=2
    )
    store = model.init_params(cfg, seed=0)
    store["head.bradykinesia.w1"] = np.eye(2)
    store["head.bradykinesia.b1"] = np.zeros(2)
    store["head.bradykinesia.w2"] = np.ones((2, 1))
    store["head.bradykinesia.b2"] = np.zeros(1)
    assert model.regression_head(np.array([-1.0, 2.0]), store, "bradykinesia") == 2.0


def test_regression_head_dead_relu_returns_bias():
    cfg = model.ModelConfig(
        input_dim=3, d_model=2, d_ff=2, n_heads=1, n_layers=1, seq_positions=2, head_hidden=2
    )
    store = model.init_params(cfg, seed=0)
    store["head.dyskinesia.w1"] = -np.ones((2, 2))
    store["head.dyskinesia.w2"] = np.ones((2, 1))
    store["head.dyskinesia.b2"] = np.array([0.75])
    assert model.regression_head(np.array([3.0, 4.0]), store, "dyskinesia") == 0.75


def test_regression_head_zero_everything():
    store = model.init_params(TOY_CFG, seed=0)
    store["head.bradykinesia.w1"] = np.zeros((4, 2))
    assert model.regression_head(np.zeros(4), store, "bradykinesia") == 0.0


def test_unknown_symptom_rejected():
    store = model.init_params(TOY_CFG, seed=0)
    with pytest.raises(ValidationError):
        model.regression_head(np.zeros(4), store, "tremor")


def test_backward_unreachable_params_get_zeros():
    store = model.init_params(TOY_CFG, seed=2)
    tensors = model.as_param_tensors(store, trainable=store.names())
    latent = model.encoder_graph(np.ones((1, 1, 3)), tensors, TOY_CFG)
    recon = model.reconstruction_graph(latent, tensors)
    loss = ad.masked_wmae_loss(
        recon, np.zeros((1, 1, 3)), np.ones(3), np.ones((1, 1), dtype=bool)
    )
    grads = model.backward(loss, tensors)
    assert set(grads) == set(store.names())
    for symptom in TOY_CFG.symptoms:
        for suffix in ("w1", "b1", "w2", "b2"):
            name = f"head.{symptom}.{suffix}"
            assert np.all(grads[name] == 0.0)
            assert grads[name].shape == store[name].shape
    assert np.any(grads["proj.w"] != 0.0)


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    store = model.init_params(PAPER_CFG, seed=11)
    path = tmp_path / "model.bin"
    model.save_checkpoint(path, store, PAPER_CFG)
    loaded, cfg = model.load_checkpoint(path)
    assert cfg == PAPER_CFG
    assert loaded.allclose_equal(store)
    x = np.random.default_rng(12).normal(size=(15, 125))
    a = model.encoder_forward(x, store, PAPER_CFG).embeddings
    b = model.encoder_forward(x, loaded, cfg).embeddings
    assert np.array_equal(a, b)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTDBSFM" + b"\x00" * 64)
    with pytest.raises(CheckpointFormatError, match="magic"):
        model.load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    store = model.init_params(TOY_CFG, seed=1)
    path = tmp_path / "model.bin"
    model.save_checkpoint(path, store, TOY_CFG)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 32])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        model.load_checkpoint(path)


def test_param_store_assignment_checks_shape():
    store = model.init_params(TOY_CFG, seed=1)
    with pytest.raises(ValidationError):
        store["proj.w"] = np.zeros((2, 2))
    with pytest.raises(KeyError):
        store["nonexistent"] = np.zeros(1)


def test_model_config_validation():
    with pytest.raises(ValidationError):
        model.ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ValidationError):
        model.ModelConfig(seq_positions=1)


def test_config_dict_roundtrip():
    cfg = model.ModelConfig.from_dict(PAPER_CFG.to_dict())
    assert cfg == PAPER_CFG
