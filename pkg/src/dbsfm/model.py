"""Transformer encoder over spectrogram tokens: parameters, forward passes,
gradients, and the binary checkpoint format.

Topology is fixed: linear projection of each token into the model dimension,
a learned CLS slot prepended, learnable positional encodings, then
pre-normalization blocks (x += attention(LN(x)); x += feedforward(LN(x)))
with a final layer norm. With the default configuration the encoder
parameters total exactly 51456:

    projection 8064 + positions 1024 + cls 64 + 2 x 21088 per block + 128.

The reconstruction head (64 -> token dim) and the per-symptom regression
heads are tracked in the same store but excluded from the encoder count.
"""

import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from dbsfm import autodiff as ad
from dbsfm.errors import CheckpointFormatError, NumericError, ValidationError

CHECKPOINT_MAGIC = b"DBSFM01\n"

SYMPTOMS = ("bradykinesia", "dyskinesia")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 125
    d_model: int = 64
    d_ff: int = 32
    n_heads: int = 4
    n_layers: int = 2
    seq_positions: int = 16  # tokens per sequence + CLS
    layernorm_eps: float = 1e-5
    head_hidden: int = 32
    symptoms: tuple = field(default=SYMPTOMS)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        if self.seq_positions < 2:
            raise ValidationError("need at least one token position plus CLS")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def tokens_per_sequence(self) -> int:
        return self.seq_positions - 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "seq_positions": self.seq_positions,
            "layernorm_eps": self.layernorm_eps,
            "head_hidden": self.head_hidden,
            "symptoms": list(self.symptoms),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["symptoms"] = tuple(d.get("symptoms", SYMPTOMS))
        return cls(**d)


class ParamStore:
    """Ordered named-tensor store; iteration order is the canonical order."""

    def __init__(self, tensors: "OrderedDict[str, np.ndarray]"):
        self._tensors = OrderedDict(
            (name, np.asarray(arr, dtype=np.float64)) for name, arr in tensors.items()
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._tensors:
            raise KeyError(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._tensors[name].shape:
            raise ValidationError(f"shape mismatch assigning {name}")
        self._tensors[name] = value

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def copy(self) -> "ParamStore":
        return ParamStore(
            OrderedDict((n, a.copy()) for n, a in self._tensors.items())
        )

    def subset_names(self, subset: str):
        """Names in a named slice of the store.

        Known subsets: 'all', 'encoder', 'recon', 'heads', 'head.<symptom>',
        or any exact tensor name.
        """
        names = list(self._tensors)
        if subset == "all":
            return names
        if subset == "encoder":
            non_encoder = ("recon.", "head.")
            return [n for n in names if not n.startswith(non_encoder)]
        if subset == "recon":
            return [n for n in names if n.startswith("recon.")]
        if subset == "heads":
            return [n for n in names if n.startswith("head.")]
        if subset.startswith("head."):
            picked = [n for n in names if n.startswith(subset + ".")]
            if picked:
                return picked
        if subset in self._tensors:
            return [subset]
        raise KeyError(f"unknown parameter subset {subset!r}")

    def allclose_equal(self, other: "ParamStore") -> bool:
        """Bitwise equality of names, shapes, and values."""
        if self.names() != other.names():
            return False
        return all(
            a.shape == other[n].shape and np.array_equal(a, other[n])
            for n, a in self.items()
        )


def init_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """Deterministic initialization.

    Linear weights ~ uniform(+-sqrt(1/fan_in)) with fan_in the first weight
    axis; biases zero; positional encodings and CLS ~ normal(0, 0.02); layer
    norm gain 1 and bias 0.
    """
    rng = np.random.default_rng(seed)

    def lin(fan_in, fan_out):
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    t = OrderedDict()
    t["proj.w"] = lin(cfg.input_dim, cfg.d_model)
    t["proj.b"] = np.zeros(cfg.d_model)
    t["pos_enc"] = rng.normal(0.0, 0.02, size=(cfg.seq_positions, cfg.d_model))
    t["cls"] = rng.normal(0.0, 0.02, size=cfg.d_model)
    for i in range(cfg.n_layers):
        pre = f"layer{i}"
        t[f"{pre}.ln1.gain"] = np.ones(cfg.d_model)
        t[f"{pre}.ln1.bias"] = np.zeros(cfg.d_model)
        for proj in ("q", "k", "v", "o"):
            t[f"{pre}.attn.{proj}.w"] = lin(cfg.d_model, cfg.d_model)
            t[f"{pre}.attn.{proj}.b"] = np.zeros(cfg.d_model)
        t[f"{pre}.ln2.gain"] = np.ones(cfg.d_model)
        t[f"{pre}.ln2.bias"] = np.zeros(cfg.d_model)
        t[f"{pre}.ff.w1"] = lin(cfg.d_model, cfg.d_ff)
        t[f"{pre}.ff.b1"] = np.zeros(cfg.d_ff)
        t[f"{pre}.ff.w2"] = lin(cfg.d_ff, cfg.d_model)
        t[f"{pre}.ff.b2"] = np.zeros(cfg.d_model)
    t["final_ln.gain"] = np.ones(cfg.d_model)
    t["final_ln.bias"] = np.zeros(cfg.d_model)
    t["recon.w"] = lin(cfg.d_model, cfg.input_dim)
    t["recon.b"] = np.zeros(cfg.input_dim)
    for symptom in cfg.symptoms:
        t[f"head.{symptom}.w1"] = lin(cfg.d_model, cfg.head_hidden)
        t[f"head.{symptom}.b1"] = np.zeros(cfg.head_hidden)
        # zero output layer: fine-tuning starts at zero predictions, so the
        # fresh head cannot yank the pretrained encoder through early epochs
        t[f"head.{symptom}.w2"] = np.zeros((cfg.head_hidden, 1))
        t[f"head.{symptom}.b2"] = np.zeros(1)
    return ParamStore(t)


def param_count(store: ParamStore, subset: str) -> int:
    """Total element count over a named subset ('encoder', 'recon', ...)."""
    return int(sum(store[n].size for n in store.subset_names(subset)))


@dataclass(frozen=True)
class LatentOutput:
    """Final-layer embeddings; row 0 is the CLS slot, rows 1.. are tokens."""

    embeddings: np.ndarray


def as_param_tensors(store: ParamStore, trainable=()) -> "OrderedDict[str, ad.Tensor]":
    """Wrap store arrays as autodiff tensors; names in ``trainable`` get grads."""
    trainable = set(trainable)
    return OrderedDict(
        (name, ad.Tensor(arr, requires_grad=name in trainable))
        for name, arr in store.items()
    )


def encoder_graph(features: np.ndarray, params, cfg: ModelConfig, collect: dict | None = None) -> ad.Tensor:
    """Forward graph over a (B, T, input_dim) batch; returns (B, T+1, d) latents.

    Masked token rows must already be zeroed by the caller; positional
    encodings are added after projection so masked slots stay addressable.
    When ``collect`` is a dict it receives per-layer attention weights under
    'attn.layer{i}' as (B, heads, T+1, T+1) arrays.
    """
    feats = np.ascontiguousarray(features, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[None, :, :]
    bsz, t, fdim = feats.shape
    if t != cfg.tokens_per_sequence or fdim != cfg.input_dim:
        raise ValidationError(
            f"expected ({cfg.tokens_per_sequence}, {cfg.input_dim}) tokens, got ({t}, {fdim})"
        )

    x = ad.linear(ad.Tensor(feats), params["proj.w"], params["proj.b"])
    x = ad.prepend_cls(params["cls"], x)
    x = ad.add_broadcast(x, params["pos_enc"])

    inv_sqrt_dk = 1.0 / np.sqrt(cfg.head_dim)
    for i in range(cfg.n_layers):
        pre = f"layer{i}"
        h = ad.layer_norm(x, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"], cfg.layernorm_eps)
        q = ad.split_heads(ad.linear(h, params[f"{pre}.attn.q.w"], params[f"{pre}.attn.q.b"]), cfg.n_heads)
        k = ad.split_heads(ad.linear(h, params[f"{pre}.attn.k.w"], params[f"{pre}.attn.k.b"]), cfg.n_heads)
        v = ad.split_heads(ad.linear(h, params[f"{pre}.attn.v.w"], params[f"{pre}.attn.v.b"]), cfg.n_heads)
        attn = ad.softmax_last(ad.scale(ad.bmm(q, k, transpose_b=True), inv_sqrt_dk))
        if collect is not None:
            collect[f"attn.layer{i}"] = attn.data.copy()
        ctx = ad.merge_heads(ad.bmm(attn, v))
        x = ad.add(x, ad.linear(ctx, params[f"{pre}.attn.o.w"], params[f"{pre}.attn.o.b"]))

        h = ad.layer_norm(x, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"], cfg.layernorm_eps)
        h = ad.relu(ad.linear(h, params[f"{pre}.ff.w1"], params[f"{pre}.ff.b1"]))
        x = ad.add(x, ad.linear(h, params[f"{pre}.ff.w2"], params[f"{pre}.ff.b2"]))

    x = ad.layer_norm(x, params["final_ln.gain"], params["final_ln.bias"], cfg.layernorm_eps)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("non-finite values in final encoder output")
    return x


def reconstruction_graph(latent: ad.Tensor, params) -> ad.Tensor:
    """Affine map of token latents (CLS excluded) back to token features."""
    return ad.linear(ad.drop_first_row(latent), params["recon.w"], params["recon.b"])


def regression_graph(latent: ad.Tensor, params, symptom: str) -> ad.Tensor:
    """Two-layer MLP (hidden relu, scalar output) on token latents.

    Input (B, T, d) -> output (B, T) of symptom scores.
    """
    try:
        w1 = params[f"head.{symptom}.w1"]
    except KeyError:
        raise ValidationError(f"unknown symptom head {symptom!r}")
    h = ad.relu(ad.linear(ad.drop_first_row(latent), w1, params[f"head.{symptom}.b1"]))
    out = ad.linear(h, params[f"head.{symptom}.w2"], params[f"head.{symptom}.b2"])
    return out


def encoder_forward(features: np.ndarray, store: ParamStore, cfg: ModelConfig) -> LatentOutput:
    """Inference forward for one (T, input_dim) sequence or a (B, ...) batch."""
    single = np.asarray(features).ndim == 2
    with ad.no_grad():
        latent = encoder_graph(features, as_param_tensors(store), cfg)
    emb = latent.data[0] if single else latent.data
    return LatentOutput(embeddings=emb)


def reconstruction_head(latent: LatentOutput, store: ParamStore) -> np.ndarray:
    """Token reconstructions for a single-sequence latent (rows 1..)."""
    emb = latent.embeddings
    single = emb.ndim == 2
    with ad.no_grad():
        out = reconstruction_graph(ad.Tensor(emb[None] if single else emb), as_param_tensors(store))
    return out.data[0] if single else out.data


def regression_head(latent_row: np.ndarray, store: ParamStore, symptom: str) -> float:
    """Scalar symptom score for one 64-dim token embedding."""
    row = np.asarray(latent_row, dtype=np.float64)
    if f"head.{symptom}.w1" not in store:
        raise ValidationError(f"unknown symptom head {symptom!r}")
    h = np.maximum(row @ store[f"head.{symptom}.w1"] + store[f"head.{symptom}.b1"], 0.0)
    return float(h @ store[f"head.{symptom}.w2"] + store[f"head.{symptom}.b2"])


def backward(loss: ad.Tensor, params) -> "OrderedDict[str, np.ndarray]":
    """Reverse-mode gradients for every named parameter tensor.

    Parameters not reachable from the loss get zero gradients of the right
    shape. Raises GraphStateError if no forward computation was recorded.
    """
    ad.backward(loss)
    grads = OrderedDict()
    for name, tensor in params.items():
        if tensor.grad is None:
            grads[name] = np.zeros_like(tensor.data)
        else:
            grads[name] = tensor.grad
    return grads


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------


def save_checkpoint(path, store: ParamStore, cfg: ModelConfig) -> None:
    """Magic, u32-LE header length, JSON header, then raw LE float64 payloads.

    Header: {"config": ..., "tensors": [{"name", "shape", "offset"}, ...]}
    with offsets in bytes from the start of the payload section, in table
    order.
    """
    table = []
    offset = 0
    payloads = []
    for name, arr in store.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(data)
        offset += len(data)
    header = json.dumps({"config": cfg.to_dict(), "tensors": table}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for data in payloads:
            fh.write(data)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (ParamStore, ModelConfig)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    magic = buf.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
    size_bytes = buf.read(4)
    if len(size_bytes) < 4:
        raise CheckpointFormatError("truncated checkpoint header length")
    (header_len,) = struct.unpack("<I", size_bytes)
    header_bytes = buf.read(header_len)
    if len(header_bytes) < header_len:
        raise CheckpointFormatError("truncated checkpoint header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        table = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"malformed checkpoint header: {exc}")
    payload = raw[len(CHECKPOINT_MAGIC) + 4 + header_len :]
    tensors = OrderedDict()
    for entry in table:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointFormatError(f"truncated payload for tensor {entry['name']}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
    return ParamStore(tensors), cfg
