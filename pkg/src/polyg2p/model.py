"""Desk-scale transformer encoder with a tied masked-LM head.

Everything is plain numpy: parameters are a named dict of arrays, the forward
pass optionally records the activations needed for an exact reverse-mode
backward pass.  The token embedding matrix doubles as the output projection
(weight tying is structural: there is no second matrix), so the only
per-token output parameters are the bias vector.  Growing the vocabulary is
therefore exactly ``n * (d + 1)`` new parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from .vocab import SPECIALS, VocabMap

LN_EPS = 1e-12
INIT_STD = 0.02
NEG_INF = -np.inf


class ModelError(ValueError):
    """Invalid configuration or forward-pass input."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 64
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < len(SPECIALS):
            raise ModelError("vocab_size smaller than the special-token inventory")
        if not 0 <= self.dropout < 1:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Parameters:
    """Named parameter tensors; dict order is the canonical record order.

    Shared read-only during inference; training mutates one exclusive
    instance in place.
    """

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Parameters":
        return Parameters({k: v.astype(dtype) for k, v in self.tensors.items()})

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise ModelError(f"non-finite values in parameter tensor {name!r}")


def _layer_names(i: int) -> dict[str, str]:
    return {k: f"enc{i}.{k}" for k in (
        "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
        "attn.wo", "attn.bo", "ln1.g", "ln1.b",
        "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.g", "ln2.b")}


def init_random(config: ModelConfig, dtype=np.float32) -> Parameters:
    """Scaled normal init for weights, zeros for biases, deterministic in the seed."""
    rng = np.random.default_rng(config.seed)
    d, V, L = config.d_model, config.vocab_size, config.max_len

    def w(*shape):
        return (rng.standard_normal(shape) * INIT_STD).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    def ones(*shape):
        return np.ones(shape, dtype=dtype)

    tensors: dict[str, np.ndarray] = {}
    tensors["tok_emb"] = w(V, d)
    tensors["pos_emb"] = w(L, d)
    for i in range(config.n_layers):
        n = _layer_names(i)
        tensors[n["attn.wq"]] = w(d, d)
        tensors[n["attn.bq"]] = zeros(d)
        tensors[n["attn.wk"]] = w(d, d)
        tensors[n["attn.bk"]] = zeros(d)
        tensors[n["attn.wv"]] = w(d, d)
        tensors[n["attn.bv"]] = zeros(d)
        tensors[n["attn.wo"]] = w(d, d)
        tensors[n["attn.bo"]] = zeros(d)
        tensors[n["ln1.g"]] = ones(d)
        tensors[n["ln1.b"]] = zeros(d)
        tensors[n["ffn.w1"]] = w(d, config.d_ff)
        tensors[n["ffn.b1"]] = zeros(config.d_ff)
        tensors[n["ffn.w2"]] = w(config.d_ff, d)
        tensors[n["ffn.b2"]] = zeros(d)
        tensors[n["ln2.g"]] = ones(d)
        tensors[n["ln2.b"]] = zeros(d)
    tensors["head.wt"] = w(d, d)
    tensors["head.bt"] = zeros(d)
    tensors["head.ln.g"] = ones(d)
    tensors["head.ln.b"] = zeros(d)
    tensors["head.out_bias"] = zeros(V)
    return Parameters(tensors)


def param_count(obj) -> int:
    """Total parameter count of a config (closed form) or a Parameters instance."""
    if isinstance(obj, Parameters):
        return obj.count()
    c: ModelConfig = obj
    d, dff = c.d_model, c.d_ff
    per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * dff + dff) + (dff * d + d)
    head = d * d + d + 2 * d + c.vocab_size
    return c.vocab_size * d + c.max_len * d + c.n_layers * per_layer + head


def extension_delta(n: int, d: int) -> int:
    """Parameters added by ``n`` new tokens: one embedding row plus one output bias each."""
    return n * (d + 1)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

# tanh-form GELU, the variant used by the reference encoder implementation
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu_forward(x: np.ndarray):
    """Returns (gelu(x), tanh cache for the exact backward)."""
    t = np.tanh(x.dtype.type(_GELU_C) * (x + x.dtype.type(_GELU_A) * x * x * x))
    return 0.5 * x * (1.0 + t), t


def gelu(x: np.ndarray) -> np.ndarray:
    return gelu_forward(x)[0]


def gelu_grad(x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    """d gelu/dx; pass the cached tanh value to skip recomputing it."""
    if t is None:
        t = gelu_forward(x)[1]
    inner = x.dtype.type(_GELU_C) * (1.0 + 3.0 * x.dtype.type(_GELU_A) * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * inner


def layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _dropout_mask(rng, shape, rate, dtype):
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype.type(1.0 - rate)


@dataclass
class LayerTrace:
    x_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray                 # post-softmax, pre-dropout
    att_mask: np.ndarray | None
    ctx: np.ndarray                 # merged heads
    ln1: tuple
    x1: np.ndarray
    ffn_u: np.ndarray               # pre-activation
    ffn_a: np.ndarray               # post-activation
    ffn_t: np.ndarray               # tanh cache of the activation
    ffn_mask: np.ndarray | None
    ln2: tuple


@dataclass
class EncoderTrace:
    ids: np.ndarray
    key_valid: np.ndarray
    emb_mask: np.ndarray | None
    layers: list[LayerTrace] = field(default_factory=list)
    hidden: np.ndarray | None = None


@dataclass
class HeadTrace:
    hidden: np.ndarray
    u: np.ndarray
    a: np.ndarray
    g: np.ndarray                   # tanh cache of the activation
    ln: tuple
    t: np.ndarray


@dataclass
class ForwardTrace:
    """Activations sufficient to replay the batch and take exact gradients."""
    encoder: EncoderTrace
    head: HeadTrace
    logits: np.ndarray


def _check_ids(config: ModelConfig, ids: np.ndarray) -> None:
    if ids.ndim != 2:
        raise ModelError(f"ids must be (batch, positions), got shape {ids.shape}")
    if ids.shape[1] > config.max_len:
        raise ModelError(f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ModelError("token id out of range")


def encode_hidden(params: Parameters, config: ModelConfig, ids,
                  *, train: bool = False, rng=None, pad_id: int = 0,
                  need_trace: bool = False):
    """Run the encoder stack; returns (hidden, EncoderTrace | None).

    Padding ids are excluded from attention keys, so logits at non-pad
    positions do not depend on padding.
    """
    ids = np.asarray(ids, dtype=np.int64)
    _check_ids(config, ids)
    dtype = params.dtype
    drop = config.dropout if train else 0.0
    if drop > 0 and rng is None:
        raise ModelError("training-mode dropout needs an rng")
    B, T = ids.shape
    H = config.n_heads
    scale = np.asarray(1.0 / math.sqrt(config.d_model // H), dtype=dtype)

    key_valid = ids != pad_id
    trace = EncoderTrace(ids=ids, key_valid=key_valid, emb_mask=None) if need_trace else None

    x = params["tok_emb"][ids] + params["pos_emb"][:T]
    if drop > 0:
        m = _dropout_mask(rng, x.shape, drop, np.dtype(dtype))
        x = x * m
        if trace is not None:
            trace.emb_mask = m

    for i in range(config.n_layers):
        n = _layer_names(i)
        x_in = x
        q = _split_heads(x @ params[n["attn.wq"]] + params[n["attn.bq"]], H)
        k = _split_heads(x @ params[n["attn.wk"]] + params[n["attn.bk"]], H)
        v = _split_heads(x @ params[n["attn.wv"]] + params[n["attn.bv"]], H)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(key_valid[:, None, None, :], scores, dtype.type(NEG_INF))
        att = softmax(scores)
        if drop > 0:
            am = _dropout_mask(rng, att.shape, drop, np.dtype(dtype))
            att_d = att * am
        else:
            am = None
            att_d = att
        ctx = _merge_heads(att_d @ v)
        attn_out = ctx @ params[n["attn.wo"]] + params[n["attn.bo"]]
        x1, ln1_cache = layer_norm(x_in + attn_out, params[n["ln1.g"]], params[n["ln1.b"]])

        u = x1 @ params[n["ffn.w1"]] + params[n["ffn.b1"]]
        a, g = gelu_forward(u)
        f = a @ params[n["ffn.w2"]] + params[n["ffn.b2"]]
        if drop > 0:
            fm = _dropout_mask(rng, f.shape, drop, np.dtype(dtype))
            f = f * fm
        else:
            fm = None
        x, ln2_cache = layer_norm(x1 + f, params[n["ln2.g"]], params[n["ln2.b"]])

        if trace is not None:
            trace.layers.append(LayerTrace(
                x_in=x_in, q=q, k=k, v=v, att=att, att_mask=am, ctx=ctx,
                ln1=ln1_cache, x1=x1, ffn_u=u, ffn_a=a, ffn_t=g, ffn_mask=fm,
                ln2=ln2_cache))

    if trace is not None:
        trace.hidden = x
    return x, trace


def mlm_logits(params: Parameters, hidden, *, need_trace: bool = False):
    """Tied-projection head: transform, activation, layer norm, then
    ``hidden_t @ tok_emb.T + out_bias``; returns (logits, HeadTrace | None)."""
    u = hidden @ params["head.wt"] + params["head.bt"]
    a, g = gelu_forward(u)
    t, ln_cache = layer_norm(a, params["head.ln.g"], params["head.ln.b"])
    logits = t @ params["tok_emb"].T + params["head.out_bias"]
    trace = HeadTrace(hidden=hidden, u=u, a=a, g=g, ln=ln_cache, t=t) if need_trace else None
    return logits, trace


def forward(params: Parameters, config: ModelConfig, ids,
            *, train: bool = False, rng=None, pad_id: int = 0,
            need_trace: bool = False):
    """Full forward pass; returns (logits, ForwardTrace | None).

    Eval mode (``train=False``) is deterministic: dropout is off.
    """
    hidden, enc_trace = encode_hidden(params, config, ids, train=train, rng=rng,
                                      pad_id=pad_id, need_trace=need_trace)
    logits, head_trace = mlm_logits(params, hidden, need_trace=need_trace)
    if not need_trace:
        return logits, None
    return logits, ForwardTrace(encoder=enc_trace, head=head_trace, logits=logits)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _scatter_rows_add(n_rows: int, ids_flat: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sum ``rows`` into an (n_rows, d) array grouped by ``ids_flat``."""
    d = rows.shape[1]
    if n_rows * ids_flat.size <= 4_000_000:
        onehot = np.zeros((ids_flat.size, n_rows), dtype=rows.dtype)
        onehot[np.arange(ids_flat.size), ids_flat] = 1
        return onehot.T @ rows
    out = np.zeros((n_rows, d), dtype=rows.dtype)
    np.add.at(out, ids_flat, rows)
    return out


def mlm_head_backward(params: Parameters, head: HeadTrace, dlogits: np.ndarray):
    """Backprop through the tied head.

    Returns (dhidden, grads) where ``grads['tok_emb']`` holds only the
    output-projection contribution; the embedding-lookup contribution is added
    by :func:`encoder_backward`.
    """
    V, d = params["tok_emb"].shape
    dt = dlogits @ params["tok_emb"]
    flat_dl = dlogits.reshape(-1, V)
    flat_t = head.t.reshape(-1, d)
    grads = {
        "tok_emb": flat_dl.T @ flat_t,
        "head.out_bias": dlogits.sum(axis=(0, 1)),
    }
    da, grads["head.ln.g"], grads["head.ln.b"] = layer_norm_backward(dt, params["head.ln.g"], head.ln)
    du = da * gelu_grad(head.u, head.g)
    grads["head.wt"] = head.hidden.reshape(-1, d).T @ du.reshape(-1, d)
    grads["head.bt"] = du.sum(axis=(0, 1))
    dhidden = du @ params["head.wt"].T
    return dhidden, grads


def encoder_backward(params: Parameters, config: ModelConfig, enc: EncoderTrace,
                     dhidden: np.ndarray):
    """Backprop through the encoder stack down to the embeddings.

    ``grads['tok_emb']`` is the embedding-lookup contribution only.
    """
    H = config.n_heads
    d = config.d_model
    dtype = dhidden.dtype
    scale = np.asarray(1.0 / math.sqrt(d // H), dtype=dtype)
    grads: dict[str, np.ndarray] = {}
    dx = dhidden

    for i in reversed(range(config.n_layers)):
        n = _layer_names(i)
        lt = enc.layers[i]
        flat = lambda t: t.reshape(-1, t.shape[-1])

        dz, grads[n["ln2.g"]], grads[n["ln2.b"]] = layer_norm_backward(dx, params[n["ln2.g"]], lt.ln2)
        df = dz if lt.ffn_mask is None else dz * lt.ffn_mask
        grads[n["ffn.w2"]] = flat(lt.ffn_a).T @ flat(df)
        grads[n["ffn.b2"]] = df.sum(axis=(0, 1))
        da = df @ params[n["ffn.w2"]].T
        du = da * gelu_grad(lt.ffn_u, lt.ffn_t)
        grads[n["ffn.w1"]] = flat(lt.x1).T @ flat(du)
        grads[n["ffn.b1"]] = du.sum(axis=(0, 1))
        dx1 = du @ params[n["ffn.w1"]].T + dz

        dy, grads[n["ln1.g"]], grads[n["ln1.b"]] = layer_norm_backward(dx1, params[n["ln1.g"]], lt.ln1)
        grads[n["attn.wo"]] = flat(lt.ctx).T @ flat(dy)
        grads[n["attn.bo"]] = dy.sum(axis=(0, 1))
        dctx = _split_heads(dy @ params[n["attn.wo"]].T, H)

        att_d = lt.att if lt.att_mask is None else lt.att * lt.att_mask
        datt_d = dctx @ lt.v.transpose(0, 1, 3, 2)
        dv = att_d.transpose(0, 1, 3, 2) @ dctx
        datt = datt_d if lt.att_mask is None else datt_d * lt.att_mask
        ds = lt.att * (datt - (datt * lt.att).sum(axis=-1, keepdims=True))
        dq = (ds @ lt.k) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ lt.q) * scale

        dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        x_in_flat = flat(lt.x_in)
        grads[n["attn.wq"]] = x_in_flat.T @ flat(dq_m)
        grads[n["attn.bq"]] = dq_m.sum(axis=(0, 1))
        grads[n["attn.wk"]] = x_in_flat.T @ flat(dk_m)
        grads[n["attn.bk"]] = dk_m.sum(axis=(0, 1))
        grads[n["attn.wv"]] = x_in_flat.T @ flat(dv_m)
        grads[n["attn.bv"]] = dv_m.sum(axis=(0, 1))
        dx = (dy
              + dq_m @ params[n["attn.wq"]].T
              + dk_m @ params[n["attn.wk"]].T
              + dv_m @ params[n["attn.wv"]].T)

    demb = dx if enc.emb_mask is None else dx * enc.emb_mask
    B, T = enc.ids.shape
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:T] = demb.sum(axis=0)
    grads["pos_emb"] = dpos
    grads["tok_emb"] = _scatter_rows_add(params["tok_emb"].shape[0],
                                         enc.ids.ravel(), demb.reshape(-1, d))
    return grads


def backward(params: Parameters, config: ModelConfig, trace: ForwardTrace,
             dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients for every parameter tensor.

    The tied embedding gradient is the sum of its output-projection and
    embedding-lookup contributions.
    """
    dhidden, grads = mlm_head_backward(params, trace.head, dlogits)
    enc_grads = encoder_backward(params, config, trace.encoder, dhidden)
    enc_grads["tok_emb"] += grads.pop("tok_emb")
    grads.update(enc_grads)
    return grads


# ---------------------------------------------------------------------------
# Vocabulary extension
# ---------------------------------------------------------------------------

INIT_MODES = ("scpc", "unk")


def extend_and_init(base: Parameters, base_vocab: VocabMap, extended_vocab: VocabMap,
                    mode: str) -> Parameters:
    """Grow the embedding matrix and output bias for the extension block.

    Each new token copies the weights of one existing token: its own source
    polyphone character (``mode='scpc'``) or ``[UNK]`` (``mode='unk'``).  Both
    the embedding row and the output bias are copied, which makes all sibling
    readings of a polyphone exactly equiprobable before training.  Every other
    tensor is bit-identical to ``base``.
    """
    if mode not in INIT_MODES:
        raise ModelError(f"init mode must be one of {INIT_MODES}, got {mode!r}")
    if extended_vocab.base_tokens != base_vocab.base_tokens:
        raise ModelError("extended vocabulary does not share the base token inventory")
    if base_vocab.ncmcs:
        raise ModelError("base vocabulary already has an extension block")
    V, d = base["tok_emb"].shape
    if V != base_vocab.size:
        raise ModelError(f"base parameters sized for vocab {V}, expected {base_vocab.size}")

    if mode == "scpc":
        src = [base_vocab.base_id(scpc) for scpc, _ in extended_vocab.ncmcs]
    else:
        src = [base_vocab.unk_id] * len(extended_vocab.ncmcs)

    tensors = {k: v.copy() for k, v in base.items()}
    tensors["tok_emb"] = np.concatenate([base["tok_emb"], base["tok_emb"][src]], axis=0)
    tensors["head.out_bias"] = np.concatenate([base["head.out_bias"], base["head.out_bias"][src]])
    return Parameters(tensors)
