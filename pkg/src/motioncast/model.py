"""The two-channel transformer forecaster.

The padded input X (observed prefix plus replicated last pose) is fed to
two independent attention stacks. The temporal channel embeds each frame
(P -> D) and attends over the T time steps under a causal mask; the
spatial channel embeds each parameter's time series (T -> D) and attends
over the P parameter tokens with no mask. Each channel decodes back to a
T x P sequence and the forecast is the sum of both channel outputs plus
the input residual, so a model with zeroed decoders is exactly the
zero-velocity baseline. The whole future is produced in one forward pass;
nothing autoregressive happens at inference.

Blocks are pre-layer-norm with a position-wise ReLU feed-forward
(expansion ``ffn_mult``), the standard recipe that keeps stacks of
L >= 2 trainable.

Attention scaling divides scores by sqrt(D) by default; set
``per_head_scale`` to use the per-head width sqrt(D/H) instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tz
from .dataset import build_padded_input
from .tensor import MASK_SENTINEL, Tensor

__all__ = [
    "ModelConfig",
    "AttentionWeights",
    "FeedForwardWeights",
    "BlockParams",
    "ChannelParams",
    "TwoChannelTransformer",
    "positional_encoding",
    "causal_mask",
    "mha_forward",
    "temporal_channel_forward",
    "spatial_channel_forward",
    "model_forward",
    "predict",
    "init_model",
    "named_params",
    "param_count",
    "param_count_formula",
    "flatten_params",
    "model_from_flat",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1

_CONFIG_FIELDS = ("n_params", "n_prefix", "horizon", "embed_dim", "n_heads",
                  "n_layers", "ffn_mult")


@dataclass
class ModelConfig:
    """Hyperparameters; defaults land near the 2.6M parameter budget."""

    n_params: int = 99        # P skeleton parameters per frame
    n_prefix: int = 10        # N observed frames (400 ms at 25 fps)
    horizon: int = 25         # T' predicted frames (1 s at 25 fps)
    embed_dim: int = 160      # D
    n_heads: int = 8          # H
    n_layers: int = 4         # L blocks per channel
    ffn_mult: int = 4
    dropout: float = 0.1
    per_head_scale: bool = False

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even for sinusoidal encoding")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        for name in ("n_params", "n_prefix", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def total(self) -> int:
        """T = N + T'."""
        return self.n_prefix + self.horizon

    @property
    def head_dim(self) -> int:
        """F = D / H."""
        return self.embed_dim // self.n_heads

    @property
    def attn_denominator(self) -> float:
        return math.sqrt(self.head_dim if self.per_head_scale else self.embed_dim)


@dataclass
class AttentionWeights:
    """Q/K/V/O projections.

    wq, wk and wv are D x D with head h owning the column block
    [h*F, (h+1)*F); wo maps the concatenated H*F = D head outputs back
    to D. No biases, the projections are purely linear.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class FeedForwardWeights:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class BlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: AttentionWeights
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn: FeedForwardWeights


@dataclass
class ChannelParams:
    """One channel: encoder in_dim -> D, L blocks, decoder D -> out_dim."""

    enc_w: Tensor
    enc_b: Tensor
    blocks: list
    dec_w: Tensor
    dec_b: Tensor


@dataclass
class TwoChannelTransformer:
    config: ModelConfig
    temporal: ChannelParams
    spatial: ChannelParams
    forward_count: int = field(default=0, compare=False)


def positional_encoding(length: int, embed_dim: int) -> np.ndarray:
    """Sinusoidal table: pe[pos, 2i] = sin(pos / 10000^(2i/D)), cos next."""
    if embed_dim % 2 != 0:
        raise ValueError("embed_dim must be even")
    pos = np.arange(length)[:, None]
    i2 = np.arange(0, embed_dim, 2)
    angle = pos / np.power(10000.0, i2 / embed_dim)
    pe = np.empty((length, embed_dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 at and below the diagonal, sentinel above."""
    if n < 1:
        raise ValueError("mask size must be >= 1")
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = MASK_SENTINEL
    return m


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

def _layout(config: ModelConfig):
    """Yield (name, shape, kind) for every learnable array, in fixed order.

    kind: 'proj' scaled random init, 'bias' zeros, 'gain' ones,
    'dec' zeros (decoder weights and biases start at zero so a fresh
    model is the zero-velocity baseline).
    """
    d, ff = config.embed_dim, config.ffn_mult * config.embed_dim
    for channel, in_dim, out_dim in (
            ("temporal", config.n_params, config.n_params),
            ("spatial", config.total, config.total)):
        yield f"{channel}.encoder.weight", (in_dim, d), "proj"
        yield f"{channel}.encoder.bias", (d,), "bias"
        for i in range(config.n_layers):
            b = f"{channel}.block{i}"
            yield f"{b}.ln1.gain", (d,), "gain"
            yield f"{b}.ln1.bias", (d,), "bias"
            yield f"{b}.attn.wq", (d, d), "proj"
            yield f"{b}.attn.wk", (d, d), "proj"
            yield f"{b}.attn.wv", (d, d), "proj"
            yield f"{b}.attn.wo", (d, d), "proj"
            yield f"{b}.ln2.gain", (d,), "gain"
            yield f"{b}.ln2.bias", (d,), "bias"
            yield f"{b}.ffn.w1", (d, ff), "proj"
            yield f"{b}.ffn.b1", (ff,), "bias"
            yield f"{b}.ffn.w2", (ff, d), "proj"
            yield f"{b}.ffn.b2", (d,), "bias"
        yield f"{channel}.decoder.weight", (d, out_dim), "dec"
        yield f"{channel}.decoder.bias", (out_dim,), "dec"


def _assemble(config: ModelConfig, tensors: dict) -> TwoChannelTransformer:
    def channel(name):
        blocks = []
        for i in range(config.n_layers):
            b = f"{name}.block{i}"
            blocks.append(BlockParams(
                ln1_gain=tensors[f"{b}.ln1.gain"],
                ln1_bias=tensors[f"{b}.ln1.bias"],
                attn=AttentionWeights(
                    wq=tensors[f"{b}.attn.wq"], wk=tensors[f"{b}.attn.wk"],
                    wv=tensors[f"{b}.attn.wv"], wo=tensors[f"{b}.attn.wo"]),
                ln2_gain=tensors[f"{b}.ln2.gain"],
                ln2_bias=tensors[f"{b}.ln2.bias"],
                ffn=FeedForwardWeights(
                    w1=tensors[f"{b}.ffn.w1"], b1=tensors[f"{b}.ffn.b1"],
                    w2=tensors[f"{b}.ffn.w2"], b2=tensors[f"{b}.ffn.b2"]),
            ))
        return ChannelParams(
            enc_w=tensors[f"{name}.encoder.weight"],
            enc_b=tensors[f"{name}.encoder.bias"],
            blocks=blocks,
            dec_w=tensors[f"{name}.decoder.weight"],
            dec_b=tensors[f"{name}.decoder.bias"])

    return TwoChannelTransformer(config=config, temporal=channel("temporal"),
                                 spatial=channel("spatial"))


def init_model(config: ModelConfig, seed: int = 0) -> TwoChannelTransformer:
    """Seeded init: projections ~ N(0, 1/fan_in), decoders exactly zero."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind in _layout(config):
        if kind == "proj":
            arr = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        elif kind == "gain":
            arr = np.ones(shape)
        else:  # bias / dec
            arr = np.zeros(shape)
        tensors[name] = Tensor(arr, requires_grad=True)
    return _assemble(config, tensors)


def named_params(model: TwoChannelTransformer) -> dict:
    """Name -> Tensor in the fixed layout order."""
    out = {}
    chans = {"temporal": model.temporal, "spatial": model.spatial}
    for name, _, _ in _layout(model.config):
        ch = chans[name.split(".", 1)[0]]
        part = name.split(".")
        if part[1] == "encoder":
            out[name] = ch.enc_w if part[2] == "weight" else ch.enc_b
        elif part[1] == "decoder":
            out[name] = ch.dec_w if part[2] == "weight" else ch.dec_b
        else:
            blk = ch.blocks[int(part[1][len("block"):])]
            if part[2] == "ln1":
                out[name] = blk.ln1_gain if part[3] == "gain" else blk.ln1_bias
            elif part[2] == "ln2":
                out[name] = blk.ln2_gain if part[3] == "gain" else blk.ln2_bias
            elif part[2] == "attn":
                out[name] = getattr(blk.attn, part[3])
            else:
                out[name] = getattr(blk.ffn, part[3])
    return out


def param_count(model: TwoChannelTransformer) -> int:
    """Exact number of learnable scalars, by enumeration."""
    return sum(t.size for t in named_params(model).values())


def param_count_formula(config: ModelConfig) -> int:
    """Closed form of the same count.

    Per channel with input width I and output width O:
        I*D + D                          encoder
      + L * (4*D^2                       q/k/v/o projections
             + 2*m*D^2 + m*D + D         feed-forward (m = ffn_mult)
             + 4*D)                      two layer norms
      + D*O + O                          decoder
    summed over the temporal (I = O = P) and spatial (I = O = T) channels.
    """
    d, m, layers = config.embed_dim, config.ffn_mult, config.n_layers
    per_layer = 4 * d * d + (2 * m * d * d + m * d + d) + 4 * d
    total = 0
    for width in (config.n_params, config.total):
        total += width * d + d + layers * per_layer + d * width + width
    return total


def flatten_params(model: TwoChannelTransformer) -> np.ndarray:
    return np.concatenate([t.data.reshape(-1) for t in named_params(model).values()])


def model_from_flat(config: ModelConfig, vec: Tensor) -> TwoChannelTransformer:
    """Build a model whose weights are tape-traced views of one flat vector.

    Gradients of any loss computed through the returned model flow back to
    ``vec``, which makes whole-model finite-difference checks a single
    grad_check call.
    """
    sizes = [(name, shape) for name, shape, _ in _layout(config)]
    need = sum(int(np.prod(s)) for _, s in sizes)
    if vec.size != need:
        raise ValueError(f"flat vector has {vec.size} entries, layout needs {need}")
    tensors = {}
    offset = 0
    for name, shape in sizes:
        n = int(np.prod(shape))
        tensors[name] = tz.reshape(tz.narrow(vec, 0, offset, offset + n), shape)
        offset += n
    return _assemble(config, tensors)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _dropout(x: Tensor, p: float, training: bool, rng) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return tz.mul(x, Tensor(keep))


def mha_forward(e: Tensor, weights: AttentionWeights, n_heads: int,
                mask: Optional[np.ndarray] = None,
                denominator: Optional[float] = None):
    """Multi-head self-attention over the token rows of ``e``.

    Returns (output [tokens x D], attention [H x tokens x tokens]). Every
    attention row sums to 1; masked entries are exactly 0.
    """
    tokens, d = e.shape
    if d % n_heads != 0:
        raise tz.ShapeError(f"embedding width {d} not divisible by {n_heads} heads")
    f = d // n_heads
    if denominator is None:
        denominator = math.sqrt(d)

    q = tz.matmul(e, weights.wq)
    k = tz.matmul(e, weights.wk)
    v = tz.matmul(e, weights.wv)
    qh = tz.transpose(tz.reshape(q, (tokens, n_heads, f)), (1, 0, 2))
    kh = tz.transpose(tz.reshape(k, (tokens, n_heads, f)), (1, 0, 2))
    vh = tz.transpose(tz.reshape(v, (tokens, n_heads, f)), (1, 0, 2))
    scores = tz.scale(tz.matmul(qh, tz.transpose(kh, (0, 2, 1))), 1.0 / denominator)
    attn = tz.softmax_masked(scores, mask)
    ctx = tz.matmul(attn, vh)
    merged = tz.reshape(tz.transpose(ctx, (1, 0, 2)), (tokens, d))
    return tz.matmul(merged, weights.wo), attn


def _block_forward(e: Tensor, block: BlockParams, config: ModelConfig,
                   mask, training: bool, rng) -> Tensor:
    h = tz.layer_norm(e, block.ln1_gain, block.ln1_bias)
    a, _ = mha_forward(h, block.attn, config.n_heads, mask, config.attn_denominator)
    e = tz.add(e, _dropout(a, config.dropout, training, rng))
    h = tz.layer_norm(e, block.ln2_gain, block.ln2_bias)
    f = tz.add_bias(tz.matmul(h, block.ffn.w1), block.ffn.b1)
    f = tz.add_bias(tz.matmul(tz.relu(f), block.ffn.w2), block.ffn.b2)
    return tz.add(e, _dropout(f, config.dropout, training, rng))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def temporal_channel_forward(x, channel: ChannelParams, config: ModelConfig,
                             training: bool = False, rng=None) -> Tensor:
    """Causally masked attention over time steps; output row t sees only
    input rows <= t."""
    x = _as_tensor(x)
    t = x.shape[0]
    e = tz.add_bias(tz.matmul(x, channel.enc_w), channel.enc_b)
    e = tz.add(e, Tensor(positional_encoding(t, config.embed_dim)))
    mask = causal_mask(t)
    for block in channel.blocks:
        e = _block_forward(e, block, config, mask, training, rng)
    return tz.add_bias(tz.matmul(e, channel.dec_w), channel.dec_b)


def spatial_channel_forward(x, channel: ChannelParams, config: ModelConfig,
                            training: bool = False, rng=None) -> Tensor:
    """Unmasked attention over the P parameter tokens; per head the
    attention matrix is P x P."""
    x = _as_tensor(x)
    xt = tz.transpose(x)
    e = tz.add_bias(tz.matmul(xt, channel.enc_w), channel.enc_b)
    e = tz.add(e, Tensor(positional_encoding(xt.shape[0], config.embed_dim)))
    for block in channel.blocks:
        e = _block_forward(e, block, config, None, training, rng)
    out = tz.add_bias(tz.matmul(e, channel.dec_w), channel.dec_b)
    return tz.transpose(out)


def model_forward(x, model: TwoChannelTransformer, training: bool = False,
                  rng=None) -> Tensor:
    """One pass: temporal output + spatial output + input residual."""
    x = _as_tensor(x)
    cfg = model.config
    if x.shape != (cfg.total, cfg.n_params):
        raise tz.ShapeError(
            f"model input must be {cfg.total} x {cfg.n_params}, got {x.shape}")
    model.forward_count += 1
    xt = temporal_channel_forward(x, model.temporal, cfg, training, rng)
    xs = spatial_channel_forward(x, model.spatial, cfg, training, rng)
    return tz.add(tz.add(xt, xs), x)


def predict(model: TwoChannelTransformer, prefix) -> np.ndarray:
    """Forecast T' future frames from the last N observed ones.

    Exactly one forward pass; no tape is recorded.
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    n = model.config.n_prefix
    if prefix.ndim != 2 or prefix.shape[0] < n:
        raise ValueError(
            f"prediction needs at least N={n} observed frames, got {prefix.shape}")
    x = build_padded_input(prefix[-n:], model.config.horizon)
    with tz.no_tape():
        out = model_forward(x, model, training=False)
    return out.data[n:].copy()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: TwoChannelTransformer, path) -> None:
    """Self-describing container: config integers, flags and every named
    weight as little-endian float64 with explicit shapes, plus a version
    tag."""
    arrays = {"format_version": np.int64(CHECKPOINT_VERSION)}
    cfg = model.config
    for name in _CONFIG_FIELDS:
        arrays[f"config.{name}"] = np.int64(getattr(cfg, name))
    arrays["config.dropout"] = np.float64(cfg.dropout)
    arrays["config.per_head_scale"] = np.int64(cfg.per_head_scale)
    for name, t in named_params(model).items():
        arrays[name] = t.data.astype("<f8")
    np.savez(path, **arrays)


def load_checkpoint(path) -> TwoChannelTransformer:
    with np.load(path) as z:
        if "format_version" not in z:
            raise ValueError(f"{path}: not a model checkpoint")
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        kwargs = {name: int(z[f"config.{name}"]) for name in _CONFIG_FIELDS}
        kwargs["dropout"] = float(z["config.dropout"])
        kwargs["per_head_scale"] = bool(int(z["config.per_head_scale"]))
        config = ModelConfig(**kwargs)
        tensors = {}
        for name, shape, _ in _layout(config):
            if name not in z:
                raise ValueError(f"{path}: missing weight '{name}'")
            arr = np.asarray(z[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(
                    f"{path}: weight '{name}' has shape {arr.shape}, expected {shape}")
            tensors[name] = Tensor(arr, requires_grad=True)
    return _assemble(config, tensors)
