"""Masked-transformer variational autoencoder over padded NURBS parameters.

Tokens are the ``d*d`` control-point slots. Each token is the sum of a
dense embedding of its ``(x, y, z, w)`` entry, dense embeddings of the two
(masked) knot vectors shared by every token, and a sine-cosine positional
code of the flattened index. Pre-norm transformer blocks with a key mask
keep padded slots out of attention; unmasked token states are mean-pooled
and projected to ``mu`` and ``log_var``. Three independent MLP decoders map
the latent back to ``p_w``, ``U`` and ``V``.

Parameters are plain ``dict[str, np.ndarray]``; forward passes wrap them in
:class:`~nurbsrep.autodiff.Tensor` when gradients are needed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, gelu, layer_norm, softmax
from .nurbs import NurbsSurface
from .preprocess import (
    PaddedBundle,
    PreprocessConfig,
    denormalize,
    from_model_range,
    normalize,
    pack,
    post_generation_repair,
    to_model_range,
    unpack,
)

log = logging.getLogger(__name__)

__all__ = [
    "VaeConfig",
    "TrainSettings",
    "NurbsFeature",
    "LossBreakdown",
    "Batch",
    "TrainingDiverged",
    "init_params",
    "positional_encoding",
    "make_batch",
    "embed_tokens",
    "encode",
    "encode_batch",
    "decode",
    "decode_batch",
    "loss",
    "batch_loss",
    "train",
    "reconstruct_surface",
    "count_params",
]


@dataclass(frozen=True)
class VaeConfig:
    pad_dim: int = 10
    knot_len: int = 10
    embed_dim: int = 64
    num_layers: int = 8
    num_heads: int = 4
    latent_dim: int = 48
    kl_weight: float = 1e-3
    seed: int = 0
    ffn_mult: int = 4
    decoder_hidden: int = 128
    use_positional: bool = True

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        PreprocessConfig(self.pad_dim, self.knot_len)

    @property
    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.pad_dim, self.knot_len)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 200
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 10
    clip_norm: float | None = 5.0


@dataclass
class NurbsFeature:
    z: np.ndarray
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if not (self.z.shape == self.mu.shape == self.log_var.shape) or self.z.ndim != 1:
            raise ValueError("z, mu and log_var must be equal-length vectors")


@dataclass
class LossBreakdown:
    recon_pw: float
    recon_u: float
    recon_v: float
    kl: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def init_params(config: VaeConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    e, k, d = config.embed_dim, config.knot_len, config.pad_dim
    h = config.ffn_mult * e
    dz, dh = config.latent_dim, config.decoder_hidden

    def dense(fan_in, fan_out, scale=1.0):
        std = scale * math.sqrt(2.0 / (fan_in + fan_out))
        return rng.normal(0.0, std, (fan_in, fan_out)), np.zeros(fan_out)

    params: dict[str, np.ndarray] = {}

    def add(name, fan_in, fan_out, scale=1.0):
        params[f"{name}.w"], params[f"{name}.b"] = dense(fan_in, fan_out, scale)

    add("embed_pw", 4, e)
    add("embed_u", k, e)
    add("embed_v", k, e)
    for i in range(config.num_layers):
        pre = f"block{i}"
        params[f"{pre}.ln1.g"] = np.ones(e)
        params[f"{pre}.ln1.b"] = np.zeros(e)
        add(f"{pre}.qkv", e, 3 * e)
        add(f"{pre}.proj", e, e, 1.0 / math.sqrt(2 * config.num_layers))
        params[f"{pre}.ln2.g"] = np.ones(e)
        params[f"{pre}.ln2.b"] = np.zeros(e)
        add(f"{pre}.ffn1", e, h)
        add(f"{pre}.ffn2", h, e, 1.0 / math.sqrt(2 * config.num_layers))
    params["ln_f.g"] = np.ones(e)
    params["ln_f.b"] = np.zeros(e)
    add("head", e, 2 * dz, 0.1)
    for name, out in (("dec_pw", d * d * 4), ("dec_u", k), ("dec_v", k)):
        add(f"{name}.0", dz, dh)
        add(f"{name}.1", dh, out)
    return params


def count_params(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def positional_encoding(num_positions: int, dim: int) -> np.ndarray:
    """Interleaved sine/cosine codes: ``sin`` on even, ``cos`` on odd columns."""
    pos = np.arange(num_positions)[:, None]
    i = np.arange(0, dim, 2)
    freq = 1.0 / (10000.0 ** (i / dim))
    pe = np.zeros((num_positions, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)[:, : dim // 2]
    return pe


@dataclass
class Batch:
    """Model-range bundles stacked along a leading batch axis."""

    p_w: np.ndarray      # (B, T, 4)
    knots_u: np.ndarray  # (B, k)
    knots_v: np.ndarray  # (B, k)
    mask: np.ndarray     # (B, T) bool
    mask_u: np.ndarray   # (B, k) bool
    mask_v: np.ndarray   # (B, k) bool
    bundles: list = field(default_factory=list, repr=False)

    def __len__(self):
        return self.p_w.shape[0]


def make_batch(bundles) -> Batch:
    """Stack bundles that are already in model range."""
    bundles = list(bundles)
    d = bundles[0].pad_dim
    T = d * d
    pw = np.stack([b.p_w.reshape(T, 4) for b in bundles])
    ku = np.stack([b.knots_u for b in bundles])
    kv = np.stack([b.knots_v for b in bundles])
    mask = np.stack([b.mask.reshape(T) for b in bundles])
    km = [b.knot_masks() for b in bundles]
    mu = np.stack([a for a, _ in km])
    mv = np.stack([b for _, b in km])
    return Batch(pw, ku, kv, mask, mu, mv, bundles)


def _check_batch(batch: Batch, config: VaeConfig):
    T = config.pad_dim ** 2
    if batch.p_w.shape[1:] != (T, 4) or batch.knots_u.shape[1] != config.knot_len:
        raise ValueError(
            f"bundle shape does not match config (d={config.pad_dim}, k={config.knot_len})"
        )
    if not np.all(batch.mask.any(axis=1)):
        raise ValueError("bundle with no unmasked control points")


def _dense(x, P, name):
    return x @ P[f"{name}.w"] + P[f"{name}.b"]


def _wrap(params, requires_grad):
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def embed_tokens(batch: Batch, P: dict, config: VaeConfig):
    """Token tensor ``(B, d*d, e)`` and key mask ``(B, d*d)``."""
    _check_batch(batch, config)
    T, e = config.pad_dim ** 2, config.embed_dim
    ku = Tensor(batch.knots_u * batch.mask_u)
    kv = Tensor(batch.knots_v * batch.mask_v)
    tok = _dense(Tensor(batch.p_w), P, "embed_pw")
    knot_emb = _dense(ku, P, "embed_u") + _dense(kv, P, "embed_v")  # (B, e)
    tok = tok + knot_emb.reshape(len(batch), 1, e)
    if config.use_positional:
        tok = tok + positional_encoding(T, e)
    return tok, batch.mask


def _attention(x, P, pre, key_mask, config):
    B, T, e = x.shape
    H = config.num_heads
    dh = e // H
    qkv = _dense(x, P, f"{pre}.qkv")

    def heads(t):
        return t.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

    q = heads(qkv[:, :, :e])
    k = heads(qkv[:, :, e:2 * e])
    v = heads(qkv[:, :, 2 * e:])
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    att = softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    out = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, e)
    return _dense(out, P, f"{pre}.proj")


def _encode_graph(batch: Batch, P: dict, config: VaeConfig):
    x, key_mask = embed_tokens(batch, P, config)
    for i in range(config.num_layers):
        pre = f"block{i}"
        x = x + _attention(layer_norm(x, P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"]), P, pre, key_mask, config)
        hdn = gelu(_dense(layer_norm(x, P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"]), P, f"{pre}.ffn1"))
        x = x + _dense(hdn, P, f"{pre}.ffn2")
    x = layer_norm(x, P["ln_f.g"], P["ln_f.b"])
    w = key_mask.astype(np.float64)
    pooled = (x * w[:, :, None]).sum(axis=1) * (1.0 / w.sum(axis=1, keepdims=True))
    stats = _dense(pooled, P, "head")
    dz = config.latent_dim
    return stats[:, :dz], stats[:, dz:]


def _decode_graph(z, P: dict, config: VaeConfig):
    B = z.shape[0]
    d, k = config.pad_dim, config.knot_len
    outs = []
    for name in ("dec_pw", "dec_u", "dec_v"):
        outs.append(_dense(gelu(_dense(z, P, f"{name}.0")), P, f"{name}.1"))
    return outs[0].reshape(B, d * d, 4), outs[1], outs[2]


def encode_batch(batch: Batch, params, config: VaeConfig, rng=None, deterministic=False):
    """Return ``(z, mu, log_var)`` arrays of shape ``(B, latent_dim)``."""
    P = _wrap(params, False)
    mu, lv = _encode_graph(batch, P, config)
    mu, lv = mu.data, lv.data
    if deterministic:
        return mu.copy(), mu, lv
    rng = np.random.default_rng() if rng is None else rng
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * lv) * eps, mu, lv


def encode(bundle: PaddedBundle, params, config: VaeConfig, rng=None,
           deterministic: bool = False) -> NurbsFeature:
    """Encode one model-range bundle."""
    z, mu, lv = encode_batch(make_batch([bundle]), params, config, rng, deterministic)
    return NurbsFeature(z[0], mu[0], lv[0])


def decode_batch(z: np.ndarray, params, config: VaeConfig):
    P = _wrap(params, False)
    pw, ku, kv = _decode_graph(Tensor(np.atleast_2d(z)), P, config)
    d = config.pad_dim
    return pw.data.reshape(-1, d, d, 4), ku.data, kv.data


def decode(feature: NurbsFeature, params, config: VaeConfig,
           like: PaddedBundle | None = None) -> PaddedBundle:
    """Decode a latent into a model-range bundle.

    The decoder emits full ``(d, d, 4)`` and length-``k`` tensors. When
    ``like`` is given its mask and true lengths are carried over, and
    entries outside them are zeroed; otherwise the whole tensor is active.
    """
    if feature.z.shape != (config.latent_dim,):
        raise ValueError(f"latent must have length {config.latent_dim}")
    pw, ku, kv = decode_batch(feature.z, params, config)
    pw, ku, kv = pw[0], ku[0], kv[0]
    d, k = config.pad_dim, config.knot_len
    if like is None:
        return PaddedBundle(pw, ku, kv, np.ones((d, d), dtype=bool), (d, d), (k, k))
    mu_, mv_ = like.knot_masks()
    return PaddedBundle(
        np.where(like.mask[:, :, None], pw, 0.0), np.where(mu_, ku, 0.0), np.where(mv_, kv, 0.0),
        like.mask.copy(), like.true_dims, like.true_knot_lens, like.record,
    )


def _loss_graph(batch: Batch, P: dict, config: VaeConfig, eps: np.ndarray, beta: float):
    mu, lv = _encode_graph(batch, P, config)
    z = mu + (lv * 0.5).exp() * eps
    pw, ku, kv = _decode_graph(z, P, config)
    B = len(batch)
    m = batch.mask[:, :, None].astype(np.float64)
    r_pw = (((pw - batch.p_w) * m) ** 2).sum() * (1.0 / B)
    r_u = (((ku - batch.knots_u) * batch.mask_u) ** 2).sum() * (1.0 / B)
    r_v = (((kv - batch.knots_v) * batch.mask_v) ** 2).sum() * (1.0 / B)
    kl = ((mu * mu + lv.exp() - 1.0 - lv) * 0.5).sum() * (1.0 / B)
    total = r_pw + r_u + r_v + kl * beta
    return total, (r_pw, r_u, r_v, kl)


def batch_loss(batch: Batch, params, config: VaeConfig, eps: np.ndarray,
               beta: float | None = None, with_grad: bool = False):
    """Mean-over-batch loss; optionally returns gradients for every parameter."""
    beta = config.kl_weight if beta is None else beta
    P = _wrap(params, with_grad)
    total, parts = _loss_graph(batch, P, config, eps, beta)
    lb = LossBreakdown(*(float(t.data) for t in parts), total=float(total.data))
    if not with_grad:
        return lb, None
    total.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    return lb, grads


def loss(bundle: PaddedBundle, reconstructed: PaddedBundle, mu, log_var, beta: float) -> LossBreakdown:
    """Reconstruction + KL loss for one bundle against a reconstruction.

    Squared errors are summed over ``bundle``'s unmasked control points and
    true-length knot entries.
    """
    if bundle.p_w.shape != reconstructed.p_w.shape or bundle.knot_len != reconstructed.knot_len:
        raise ValueError("bundle shapes differ")
    mu = np.asarray(mu, dtype=np.float64)
    lv = np.asarray(log_var, dtype=np.float64)
    mu_, mv_ = bundle.knot_masks()
    diff = (reconstructed.p_w - bundle.p_w)[bundle.mask]
    r_pw = float(np.sum(diff * diff))
    r_u = float(np.sum((reconstructed.knots_u - bundle.knots_u)[mu_] ** 2))
    r_v = float(np.sum((reconstructed.knots_v - bundle.knots_v)[mv_] ** 2))
    kl = float(0.5 * np.sum(mu * mu + np.exp(lv) - 1.0 - lv))
    return LossBreakdown(r_pw, r_u, r_v, kl, r_pw + r_u + r_v + beta * kl)


def train(corpus, config: VaeConfig, settings: TrainSettings = TrainSettings(),
          params: dict | None = None, progress=None):
    """SGD with momentum over model-range bundles.

    Returns ``(params, history)`` with one batch-size-weighted mean
    :class:`LossBreakdown` per epoch. Shuffling and noise draws come from a
    generator seeded with ``config.seed``.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty training corpus")
    params = init_params(config) if params is None else {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(config.seed + 1)
    history: list[LossBreakdown] = []
    N = len(corpus)
    bs = max(1, min(settings.batch_size, N))
    for epoch in range(settings.epochs):
        order = rng.permutation(N)
        acc = np.zeros(5)
        for start in range(0, N, bs):
            idx = order[start:start + bs]
            batch = make_batch([corpus[i] for i in idx])
            eps = rng.standard_normal((len(idx), config.latent_dim))
            lb, grads = batch_loss(batch, params, config, eps, with_grad=True)
            vals = np.array([lb.recon_pw, lb.recon_u, lb.recon_v, lb.kl, lb.total])
            if not np.all(np.isfinite(vals)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}: {lb}")
            acc += vals * len(idx)
            scale = 1.0
            if settings.clip_norm is not None:
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gnorm > settings.clip_norm:
                    scale = settings.clip_norm / gnorm
            for k, g in grads.items():
                v = velocity[k]
                v *= settings.momentum
                v += g * scale
                params[k] = params[k] - settings.lr * v
        mean = acc / N
        history.append(LossBreakdown(*(float(x) for x in mean)))
        if progress is not None:
            progress(epoch + 1, history[-1])
        log.debug("epoch %d loss %.6g", epoch + 1, mean[-1])
    return params, history


def reconstruct_surface(surface: NurbsSurface, params, config: VaeConfig) -> NurbsSurface:
    """normalize -> pack -> [-1,1] -> encode(mu) -> decode -> [0,1] -> repair -> unpack -> denormalize."""
    normed, record = normalize(surface)
    bundle = to_model_range(pack(normed, config.preprocess, record))
    feat = encode(bundle, params, config, deterministic=True)
    out = decode(feat, params, config, like=bundle)
    clipped = PaddedBundle(
        np.clip(out.p_w, -1.0, 1.0), np.clip(out.knots_u, -1.0, 1.0), np.clip(out.knots_v, -1.0, 1.0),
        out.mask, out.true_dims, out.true_knot_lens, out.record,
    )
    repaired = post_generation_repair(from_model_range(clipped))
    return denormalize(unpack(repaired, label=surface.label), record)
