"""A small pre-norm vision transformer in numpy with hand-written gradients.

Image -> non-overlapping patches -> linear projection, class token and
positional embedding -> ``depth`` blocks of (LayerNorm, multi-head
self-attention, residual, LayerNorm, GELU MLP, residual) -> LayerNorm on the
class token -> 2 logits (0 = non-cancer, 1 = cancer).

All arithmetic is float64.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import substream
from .errors import ConfigError

LN_EPS = 1e-12
INIT_STD = 0.02
GELU_K = math.sqrt(2.0 / math.pi)
GELU_C = 0.044715

CHECKPOINT_MAGIC = b"TTVIT\0"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 2
    in_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("image_size", "patch_size", "embed_dim", "depth", "num_heads", "mlp_ratio"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.num_classes != 2:
            raise ConfigError("num_classes is fixed at 2")
        if self.in_channels != 1:
            raise ConfigError("in_channels is fixed at 1")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(cfg: ViTConfig) -> dict:
    """Name -> shape for every parameter, in canonical order."""
    d, h = cfg.embed_dim, cfg.hidden_dim
    shapes = {
        "patch_w": (cfg.patch_size ** 2 * cfg.in_channels, d),
        "patch_b": (d,),
        "cls_token": (d,),
        "pos_embed": (cfg.num_tokens, d),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
            p + "w1": (d, h), p + "b1": (h,),
            p + "w2": (h, d), p + "b2": (d,),
        })
    shapes.update({"norm_g": (d,), "norm_b": (d,), "head_w": (d, cfg.num_classes),
                   "head_b": (cfg.num_classes,)})
    return shapes


@dataclass(eq=False)
class TinyViTModel:
    config: ViTConfig
    params: dict

    def copy(self) -> "TinyViTModel":
        return TinyViTModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.params.values())


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) redrawn outside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return out * std


def init_model(cfg: ViTConfig) -> TinyViTModel:
    """Random init from ``cfg.seed``: truncated normal weights, zero biases, unit LayerNorm gains."""
    rng = substream(cfg.seed, "vit-init")
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = _trunc_normal(rng, shape, INIT_STD)
    return TinyViTModel(cfg, params)


# ----------------------------------------------------------------- primitives

def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("labels out of range")
    return float(-log_softmax(logits)[np.arange(labels.size), labels].mean())


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_K * (x + GELU_C * x ** 3)))


def _gelu_grad(x):
    t = np.tanh(GELU_K * (x + GELU_C * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_back(dy, g, cache):
    xhat, rstd = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=red)
    db = dy.sum(axis=red)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(axis=-1, keepdims=True)
                 - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, H, W) -> (B, num_patches, C * patch * patch), patches in row-major order."""
    b, c, h, w = x.shape
    gh, gw = h // patch, w // patch
    x = x.reshape(b, c, gh, patch, gw, patch)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(b, gh * gw, c * patch * patch)


def _split_heads(t, nh):
    b, n, d = t.shape
    return t.reshape(b, n, nh, d // nh).transpose(0, 2, 1, 3)


def _merge_heads(t):
    b, nh, n, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(b, n, nh * dh)


# ------------------------------------------------------------ forward/backward

def _check_batch(model: TinyViTModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    cfg = model.config
    if x.ndim == 3:
        x = x[None]
    expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"expected batch of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), "
                         f"got {x.shape}")
    return x


def _forward(model: TinyViTModel, x: np.ndarray, keep: bool):
    cfg, p = model.config, model.params
    nh = cfg.num_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    caches = []

    patches = patchify(x, cfg.patch_size)
    tok = patches @ p["patch_w"] + p["patch_b"]
    b = x.shape[0]
    cls = np.broadcast_to(p["cls_token"], (b, 1, cfg.embed_dim))
    z = np.concatenate([cls, tok], axis=1) + p["pos_embed"]

    for i in range(cfg.depth):
        q_ = f"blocks.{i}."
        h, ln1 = _layernorm(z, p[q_ + "ln1_g"], p[q_ + "ln1_b"])
        q = _split_heads(h @ p[q_ + "wq"] + p[q_ + "bq"], nh)
        k = _split_heads(h @ p[q_ + "wk"] + p[q_ + "bk"], nh)
        v = _split_heads(h @ p[q_ + "wv"] + p[q_ + "bv"], nh)
        attn = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
        o = _merge_heads(attn @ v)
        z = z + o @ p[q_ + "wo"] + p[q_ + "bo"]

        h2, ln2 = _layernorm(z, p[q_ + "ln2_g"], p[q_ + "ln2_b"])
        u = h2 @ p[q_ + "w1"] + p[q_ + "b1"]
        act = gelu(u)
        z = z + act @ p[q_ + "w2"] + p[q_ + "b2"]
        if keep:
            caches.append(dict(h=h, ln1=ln1, q=q, k=k, v=v, attn=attn, o=o, h2=h2, ln2=ln2, u=u, act=act))

    cls_out, lnf = _layernorm(z[:, 0], p["norm_g"], p["norm_b"])
    logits = cls_out @ p["head_w"] + p["head_b"]
    cache = dict(patches=patches, blocks=caches, cls_out=cls_out, lnf=lnf, batch=b)
    return logits, cache


def forward(model: TinyViTModel, batch, return_cache: bool = False):
    """Logits of shape (B, 2) for a (B, 1, S, S) batch of normalized images.

    With ``return_cache`` also returns intermediates (attention maps under
    ``cache["blocks"][i]["attn"]``).
    """
    x = _check_batch(model, batch)
    logits, cache = _forward(model, x, keep=return_cache)
    return (logits, cache) if return_cache else logits


def backward(model: TinyViTModel, batch, labels) -> tuple:
    """Mean cross-entropy and its exact gradient for every parameter."""
    x = _check_batch(model, batch)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != x.shape[0]:
        raise ValueError("labels and batch differ in length")
    cfg, p = model.config, model.params
    nh = cfg.num_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    logits, c = _forward(model, x, keep=True)
    loss = cross_entropy(logits, labels)
    b = x.shape[0]
    grads = {}

    dlogits = softmax(logits)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    grads["head_w"] = c["cls_out"].T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dcls, grads["norm_g"], grads["norm_b"] = _layernorm_back(dlogits @ p["head_w"].T, p["norm_g"], c["lnf"])
    dz = np.zeros((b, cfg.num_tokens, cfg.embed_dim))
    dz[:, 0] = dcls

    def wgrad(inp, dout):
        return inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])

    for i in reversed(range(cfg.depth)):
        q_ = f"blocks.{i}."
        bc = c["blocks"][i]
        # MLP branch
        dm = dz
        grads[q_ + "w2"] = wgrad(bc["act"], dm)
        grads[q_ + "b2"] = dm.sum(axis=(0, 1))
        du = (dm @ p[q_ + "w2"].T) * _gelu_grad(bc["u"])
        grads[q_ + "w1"] = wgrad(bc["h2"], du)
        grads[q_ + "b1"] = du.sum(axis=(0, 1))
        dh2 = du @ p[q_ + "w1"].T
        dx, grads[q_ + "ln2_g"], grads[q_ + "ln2_b"] = _layernorm_back(dh2, p[q_ + "ln2_g"], bc["ln2"])
        dz = dz + dx
        # attention branch
        dy = dz
        grads[q_ + "wo"] = wgrad(bc["o"], dy)
        grads[q_ + "bo"] = dy.sum(axis=(0, 1))
        do = _split_heads(dy @ p[q_ + "wo"].T, nh)
        attn = bc["attn"]
        dv = attn.transpose(0, 1, 3, 2) @ do
        da = do @ bc["v"].transpose(0, 1, 3, 2)
        ds = attn * (da - (da * attn).sum(axis=-1, keepdims=True)) * scale
        dq = _merge_heads(ds @ bc["k"])
        dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ bc["q"])
        dv = _merge_heads(dv)
        h = bc["h"]
        dh = np.zeros_like(h)
        for name, dt in (("q", dq), ("k", dk), ("v", dv)):
            grads[q_ + "w" + name] = wgrad(h, dt)
            grads[q_ + "b" + name] = dt.sum(axis=(0, 1))
            dh += dt @ p[q_ + "w" + name].T
        dx, grads[q_ + "ln1_g"], grads[q_ + "ln1_b"] = _layernorm_back(dh, p[q_ + "ln1_g"], bc["ln1"])
        dz = dz + dx

    grads["pos_embed"] = dz.sum(axis=0)
    grads["cls_token"] = dz[:, 0].sum(axis=0)
    dtok = dz[:, 1:]
    grads["patch_w"] = wgrad(c["patches"], dtok)
    grads["patch_b"] = dtok.sum(axis=(0, 1))
    return loss, {k: grads[k] for k in p}


def predict(model: TinyViTModel, batch) -> np.ndarray:
    return argmax_logits(forward(model, batch))


def argmax_logits(logits) -> np.ndarray:
    """Class index per row; ties resolve to class 0."""
    logits = np.atleast_2d(np.asarray(logits))
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


# ----------------------------------------------------------------- checkpoint

def checkpoint_bytes(model: TinyViTModel) -> bytes:
    """Versioned binary: magic, version, JSON header, raw little-endian float64 arrays."""
    header = json.dumps({
        "config": dataclasses.asdict(model.config),
        "arrays": [[name, list(arr.shape)] for name, arr in model.params.items()],
    }, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(header)), header]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params.values()]
    return b"".join(parts)


def save_checkpoint(model: TinyViTModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> TinyViTModel:
    return checkpoint_from_bytes(Path(path).read_bytes(), str(path))


def checkpoint_from_bytes(data: bytes, path: str = "<bytes>") -> TinyViTModel:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a TinyViT checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    cfg = ViTConfig(**header["config"])
    params = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    expected = param_shapes(cfg)
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise ValueError(f"{path}: parameter shapes do not match config")
    return TinyViTModel(cfg, params)
