"""Vision Transformer forward and backward passes in numpy.

Parameters live in a flat, ordered ``name -> array`` mapping. Blocks are
pre-norm: ``x + MHSA(LN(x))`` followed by ``x + MLP(LN(x))`` with an exact
(erf) GELU. The class token's final state, after a last LayerNorm, feeds a
linear classification head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from amcvit.errors import ShapeError
from amcvit.rng import child_seed, make_rng

LN_EPS = 1e-6
HEAD_NAMES = ("head.weight", "head.bias")


@dataclass(frozen=True)
class ViTConfig:
    image_hw: tuple[int, int] = (64, 64)
    channels: int = 3
    patch: int = 8
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    mlp_dim: int = 128
    n_classes: int = 10
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "image_hw", tuple(int(v) for v in self.image_hw))
        h, w = self.image_hw
        if self.patch < 1 or h % self.patch or w % self.patch:
            raise ShapeError(f"image {h}x{w} is not divisible into {self.patch}px patches")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ShapeError(f"embed_dim {self.embed_dim} is not divisible by {self.heads} heads")
        if self.n_classes < 2:
            raise ShapeError("n_classes must be at least 2")
        if min(self.channels, self.mlp_dim, self.embed_dim) < 1 or self.layers < 0:
            raise ShapeError("channels, embed_dim and mlp_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ShapeError("dropout must lie in [0, 1)")

    @property
    def n_patches(self) -> int:
        h, w = self.image_hw
        return (h * w) // (self.patch * self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_hw"] = list(self.image_hw)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ViTConfig:
        return cls(**{**d, "image_hw": tuple(d["image_hw"])})

    @classmethod
    def full(cls) -> ViTConfig:
        return cls((224, 224), 3, 16, 768, 12, 12, 3072, 10)

    @classmethod
    def desk(cls) -> ViTConfig:
        return cls((64, 64), 3, 8, 64, 4, 4, 128, 10)

    @classmethod
    def tiny(cls, n_classes: int = 10) -> ViTConfig:
        return cls((8, 8), 3, 4, 8, 1, 2, 16, n_classes)


PRESETS = {"full": ViTConfig.full, "desk": ViTConfig.desk, "tiny": ViTConfig.tiny}


def parameter_shapes(config: ViTConfig) -> dict[str, tuple[int, ...]]:
    d, m = config.embed_dim, config.mlp_dim
    shapes = {
        "patch_embed.weight": (config.patch_dim, d),
        "cls_token": (d,),
        "pos_embed": (config.n_patches + 1, d),
    }
    for layer in range(config.layers):
        p = f"blocks.{layer}."
        shapes.update({
            p + "ln1.scale": (d,), p + "ln1.shift": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d), p + "attn.bk": (d,),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.scale": (d,), p + "ln2.shift": (d,),
            p + "mlp.w1": (d, m), p + "mlp.b1": (m,),
            p + "mlp.w2": (m, d), p + "mlp.b2": (d,),
        })
    shapes.update({
        "ln_final.scale": (d,), "ln_final.shift": (d,),
        "head.weight": (d, config.n_classes), "head.bias": (config.n_classes,),
    })
    return shapes


class ParameterSet:
    """Named trainable arrays plus a per-array freeze flag."""

    def __init__(self, arrays: dict[str, np.ndarray], frozen=None):
        self.arrays = dict(arrays)
        self.frozen = {name: False for name in self.arrays}
        for name in frozen or ():
            if name not in self.arrays:
                raise KeyError(name)
            self.frozen[name] = True

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    @property
    def dtype(self):
        return self.arrays["cls_token"].dtype

    def copy(self) -> ParameterSet:
        return ParameterSet({k: v.copy() for k, v in self.arrays.items()},
                            [k for k, f in self.frozen.items() if f])

    def astype(self, dtype) -> ParameterSet:
        return ParameterSet({k: v.astype(dtype) for k, v in self.arrays.items()},
                            [k for k, f in self.frozen.items() if f])

    def freeze_all_but(self, names) -> None:
        keep = set(names)
        for k in self.frozen:
            self.frozen[k] = k not in keep

    def trainable(self) -> list[str]:
        return [k for k, f in self.frozen.items() if not f]

    def check(self, config: ViTConfig) -> None:
        expected = parameter_shapes(config)
        if list(expected) != list(self.arrays):
            missing = set(expected) ^ set(self.arrays)
            raise ShapeError(f"parameter names do not match the config: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.arrays[name].shape}, config expects {shape}")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(config: ViTConfig, seed: int = 0, dtype=np.float32) -> ParameterSet:
    """Truncated-normal(0.02) weights and positional embeddings; zero biases, class token and head."""
    rng = make_rng(child_seed(seed, "init"))
    arrays = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in HEAD_NAMES or name == "cls_token" or leaf.startswith("b") or leaf == "shift":
            a = np.zeros(shape)
        elif leaf == "scale":
            a = np.ones(shape)
        else:
            a = _trunc_normal(rng, shape, 0.02)
        arrays[name] = a.astype(dtype)
    return ParameterSet(arrays)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """Split ``(..., C, H, W)`` images into ``(..., N, P*P*C)`` patch rows.

    Patches are numbered row-major over the image; inside a patch the vector
    is channel-major (all pixels of channel 0, then channel 1, ...).
    """
    images = np.asarray(images)
    if images.ndim < 3:
        raise ShapeError(f"expected (..., C, H, W) images, got shape {images.shape}")
    *lead, c, h, w = images.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} is not divisible into {patch}px patches")
    gh, gw = h // patch, w // patch
    x = images.reshape(*lead, c, gh, patch, gw, patch)
    n = len(lead)
    x = x.transpose(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return x.reshape(*lead, gh * gw, c * patch * patch)


def embed(patches: np.ndarray, params) -> np.ndarray:
    """Token sequence ``[x_class; x_1 E; ...; x_N E] + E_pos``."""
    e, cls, pos = params["patch_embed.weight"], params["cls_token"], params["pos_embed"]
    if patches.shape[-1] != e.shape[0] or patches.shape[-2] + 1 != pos.shape[0]:
        raise ShapeError(f"patches {patches.shape} do not fit E {e.shape} / E_pos {pos.shape}")
    tokens = patches @ e
    cls = np.broadcast_to(cls, (*tokens.shape[:-2], 1, cls.shape[-1]))
    return np.concatenate([cls, tokens], axis=-2) + pos


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def layer_norm(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv)


def _layer_norm_backward(dy, scale, cache):
    xhat, inv = cache
    dxhat = dy * scale
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _split_heads(x, heads):
    *lead, t, d = x.shape
    return x.reshape(*lead, t, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(x):
    *lead, h, t, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, t, h * dh)


def layer_params(params, layer: int) -> dict[str, np.ndarray]:
    prefix = f"blocks.{layer}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def attention(x: np.ndarray, lp: dict, heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over the token axis of ``(..., T, D)``."""
    d = x.shape[-1]
    if d % heads:
        raise ShapeError(f"model width {d} is not divisible by {heads} heads")
    q = _split_heads(x @ lp["attn.wq"] + lp["attn.bq"], heads)
    k = _split_heads(x @ lp["attn.wk"] + lp["attn.bk"], heads)
    v = _split_heads(x @ lp["attn.wv"] + lp["attn.bv"], heads)
    weights = softmax(q @ k.swapaxes(-1, -2) / math.sqrt(d // heads))
    ctx = _merge_heads(weights @ v)
    out = ctx @ lp["attn.wo"] + lp["attn.bo"]
    if return_weights:
        return out, weights
    return out


def _dropout_mask(rng, shape, rate, dtype):
    if rng is None or rate == 0.0:
        return None
    return ((rng.random(shape) >= rate) / (1.0 - rate)).astype(dtype)


def encoder_layer(x: np.ndarray, lp: dict, heads: int, rng=None, dropout: float = 0.0, cache=None):
    """Pre-norm block: ``x + MHSA(LN(x))`` then ``+ MLP_GELU(LN(.))``."""
    a, ln1 = layer_norm(x, lp["ln1.scale"], lp["ln1.shift"])
    d = x.shape[-1]
    q = _split_heads(a @ lp["attn.wq"] + lp["attn.bq"], heads)
    k = _split_heads(a @ lp["attn.wk"] + lp["attn.bk"], heads)
    v = _split_heads(a @ lp["attn.wv"] + lp["attn.bv"], heads)
    weights = softmax(q @ k.swapaxes(-1, -2) / math.sqrt(d // heads))
    ctx = _merge_heads(weights @ v)
    attn_out = ctx @ lp["attn.wo"] + lp["attn.bo"]
    mask1 = _dropout_mask(rng, attn_out.shape, dropout, x.dtype)
    if mask1 is not None:
        attn_out = attn_out * mask1
    x1 = x + attn_out

    b, ln2 = layer_norm(x1, lp["ln2.scale"], lp["ln2.shift"])
    pre = b @ lp["mlp.w1"] + lp["mlp.b1"]
    hidden = gelu(pre)
    mlp_out = hidden @ lp["mlp.w2"] + lp["mlp.b2"]
    mask2 = _dropout_mask(rng, mlp_out.shape, dropout, x.dtype)
    if mask2 is not None:
        mlp_out = mlp_out * mask2
    if cache is not None:
        cache.update(a=a, ln1=ln1, q=q, k=k, v=v, weights=weights, ctx=ctx, mask1=mask1,
                     b=b, ln2=ln2, pre=pre, hidden=hidden, mask2=mask2)
    return x1 + mlp_out


def _encoder_layer_backward(dout, lp, heads, c):
    grads = {}
    dx1 = dout
    dmlp = dout if c["mask2"] is None else dout * c["mask2"]
    red = tuple(range(dout.ndim - 1))
    grads["mlp.w2"] = np.tensordot(c["hidden"], dmlp, axes=(red, red))
    grads["mlp.b2"] = dmlp.sum(axis=red)
    dpre = (dmlp @ lp["mlp.w2"].T) * _gelu_grad(c["pre"])
    grads["mlp.w1"] = np.tensordot(c["b"], dpre, axes=(red, red))
    grads["mlp.b1"] = dpre.sum(axis=red)
    db = dpre @ lp["mlp.w1"].T
    dx1_ln, grads["ln2.scale"], grads["ln2.shift"] = _layer_norm_backward(db, lp["ln2.scale"], c["ln2"])
    dx1 = dx1 + dx1_ln

    dattn = dx1 if c["mask1"] is None else dx1 * c["mask1"]
    grads["attn.wo"] = np.tensordot(c["ctx"], dattn, axes=(red, red))
    grads["attn.bo"] = dattn.sum(axis=red)
    dctx = _split_heads(dattn @ lp["attn.wo"].T, heads)
    weights, q, k, v = c["weights"], c["q"], c["k"], c["v"]
    dweights = dctx @ v.swapaxes(-1, -2)
    dv = weights.swapaxes(-1, -2) @ dctx
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dscores /= math.sqrt(q.shape[-1])
    dq = _merge_heads(dscores @ k)
    dk = _merge_heads(dscores.swapaxes(-1, -2) @ q)
    dv = _merge_heads(dv)
    a = c["a"]
    da = 0
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        grads[f"attn.w{name}"] = np.tensordot(a, dproj, axes=(red, red))
        grads[f"attn.b{name}"] = dproj.sum(axis=red)
        da = da + dproj @ lp[f"attn.w{name}"].T
    dx, grads["ln1.scale"], grads["ln1.shift"] = _layer_norm_backward(da, lp["ln1.scale"], c["ln1"])
    return dx1 + dx, grads


def _check_images(images, config: ViTConfig):
    images = np.asarray(images)
    expected = (config.channels, *config.image_hw)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f"batch has shape {images.shape}, config expects (B, {', '.join(map(str, expected))})")
    return images


def forward(images, params, config: ViTConfig, train_mode: bool = False, seed: int | None = None, cache=None):
    """Logits ``(B, n_classes)`` for a ``(B, C, H, W)`` image batch.

    Dropout is applied only when ``train_mode`` is set and a ``seed`` is supplied.
    """
    images = _check_images(images, config)
    dtype = params["cls_token"].dtype
    rng = make_rng(seed) if (train_mode and seed is not None and config.dropout > 0) else None
    patches = patchify(images.astype(dtype, copy=False), config.patch)
    x = embed(patches, params)
    mask0 = _dropout_mask(rng, x.shape, config.dropout, dtype)
    if mask0 is not None:
        x = x * mask0
    layer_caches = []
    for layer in range(config.layers):
        lc = {} if cache is not None else None
        x = encoder_layer(x, layer_params(params, layer), config.heads, rng, config.dropout, lc)
        layer_caches.append(lc)
    y, lnf = layer_norm(x, params["ln_final.scale"], params["ln_final.shift"])
    feat = y[:, 0, :]
    logits = feat @ params["head.weight"] + params["head.bias"]
    if cache is not None:
        cache.update(patches=patches, mask0=mask0, layers=layer_caches, lnf=lnf, feat=feat,
                     seq_shape=x.shape)
    return logits


def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("label outside [0, n_classes)")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(labels.size), labels]))


def backward(images, labels, params: ParameterSet, config: ViTConfig, train_mode: bool = False,
             seed: int | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of the mean cross-entropy.

    Frozen arrays get zero gradients; when only the head is trainable the pass
    stops at the head.
    """
    cache = {}
    logits = forward(images, params, config, train_mode, seed, cache)
    loss = cross_entropy(logits, labels)
    labels = np.asarray(labels)
    bsz = labels.size
    dlogits = softmax(logits.astype(np.float64))
    dlogits[np.arange(bsz), labels] -= 1.0
    dlogits = (dlogits / bsz).astype(logits.dtype)

    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    grads["head.weight"] = cache["feat"].T @ dlogits
    grads["head.bias"] = dlogits.sum(axis=0)
    trainable = set(params.trainable())
    if trainable <= set(HEAD_NAMES):
        for name in HEAD_NAMES:
            if name not in trainable:
                grads[name] = np.zeros_like(grads[name])
        return loss, grads

    dfeat = dlogits @ params["head.weight"].T
    dy = np.zeros(cache["seq_shape"], dtype=dfeat.dtype)
    dy[:, 0, :] = dfeat
    dx, grads["ln_final.scale"], grads["ln_final.shift"] = _layer_norm_backward(
        dy, params["ln_final.scale"], cache["lnf"])
    for layer in reversed(range(config.layers)):
        dx, lg = _encoder_layer_backward(dx, layer_params(params, layer), config.heads, cache["layers"][layer])
        for k, g in lg.items():
            grads[f"blocks.{layer}.{k}"] = g
    if cache["mask0"] is not None:
        dx = dx * cache["mask0"]
    grads["pos_embed"] = dx.sum(axis=0)
    grads["cls_token"] = dx[:, 0, :].sum(axis=0)
    patches = cache["patches"]
    grads["patch_embed.weight"] = np.tensordot(patches, dx[:, 1:, :], axes=((0, 1), (0, 1)))

    for name, frozen in params.frozen.items():
        if frozen:
            grads[name] = np.zeros_like(params[name])
        else:
            grads[name] = grads[name].astype(params[name].dtype, copy=False)
    return loss, grads
