"""Independent reference implementations used by the unit and acceptance tests."""

import math

import numpy as np

from amcvit.imaging import PowerMode
from amcvit.vit.model import ParameterSet, backward, cross_entropy, forward, parameter_shapes


def enhance_oracle(samples, plane, alpha, cutoff, power_mode=PowerMode.UNIT):
    """Brute-force double loop over pixels and samples, summing in sample order."""
    s, w, h = plane.scale, plane.width_px, plane.height_px
    points = []
    for z in samples:
        u = (z.real + s) * w / (2.0 * s)
        v = (s - z.imag) * h / (2.0 * s)
        if 0 <= u < w and 0 <= v < h:
            p = 1.0 if power_mode is PowerMode.UNIT else z.real * z.real + z.imag * z.imag
            points.append((u, v, p))
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for u, v, p in points:
                du, dv = u - (c + 0.5), v - (r + 0.5)
                d = math.sqrt(du * du + dv * dv)
                if d <= cutoff:
                    acc = acc + p * np.exp(np.float64(-alpha * d))
            out[r, c] = acc
    return out


def random_params(config, seed, std=0.5):
    """Dense float64 parameters so that every gradient path is exercised."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in parameter_shapes(config).items():
        a = rng.standard_normal(shape) * std
        if name.endswith("scale"):
            a = a + 1.0
        arrays[name] = a
    return ParameterSet(arrays)


def finite_difference_check(config, params, images, labels, eps=1e-5, floor=1e-6):
    """Max relative error per array between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps entries
    whose true gradient is exactly zero from dividing round-off by round-off.
    """
    _, grads = backward(images, labels, params, config)
    worst = {}
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = cross_entropy(forward(images, params, config), labels)
            flat[i] = old - eps
            down = cross_entropy(forward(images, params, config), labels)
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        a = grads[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        worst[name] = float(np.max(np.abs(a - num) / denom))
    return worst


def attention_loop(x, lp, heads):
    """Per-token, per-head loops for multi-head self-attention on a ``(T, D)`` input."""
    t_len, d = x.shape
    dh = d // heads
    q = x @ lp["attn.wq"] + lp["attn.bq"]
    k = x @ lp["attn.wk"] + lp["attn.bk"]
    v = x @ lp["attn.wv"] + lp["attn.bv"]
    ctx = np.zeros((t_len, d))
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(t_len):
            scores = [sum(q[i, c] * k[j, c] for c in range(cols.start, cols.stop)) / math.sqrt(dh)
                      for j in range(t_len)]
            m = max(scores)
            w = [math.exp(s - m) for s in scores]
            total = sum(w)
            for j in range(t_len):
                ctx[i, cols] += (w[j] / total) * v[j, cols]
    return ctx @ lp["attn.wo"] + lp["attn.bo"]


def unpatchify(patches, channels, height, width, patch):
    """Inverse of row-major, channel-major patch flattening for one image."""
    gh, gw = height // patch, width // patch
    img = np.zeros((channels, height, width), dtype=patches.dtype)
    for n in range(gh * gw):
        r, c = divmod(n, gw)
        img[:, r * patch:(r + 1) * patch, c * patch:(c + 1) * patch] = patches[n].reshape(channels, patch, patch)
    return img


def metrics_oracle(counts):
    """Per-class precision/recall/F1 from loops; undefined ratios become 0.0."""
    counts = np.asarray(counts)
    k = counts.shape[0]
    prec, rec, f1 = [], [], []
    for c in range(k):
        tp = int(counts[c, c])
        predicted = sum(int(counts[r, c]) for r in range(k))
        actual = sum(int(counts[c, j]) for j in range(k))
        p = tp / predicted if predicted else 0.0
        r = tp / actual if actual else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    acc = sum(int(counts[c, c]) for c in range(k)) / int(counts.sum())
    return acc, prec, rec, f1
