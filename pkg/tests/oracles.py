"""Independent reference implementations used as test oracles.

Everything here is written with explicit Python loops in float64 and shares
no code with the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def conv1d_naive(x, w, b, stride=1, padding="same"):
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    if padding == "same":
        left = (k - 1) // 2
        right = k - 1 - left
    else:
        left = right = 0
    padded = length + left + right
    lout = (padded - k) // stride + 1
    out = np.zeros((bsz, cout, lout))
    for n in range(bsz):
        for o in range(cout):
            for i in range(lout):
                acc = 0.0 if b is None else float(b[o])
                for c in range(cin):
                    for j in range(k):
                        pos = i * stride + j - left
                        if 0 <= pos < length:
                            acc += float(x[n, c, pos]) * float(w[o, c, j])
                out[n, o, i] = acc
    return out


def dense_naive(x, w, b):
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros((flat.shape[0], w.shape[1]))
    for r in range(flat.shape[0]):
        for o in range(w.shape[1]):
            acc = float(b[o])
            for i in range(w.shape[0]):
                acc += float(flat[r, i]) * float(w[i, o])
            out[r, o] = acc
    return out.reshape(x.shape[:-1] + (w.shape[1],))


def layernorm_naive(x, gamma, beta, eps):
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros(flat.shape)
    d = flat.shape[1]
    for r in range(flat.shape[0]):
        mu = sum(float(v) for v in flat[r]) / d
        var = sum((float(v) - mu) ** 2 for v in flat[r]) / d
        for i in range(d):
            out[r, i] = (float(flat[r, i]) - mu) / math.sqrt(var + eps) * float(gamma[i]) + float(beta[i])
    return out.reshape(x.shape)


def batchnorm_naive(x, gamma, beta, mean, var, eps, training):
    bsz, ch, length = x.shape
    out = np.zeros(x.shape)
    for c in range(ch):
        vals = [float(x[n, c, t]) for n in range(bsz) for t in range(length)]
        if training:
            mu = sum(vals) / len(vals)
            v = sum((t - mu) ** 2 for t in vals) / len(vals)
        else:
            mu, v = float(mean[c]), float(var[c])
        for n in range(bsz):
            for t in range(length):
                out[n, c, t] = (float(x[n, c, t]) - mu) / math.sqrt(v + eps) * float(gamma[c]) + float(beta[c])
    return out


def softmax_naive(row):
    m = max(float(v) for v in row)
    e = [math.exp(float(v) - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def mha_naive(x, wts, heads):
    """Multi-head self-attention; ``wts`` maps wq,bq,...,wo,bo to arrays (``w`` is [in, out])."""
    bsz, n, d = x.shape
    dh = d // heads
    out = np.zeros(x.shape)
    for s in range(bsz):
        q = dense_naive(x[s], wts["wq"], wts["bq"])
        k = dense_naive(x[s], wts["wk"], wts["bk"])
        v = dense_naive(x[s], wts["wv"], wts["bv"])
        ctx = np.zeros((n, d))
        for h in range(heads):
            cols = slice(h * dh, (h + 1) * dh)
            for i in range(n):
                scores = [sum(q[i, cols][t] * k[j, cols][t] for t in range(dh)) / math.sqrt(dh) for j in range(n)]
                p = softmax_naive(scores)
                for t in range(dh):
                    ctx[i, h * dh + t] = sum(p[j] * v[j, cols][t] for j in range(n))
        out[s] = dense_naive(ctx, wts["wo"], wts["bo"])
    return out


def expected_parameter_count(arch, num_features, num_classes, conv_channels=(32, 64), kernel=3,
                             d_model=64, encoders=1, ff=128):
    """Closed-form parameter count from layer shapes."""
    if arch == "logistic":
        return num_features * num_classes + num_classes
    total = 0
    cin = 1
    for ch in conv_channels:
        total += ch * cin * kernel + ch  # conv weight + bias
        total += 2 * ch  # batch-norm gamma, beta
        cin = ch
    if arch == "plain_cnn":
        return total + cin * num_classes + num_classes
    d = d_model
    total += cin * d + d  # projection
    block = 2 * d + 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d)
    total += encoders * block
    return total + d * num_classes + num_classes


@dataclass
class BruteCounts:
    tp: int
    tn: int
    fp: int
    fn: int
    matrix: np.ndarray


def brute_confusion(preds, labels, k, negative=0):
    m = np.zeros((k, k), dtype=np.int64)
    tp = tn = fp = fn = 0
    for p, t in zip(preds, labels):
        m[int(t), int(p)] += 1
        if t == negative and p == negative:
            tn += 1
        elif t == negative:
            fp += 1
        elif p == negative:
            fn += 1
        else:
            tp += 1
    return BruteCounts(tp, tn, fp, fn, m)


def brute_scores(c: BruteCounts):
    total = c.tp + c.tn + c.fp + c.fn
    prec = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    rec = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"accuracy": (c.tp + c.tn) / total, "precision": prec, "recall": rec, "f1": f1}


def finite_difference(loss_fn, arrays, step=1e-3):
    """Central differences of scalar ``loss_fn()`` w.r.t. each array (perturbed in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros(arr.shape)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_fn()
            arr[idx] = orig - step
            down = loss_fn()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def rel_error(a, n, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


@dataclass
class ArraySplits:
    """Minimal stand-in for a FeatureMatrix: arrays plus split tags."""

    x: np.ndarray
    y: np.ndarray
    tags: np.ndarray
    num_classes: int

    @property
    def num_features(self):
        return self.x.shape[1]

    def part(self, name):
        m = self.tags == name
        return self.x[m], self.y[m]


def separable_set(n=500, f=8, seed=0, shift=1.0):
    """Two Gaussian blobs at -shift and +shift on every feature; 70/15/15 tags."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n).astype(np.int64)
    x = rng.normal(size=(n, f)) + np.where(y[:, None] == 1, shift, -shift)
    n_tr, n_va = int(0.7 * n), int(0.15 * n)
    tags = np.array(["train"] * n_tr + ["val"] * n_va + ["test"] * (n - n_tr - n_va))
    return ArraySplits(x.astype(np.float32), y, tags, 2)
