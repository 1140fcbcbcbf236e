"""Shared fixtures-by-function: finite-difference oracle, per-op random instances, toy victims."""

from __future__ import annotations

import numpy as np

from iasdetect import tensor as T

FD_STEP = 1e-3
REL_FLOOR = 1e-2  # denominators below this count as absolute error


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def numerical_grads(fn, arrays, weights, h: float = FD_STEP):
    """Central differences of sum(fn(*arrays) * weights) w.r.t. every array."""
    def scalar(xs):
        with T.no_grad():
            return float(np.sum(fn(*[T.Tensor(x) for x in xs]).data * weights))

    out = []
    for k, x in enumerate(arrays):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xs_p = [a.copy() for a in arrays]
            xs_m = [a.copy() for a in arrays]
            xs_p[k][idx] += h
            xs_m[k][idx] -= h
            g[idx] = (scalar(xs_p) - scalar(xs_m)) / (2 * h)
        out.append(g)
    return out


def analytic_grads(fn, arrays, weights):
    ts = [T.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*ts)
    T.sum_(T.mul(out, T.Tensor(weights))).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def fd_check(fn, arrays, rng) -> float:
    with T.no_grad():
        shape = fn(*[T.Tensor(a) for a in arrays]).shape
    weights = rng.normal(size=shape)
    return max(rel_error(a, n) for a, n in zip(analytic_grads(fn, arrays, weights), numerical_grads(fn, arrays, weights)))


def _away_from(x, points, margin=0.05):
    """Nudge entries of x that sit within ``margin`` of any kink."""
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin) * 2
    return x


def _ln(x, g, b):
    return T.layer_norm(x, g, b)


def _with_targets(rng, kind):
    if kind == "ce":
        y = rng.integers(0, 4, size=3)
        return (lambda a: T.cross_entropy(a, y)), [rng.normal(size=(3, 4))]
    t = rng.uniform(size=(5,))
    # the third derivative of log p grows like 1/p^3, so probabilities stay in the middle
    # of (0, 1) to keep central-difference truncation error under the 1e-4 tolerance
    return (lambda p: T.binary_cross_entropy(p, t)), [rng.uniform(0.3, 0.7, size=(5,))]


def grad_cases():
    """op kind -> rng -> (fn over Tensors, list of input arrays)."""
    def shp(rng, lo=1, hi=4, nd=2):
        return tuple(int(v) for v in rng.integers(lo, hi + 1, size=nd))

    return {
        "add": lambda r: (T.add, [r.normal(size=(3, 4)), r.normal(size=(4,))]),
        "sub": lambda r: (T.sub, [r.normal(size=(2, 3)), r.normal(size=(2, 1))]),
        "mul": lambda r: (T.mul, [r.normal(size=shp(r)), r.normal(size=(1,))]),
        "scale": lambda r: (lambda a: T.scale(a, 2.5), [r.normal(size=shp(r))]),
        "exp": lambda r: (T.exp, [r.normal(size=shp(r))]),
        "log": lambda r: (T.log, [r.uniform(0.5, 3.0, size=shp(r))]),
        "clip": lambda r: (lambda a: T.clip(a, -0.5, 0.5), [_away_from(r.normal(size=shp(r)), (-0.5, 0.5))]),
        "relu": lambda r: (T.relu, [_away_from(r.normal(size=shp(r)), (0.0,))]),
        "sigmoid": lambda r: (T.sigmoid, [r.normal(size=shp(r)) * 3]),
        "tanh": lambda r: (T.tanh, [r.normal(size=shp(r))]),
        "gelu": lambda r: (T.gelu, [r.normal(size=shp(r)) * 2]),
        "softmax": lambda r: (T.softmax, [r.normal(size=(3, 5))]),
        "matmul": lambda r: (T.matmul, [r.normal(size=(2, 3, 4)), r.normal(size=(4, 2))]),
        "reshape": lambda r: (lambda a: T.reshape(a, (3, 4)), [r.normal(size=(2, 6))]),
        "flatten": lambda r: (T.flatten, [r.normal(size=(2, 3, 2))]),
        "transpose": lambda r: (lambda a: T.transpose(a, (1, 0, 2)), [r.normal(size=(2, 3, 2))]),
        "concat": lambda r: (lambda a, b: T.concat([a, b], axis=1), [r.normal(size=(2, 3)), r.normal(size=(2, 2))]),
        "slice": lambda r: (lambda a: T.slice_(a, (slice(None), slice(1, 3))), [r.normal(size=(3, 4))]),
        "sum": lambda r: (lambda a: T.sum_(a, axis=1), [r.normal(size=(3, 4))]),
        "mean": lambda r: (lambda a: T.mean(a, axis=0, keepdims=True), [r.normal(size=(3, 4))]),
        "layer_norm": lambda r: (_ln, [r.normal(size=(3, 8)) * 2, r.normal(size=(8,)), r.normal(size=(8,))]),
        "embedding": lambda r: (lambda w: T.embedding(w, np.array([[0, 2, 2], [1, 0, 3]])), [r.normal(size=(4, 3))]),
        "dropout": lambda r: (lambda a: T.dropout(a, 0.3, True, np.random.default_rng(5)), [r.normal(size=(3, 4))]),
        "conv1d": lambda r: (T.conv1d, [r.normal(size=(2, 2, 6)), r.normal(size=(3, 2, 3)), r.normal(size=(3,))]),
        "cross_entropy": lambda r: _with_targets(r, "ce"),
        "binary_cross_entropy": lambda r: _with_targets(r, "bce"),
    }


def bow_victim_fn(keyword_class: dict, num_classes: int, scale: float = 3.0):
    """Softmax over per-class keyword counts: a transparent bag-of-words victim."""
    def proba(texts):
        out = np.zeros((len(texts), num_classes))
        for i, t in enumerate(texts):
            for w in t.split():
                if w in keyword_class:
                    out[i, keyword_class[w]] += 1.0
        z = np.exp(scale * (out - out.max(axis=1, keepdims=True)))
        return z / z.sum(axis=1, keepdims=True)

    return proba
