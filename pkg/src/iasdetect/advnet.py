"""AdvNet: a small 1-D CNN that labels feature vectors authentic (0) or adversarial (1)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import TrainingDiverged
from .optim import Optimizer, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

MIN_LENGTH = 5  # two valid kernel-3 convolutions need at least five positions


def pad_features(X: np.ndarray, length: int) -> np.ndarray:
    """Right-pad with zeros up to ``length`` (short ablation views only)."""
    X = np.atleast_2d(X)
    if X.shape[1] >= length:
        return X
    return np.pad(X, ((0, 0), (0, length - X.shape[1])))


class AdvNet:
    """conv3(1->32) relu, conv3(32->16) relu, fc32 sigmoid, fc16 sigmoid, fc2 softmax."""

    def __init__(self, length: int, seed: int = 0, dropout: float = 0.1, params: dict | None = None):
        if length < MIN_LENGTH:
            raise ValueError(f"AdvNet input length must be >= {MIN_LENGTH}, got {length}")
        self.length = length
        self.dropout = dropout
        if params is None:
            params = self._init_params(np.random.default_rng([seed, 21]))
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        def uniform(fan_in, *shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        flat = 16 * (self.length - 4)
        return {
            "c1_w": uniform(3, 32, 1, 3), "c1_b": uniform(3, 32),
            "c2_w": uniform(96, 16, 32, 3), "c2_b": uniform(96, 16),
            "f1_w": uniform(flat, flat, 32), "f1_b": uniform(flat, 32),
            "f2_w": uniform(32, 32, 16), "f2_b": uniform(32, 16),
            "out_w": uniform(16, 16, 2), "out_b": uniform(16, 2),
        }

    def logits(self, x, train: bool = False, rng=None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.length:
            raise T.ShapeError(f"AdvNet expects (B, {self.length}) inputs, got {x.shape}")
        p = self.params
        h = T.relu(T.conv1d(T.reshape(x, (x.shape[0], 1, self.length)), p["c1_w"], p["c1_b"]))
        h = T.relu(T.conv1d(h, p["c2_w"], p["c2_b"]))
        h = T.flatten(h)
        h = T.dropout(T.sigmoid(h @ p["f1_w"] + p["f1_b"]), self.dropout, train, rng)
        h = T.dropout(T.sigmoid(h @ p["f2_w"] + p["f2_b"]), self.dropout, train, rng)
        return h @ p["out_w"] + p["out_b"]

    def probs(self, x, train: bool = False, rng=None) -> Tensor:
        return T.softmax(self.logits(x, train, rng))

    def forward(self, x, train: bool = False, rng=None) -> Tensor:
        """Adversarial-class probability, shape (B,)."""
        return T.slice_(self.probs(x, train, rng), (slice(None), 1))

    def predict_proba(self, X: np.ndarray, chunk: int = 1024) -> np.ndarray:
        X = np.atleast_2d(X)
        with no_grad():
            return np.concatenate([self.forward(X[s : s + chunk]).data for s in range(0, len(X), chunk)])

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            self.params[k].data = v.copy()

    def save(self, path, meta: dict | None = None):
        save_checkpoint(path, self.params, {"length": self.length, "dropout": self.dropout, **(meta or {})})

    @classmethod
    def load(cls, path) -> "AdvNet":
        params, meta = load_checkpoint(path)
        return cls(meta["length"], dropout=meta["dropout"], params=params)


# ---------------------------------------------------------------------------
# CutMix


@dataclass
class CutMixSpec:
    R: int = 2
    ratio: float = 1.0  # augmented : real


def cutmix_one(sources: np.ndarray, labels: Sequence[float], cuts: Sequence[int]):
    """Patch i of the output is sources[i][cuts[i]:cuts[i+1]]; cuts run 0 = c_1 < ... < c_{R+1} = L.

    The mixed label is sum_i labels[i] * (c_{i+1} - c_i) / L.
    """
    sources = np.asarray(sources, dtype=np.float64)
    R, L = sources.shape
    cuts = list(cuts)
    if len(cuts) != R + 1 or cuts[0] != 0 or cuts[-1] != L or any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ValueError(f"invalid cut points {cuts} for {R} sources of length {L}")
    out = np.empty(L)
    label = 0.0
    for i in range(R):
        out[cuts[i] : cuts[i + 1]] = sources[i, cuts[i] : cuts[i + 1]]
        label += float(labels[i]) * (cuts[i + 1] - cuts[i]) / L
    return out, label


def cutmix(X: np.ndarray, y: np.ndarray, spec: CutMixSpec, rng: np.random.Generator, count: int | None = None):
    """``count`` augmented vectors (default ratio x len(X)), each from R distinct sampled rows."""
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=np.float64)
    N, L = X.shape
    if N < spec.R:
        raise ValueError(f"cutmix needs at least R={spec.R} vectors, got {N}")
    if L < spec.R:
        raise ValueError(f"cutmix needs length >= R={spec.R}, got {L}")
    count = int(round(spec.ratio * N)) if count is None else count
    outs = np.empty((count, L))
    labels = np.empty(count)
    for k in range(count):
        idx = rng.choice(N, size=spec.R, replace=False)
        inner = np.sort(rng.choice(np.arange(1, L), size=spec.R - 1, replace=False))
        outs[k], labels[k] = cutmix_one(X[idx], y[idx], [0, *inner.tolist(), L])
    return outs, labels


# ---------------------------------------------------------------------------
# training


@dataclass
class DetectorTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    dropout: float = 0.1
    cutmix: CutMixSpec = field(default_factory=CutMixSpec)


@dataclass
class DetectorHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0


def _bce_np(p: np.ndarray, y: np.ndarray, eps: float = 1e-12) -> float:
    p = np.clip(p, eps, 1 - eps)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def train_advnet(X: np.ndarray, y: np.ndarray, Xv: np.ndarray, yv: np.ndarray, tc: DetectorTrainConfig | None = None):
    """Adam + BCE on the adversarial probability with fresh CutMix batches each epoch.

    Early stopping watches validation loss (patience ``tc.patience``); the returned
    weights are those with the best validation accuracy seen, ties going to the
    lower validation loss.
    """
    tc = tc or DetectorTrainConfig()
    L = max(X.shape[1], MIN_LENGTH)
    X, Xv = pad_features(X, L), pad_features(Xv, L)
    y = np.asarray(y, dtype=np.float64)
    yv = np.asarray(yv, dtype=np.float64)
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("train_advnet: empty train or validation split")
    net = AdvNet(L, seed=tc.seed, dropout=tc.dropout)
    params = list(net.params.values())
    opt = Optimizer("adam", tc.learning_rate)
    rng = np.random.default_rng([tc.seed, 22])
    hist = DetectorHistory()
    best_key, best_state, best_loss, bad = None, net.state(), math.inf, 0
    for epoch in range(1, tc.max_epochs + 1):
        Xa, ya = X, y
        if tc.cutmix.ratio > 0:
            Xm, ym = cutmix(X, y, tc.cutmix, rng)
            Xa, ya = np.concatenate([X, Xm]), np.concatenate([y, ym])
        order = rng.permutation(len(Xa))
        total = 0.0
        for s in range(0, len(order), tc.batch_size):
            b = order[s : s + tc.batch_size]
            loss = T.binary_cross_entropy(net.forward(Xa[b], train=True, rng=rng), ya[b])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite detector loss at epoch {epoch}")
            loss.backward()
            opt.apply(params)
            total += float(loss.data) * len(b)
        pv = net.predict_proba(Xv)
        vloss = _bce_np(pv, yv)
        vacc = float(np.mean((pv >= 0.5) == (yv >= 0.5)))
        hist.train_loss.append(total / len(Xa))
        hist.val_loss.append(vloss)
        hist.val_accuracy.append(vacc)
        key = (vacc, -vloss)
        if best_key is None or key > best_key:
            best_key, best_state, hist.best_epoch = key, net.state(), epoch
        if vloss < best_loss:
            best_loss, bad = vloss, 0
        else:
            bad += 1
            if bad >= tc.patience:
                break
    net.load_state(best_state)
    return net, hist


# ---------------------------------------------------------------------------
# evaluation


def _cdf(values: np.ndarray) -> dict:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return {"x": v.tolist(), "y": (np.arange(1, len(v) + 1) / max(len(v), 1)).tolist()}


def detection_metrics(pred: np.ndarray, y: np.ndarray) -> dict:
    pred = np.asarray(pred).astype(bool)
    y = np.asarray(y) >= 0.5
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return {
        "n": int(len(y)),
        "accuracy": float(np.mean(pred == y)),
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
    }


def evaluate(net: AdvNet, X: np.ndarray, y: np.ndarray, attack_types: Sequence[str] | None = None) -> dict:
    """Accuracy, precision and recall at 0.5, a per-attack-type table and probability CDFs."""
    if len(X) == 0:
        raise ValueError("evaluate: empty split")
    prob = net.predict_proba(pad_features(X, net.length))
    y = np.asarray(y, dtype=np.float64)
    report = detection_metrics(prob >= 0.5, y)
    if attack_types is not None:
        types = np.asarray(attack_types)
        report["per_type"] = {
            t: {"n": int(np.sum(types == t)), "accuracy": float(np.mean((prob[types == t] >= 0.5) == (y[types == t] >= 0.5)))}
            for t in sorted(set(types.tolist()))
        }
    report["cdf"] = {"authentic": _cdf(prob[y < 0.5]), "adversarial": _cdf(prob[y >= 0.5])}
    return report


# ---------------------------------------------------------------------------
# Grad-CAM refereeing heads


@dataclass
class Refereeing:
    saliency: np.ndarray
    predicted: int
    heads: list[int]
    quartiles: list[int]  # refereeing-head counts per layer quartile (shallow to deep)


def saliency(net: AdvNet, v: np.ndarray) -> tuple[np.ndarray, int]:
    """|d(logit of the predicted detection class)/dv| in evaluation mode."""
    x = Tensor(pad_features(np.asarray(v, dtype=np.float64)[None, :], net.length), requires_grad=True)
    logits = net.logits(x)
    cls = int(np.argmax(logits.data[0]))
    T.slice_(logits, (0, cls)).backward()
    return np.abs(x.grad[0]), cls


def layer_quartiles(heads: Sequence[int], n: int, m: int) -> list[int]:
    counts = [0, 0, 0, 0]
    for h in heads:
        counts[min(3, (h // m) * 4 // n)] += 1
    return counts


def gradcam_refereeing(net: AdvNet, v: np.ndarray, n: int, m: int, threshold: float = 0.5) -> Refereeing:
    sal, cls = saliency(net, v)
    seg = sal[: n * m]
    top = seg.max() if seg.size else 0.0
    heads = [] if top <= 0 else [int(i) for i in np.nonzero(seg >= threshold * top)[0]]
    return Refereeing(sal[: len(v)], cls, heads, layer_quartiles(heads, n, m))
