"""Post-LN transformer encoder with per-head output gates and layer-wise auxiliary heads."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import PAD_ID, LabeledSample, Vocab
from .optim import Optimizer, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

PRESETS = {
    "small": dict(n=4, m=4, d_model=128, d_ff=256),
    "base": dict(n=6, m=8, d_model=256, d_ff=512),
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    n: int = 4
    m: int = 4
    d_model: int = 128
    d_ff: int = 256
    vocab_size: int = 0
    max_len: int = 32
    num_classes: int = 2
    size_tag: str = "small"
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.m:
            raise ValueError(f"d_model={self.d_model} is not divisible by m={self.m}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.m

    @classmethod
    def preset(cls, size_tag: str, **overrides) -> "ModelConfig":
        if size_tag not in PRESETS:
            raise ValueError(f"unknown size preset {size_tag!r}")
        return cls(size_tag=size_tag, **{**PRESETS[size_tag], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["d_k"] = self.d_k
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = {k: v for k, v in d.items() if k != "d_k"}
        return cls(**d)


def scaled_dot_attention(q, k, v, key_mask=None) -> Tensor:
    d_k = q.shape[-1]
    scores = T.scale(q @ T.transpose(k, _swap_last(k.ndim)), 1.0 / math.sqrt(d_k))
    if key_mask is not None:
        scores = scores + key_mask
    return T.softmax(scores) @ v


def attention_head(x, wq, wk, wv, bq=None, bk=None, bv=None, key_mask=None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V for one head.

    ``x`` is (..., T, d_model); weights are (d_model, d_k). ``key_mask`` is an
    additive array broadcastable to (..., T, T) (large negative at padding keys).
    """
    x = T.as_tensor(x)
    if x.shape[-1] != T.as_tensor(wq).shape[0]:
        raise T.ShapeError(f"attention_head: input width {x.shape[-1]} vs W^Q {T.as_tensor(wq).shape}")
    q, k, v = x @ wq, x @ wk, x @ wv
    if bq is not None:
        q, k, v = q + bq, k + bk, v + bv
    return scaled_dot_attention(q, k, v, key_mask)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _check_gates(g: np.ndarray, what: str):
    if np.any(~np.isfinite(g)) or g.min() < 0.0 or g.max() > 1.0:
        raise ValueError(f"{what}: gating values must lie in [0, 1]")


class Encoder:
    """Parameters live in ``self.params`` (name -> leaf Tensor)."""

    def __init__(self, config: ModelConfig, vocab: Vocab, seed: int = 0, params: dict | None = None):
        if config.vocab_size and config.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {config.vocab_size} != vocabulary {len(vocab)}")
        config.vocab_size = len(vocab)
        self.config = config
        self.vocab = vocab
        if params is None:
            params = self._init_params(np.random.default_rng([seed, 1]))
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        c = self.config
        d, m, dk, ff = c.d_model, c.m, c.d_k, c.d_ff
        std = 0.02

        def normal(*shape):
            return rng.normal(0.0, std, size=shape)

        p = {
            "tok_emb": normal(c.vocab_size, d),
            "pos_emb": normal(c.max_len, d),
            "emb_ln_g": np.ones(d),
            "emb_ln_b": np.zeros(d),
        }
        for j in range(c.n):
            p.update({
                f"l{j}.wq": normal(m, d, dk), f"l{j}.bq": np.zeros((m, 1, dk)),
                f"l{j}.wk": normal(m, d, dk), f"l{j}.bk": np.zeros((m, 1, dk)),
                f"l{j}.wv": normal(m, d, dk), f"l{j}.bv": np.zeros((m, 1, dk)),
                f"l{j}.wo": normal(m * dk, d), f"l{j}.bo": np.zeros(d),
                f"l{j}.ln1_g": np.ones(d), f"l{j}.ln1_b": np.zeros(d),
                f"l{j}.w1": normal(d, ff), f"l{j}.b1": np.zeros(ff),
                f"l{j}.w2": normal(ff, d), f"l{j}.b2": np.zeros(d),
                f"l{j}.ln2_g": np.ones(d), f"l{j}.ln2_b": np.zeros(d),
            })
        p["cls_w"] = normal(d, c.num_classes)
        p["cls_b"] = np.zeros(c.num_classes)
        return p

    # -- parameter management -------------------------------------------------

    def set_frozen(self, frozen: bool = True):
        for t in self.params.values():
            t.requires_grad = not frozen
            t.grad = None

    @property
    def frozen(self) -> bool:
        return not any(t.requires_grad for t in self.params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].data.tobytes())
        return h.hexdigest()

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def save(self, path):
        meta = {"config": self.config.to_dict(), "vocab": self.vocab.to_json()}
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "Encoder":
        params, meta = load_checkpoint(path)
        enc = cls(ModelConfig.from_dict(meta["config"]), Vocab.from_json(meta["vocab"]), params=params)
        enc.set_frozen(True)
        return enc

    # -- forward --------------------------------------------------------------

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        return self.vocab.batch(texts, self.config.max_len)

    def _gates(self, gates, batch: int):
        """Normalise gates to a (B or 1, n, m) Tensor, or None for the complete network."""
        c = self.config
        if gates is None:
            return None
        g = T.as_tensor(gates)
        _check_gates(g.data, "forward")
        if g.shape[-1] != c.n * c.m or g.ndim > 2:
            raise T.ShapeError(f"gates shape {g.shape}; expected (n*m,) or (B, n*m) with n*m={c.n * c.m}")
        if g.ndim == 2 and g.shape[0] not in (1, batch):
            raise T.ShapeError(f"gates batch {g.shape[0]} vs input batch {batch}")
        return T.reshape(g, (-1, c.n, c.m))

    def embed(self, ids: np.ndarray, train: bool = False, rng=None) -> Tensor:
        p = self.params
        length = ids.shape[1]
        x = T.embedding(p["tok_emb"], ids) + p["pos_emb"][:length]
        x = T.layer_norm(x, p["emb_ln_g"], p["emb_ln_b"])
        return T.dropout(x, self.config.dropout, train, rng)

    def gated_layer(self, j: int, x: Tensor, g_j=None, key_mask=None, train: bool = False, rng=None) -> Tensor:
        """One encoder layer; head i's output is scaled by ``g_j[..., i]`` before W^O.

        ``x``: (B, T, d_model). ``g_j``: None, (m,) or (B, m) in [0, 1].
        """
        c = self.config
        p = self.params
        pre = f"l{j}."
        if x.ndim != 3 or x.shape[-1] != c.d_model:
            raise T.ShapeError(f"gated_layer: input shape {x.shape}, expected (B, T, {c.d_model})")
        b, length, _ = x.shape

        def project(name):
            # per-head (m, d, d_k) weights side by side as one (d, m*d_k) matrix
            w = T.reshape(T.transpose(p[pre + "w" + name], (1, 0, 2)), (c.d_model, c.m * c.d_k))
            y = x @ w + T.reshape(p[pre + "b" + name], (c.m * c.d_k,))
            return T.transpose(T.reshape(y, (b, length, c.m, c.d_k)), (0, 2, 1, 3))

        heads = scaled_dot_attention(project("q"), project("k"), project("v"), key_mask)  # (B, m, T, d_k)
        if g_j is not None:
            g_j = T.as_tensor(g_j)
            _check_gates(g_j.data, "gated_layer")
            if g_j.shape[-1] != c.m:
                raise T.ShapeError(f"gated_layer: gate vector {g_j.shape} vs m={c.m}")
            heads = heads * T.reshape(g_j, (-1, c.m, 1, 1))
        cat = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (b, length, c.m * c.d_k))
        attn = cat @ p[pre + "wo"] + p[pre + "bo"]
        x = T.layer_norm(x + T.dropout(attn, c.dropout, train, rng), p[pre + "ln1_g"], p[pre + "ln1_b"])
        ff = T.gelu(x @ p[pre + "w1"] + p[pre + "b1"]) @ p[pre + "w2"] + p[pre + "b2"]
        return T.layer_norm(x + T.dropout(ff, c.dropout, train, rng), p[pre + "ln2_g"], p[pre + "ln2_b"])

    def run(self, ids, gates=None, train: bool = False, rng=None, collect: bool = False):
        """Return (logits, per-layer first-token states) for an id batch (B, T')."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] > self.config.max_len:
            raise T.ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        ids = np.where((ids >= 0) & (ids < len(self.vocab)), ids, 1)  # unknown ids -> [UNK]
        if train and rng is None:
            raise ValueError("train mode requires an rng")
        g = self._gates(gates, ids.shape[0])
        key_mask = np.where(ids == PAD_ID, -1e9, 0.0)[:, None, None, :]
        x = self.embed(ids, train, rng)
        firsts = []
        for j in range(self.config.n):
            g_j = None if g is None else g[:, j, :]
            x = self.gated_layer(j, x, g_j, key_mask, train, rng)
            if collect:
                firsts.append(x[:, 0, :])
        logits = x[:, 0, :] @ self.params["cls_w"] + self.params["cls_b"]
        return logits, firsts

    def forward(self, ids, gates=None, train: bool = False, rng=None) -> Tensor:
        return self.run(ids, gates, train, rng)[0]

    def logits_np(self, ids, gates=None, chunk: int = 512) -> np.ndarray:
        ids = np.atleast_2d(ids)
        outs = []
        with no_grad():
            for s in range(0, len(ids), chunk):
                g = gates
                if gates is not None and np.ndim(gates) == 2 and len(gates) == len(ids):
                    g = gates[s : s + chunk]
                outs.append(self.forward(ids[s : s + chunk], g).data)
        return np.concatenate(outs, axis=0)

    def predict_proba(self, texts: Sequence[str], gates=None) -> np.ndarray:
        logits = self.logits_np(self.encode(texts), gates)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, texts: Sequence[str], gates=None) -> np.ndarray:
        return np.argmax(self.logits_np(self.encode(texts), gates), axis=1)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-3
    seed: int = 0


@dataclass
class TrainRecord:
    epochs: int = 0
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_accuracy: float = float("nan")
    val_accuracy: float = float("nan")


def accuracy(enc: Encoder, samples: Sequence[LabeledSample]) -> float:
    if not samples:
        return float("nan")
    pred = enc.predict([s.text for s in samples])
    return float(np.mean(pred == np.array([s.label for s in samples])))


def _mean_loss(enc: Encoder, samples: Sequence[LabeledSample]) -> float:
    ids = enc.encode([s.text for s in samples])
    with no_grad():
        loss = T.cross_entropy(T.Tensor(enc.logits_np(ids)), [s.label for s in samples])
    return float(loss.data)


def fine_tune(
    train: Sequence[LabeledSample],
    config: ModelConfig,
    vocab: Vocab | None = None,
    val: Sequence[LabeledSample] | None = None,
    tc: TrainConfig | None = None,
) -> tuple[Encoder, TrainRecord]:
    """Train from scratch on mean cross-entropy; keeps the best-validation weights."""
    if not train:
        raise ValueError("fine_tune: empty dataset")
    tc = tc or TrainConfig()
    for s in list(train) + list(val or []):
        if not 0 <= s.label < config.num_classes:
            raise ValueError(f"label {s.label} of {s.sample_id} outside [0, {config.num_classes})")
    vocab = vocab or Vocab.build(s.text for s in train)
    enc = Encoder(config, vocab, seed=tc.seed)
    rng = np.random.default_rng([tc.seed, 2])
    ids_all = enc.encode([s.text for s in train])
    labels = np.array([s.label for s in train])
    params = list(enc.params.values())
    opt = Optimizer("adam", tc.learning_rate)
    rec = TrainRecord()
    best, best_loss, bad = enc.state(), math.inf, 0
    for epoch in range(tc.max_epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for s in range(0, len(order), tc.batch_size):
            idx = order[s : s + tc.batch_size]
            batch = ids_all[idx]
            batch = batch[:, : max(1, int((batch != PAD_ID).sum(axis=1).max()))]
            loss = T.cross_entropy(enc.forward(batch, train=True, rng=rng), labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch + 1}")
            loss.backward()
            opt.apply(params)
            total += float(loss.data) * len(idx)
        rec.train_loss.append(total / len(train))
        rec.epochs = epoch + 1
        monitor = _mean_loss(enc, val) if val else rec.train_loss[-1]
        rec.val_loss.append(monitor)
        log.info("epoch %d train_loss %.4f val_loss %.4f", epoch + 1, rec.train_loss[-1], monitor)
        if monitor < best_loss - tc.min_delta:
            best, best_loss, bad = enc.state(), monitor, 0
        else:
            bad += 1
            if bad >= tc.patience:
                break
    enc.load_state(best)
    enc.set_frozen(True)
    rec.train_accuracy = accuracy(enc, train)
    rec.val_accuracy = accuracy(enc, val) if val else float("nan")
    return enc, rec


# ---------------------------------------------------------------------------
# layer-wise auxiliary heads


class AuxHeads:
    """Linear classifiers over the first-token output of layers 1..n-1."""

    def __init__(self, n: int, d_model: int, num_classes: int, seed: int = 0, params: dict | None = None):
        self.n = n
        if params is None:
            rng = np.random.default_rng([seed, 3])
            params = {}
            for l in range(n - 1):
                params[f"aux{l}_w"] = rng.normal(0.0, 0.02, size=(d_model, num_classes))
                params[f"aux{l}_b"] = np.zeros(num_classes)
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        if len(self.params) != 2 * (n - 1):
            raise ValueError(f"expected {n - 1} auxiliary heads")

    def __len__(self):
        return self.n - 1

    def logits(self, firsts: Sequence[Tensor]) -> list[Tensor]:
        return [firsts[l] @ self.params[f"aux{l}_w"] + self.params[f"aux{l}_b"] for l in range(self.n - 1)]

    def save(self, path):
        save_checkpoint(path, self.params, {"n": self.n})

    @classmethod
    def load(cls, path) -> "AuxHeads":
        params, meta = load_checkpoint(path)
        w = params["aux0_w"]
        return cls(meta["n"], w.shape[0], w.shape[1], params=params)


def layer_states(enc: Encoder, ids: np.ndarray, gates=None, chunk: int = 512) -> list[np.ndarray]:
    """First-token outputs of the first n-1 layers, each (B, d_model)."""
    outs = [[] for _ in range(enc.config.n - 1)]
    with no_grad():
        for s in range(0, len(ids), chunk):
            g = gates[s : s + chunk] if gates is not None and np.ndim(gates) == 2 and len(gates) == len(ids) else gates
            _, firsts = enc.run(ids[s : s + chunk], g, collect=True)
            for l in range(enc.config.n - 1):
                outs[l].append(firsts[l].data)
    return [np.concatenate(o) for o in outs]


def train_aux_heads(
    enc: Encoder,
    train: Sequence[LabeledSample],
    val: Sequence[LabeledSample] | None = None,
    gates=None,
    tc: TrainConfig | None = None,
) -> AuxHeads:
    """Fit the n-1 heads on the frozen encoder with every gate at 1."""
    c = enc.config
    if gates is not None and not np.all(np.asarray(gates) == 1.0):
        raise ValueError("auxiliary heads are trained on the complete network (all gates = 1)")
    if not train:
        raise ValueError("train_aux_heads: empty dataset")
    tc = tc or TrainConfig(learning_rate=1e-3, patience=5)
    enc.set_frozen(True)
    before = enc.checksum()
    aux = AuxHeads(c.n, c.d_model, c.num_classes, seed=tc.seed)
    feats = layer_states(enc, enc.encode([s.text for s in train]))
    y = np.array([s.label for s in train])
    vfeats = layer_states(enc, enc.encode([s.text for s in val])) if val else None
    vy = np.array([s.label for s in val]) if val else None
    rng = np.random.default_rng([tc.seed, 4])
    params = list(aux.params.values())
    opt = Optimizer("adam", tc.learning_rate)

    def loss_on(fs, labels, idx=None):
        xs = [T.Tensor(f if idx is None else f[idx]) for f in fs]
        lab = labels if idx is None else labels[idx]
        terms = [T.cross_entropy(lg, lab) for lg in aux.logits(xs)]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return T.scale(total, 1.0 / len(terms))

    best, best_loss, bad = {k: v.data.copy() for k, v in aux.params.items()}, math.inf, 0
    for epoch in range(tc.max_epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(order), tc.batch_size):
            loss = loss_on(feats, y, order[s : s + tc.batch_size])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite auxiliary loss at epoch {epoch + 1}")
            loss.backward()
            opt.apply(params)
        with no_grad():
            monitor = float(loss_on(vfeats, vy).data) if val else float(loss_on(feats, y).data)
        if monitor < best_loss - tc.min_delta:
            best, best_loss, bad = {k: v.data.copy() for k, v in aux.params.items()}, monitor, 0
        else:
            bad += 1
            if bad >= tc.patience:
                break
    for k, v in best.items():
        aux.params[k].data = v
        aux.params[k].requires_grad = False
    if enc.checksum() != before:
        raise RuntimeError("encoder parameters changed during auxiliary training")
    return aux


def predict_layerwise(enc: Encoder, aux: AuxHeads, ids: np.ndarray, gates=None) -> np.ndarray:
    """(B, n-1) label matrix: argmax of head l on layer l's first-token output under ``gates``."""
    feats = layer_states(enc, np.atleast_2d(ids), gates)
    with no_grad():
        return np.stack([np.argmax(lg.data, axis=1) for lg in aux.logits([T.Tensor(f) for f in feats])], axis=1)


def aux_accuracy(enc: Encoder, aux: AuxHeads, samples: Sequence[LabeledSample]) -> list[float]:
    labels = predict_layerwise(enc, aux, enc.encode([s.text for s in samples]))
    y = np.array([s.label for s in samples])
    return [float(np.mean(labels[:, l] == y)) for l in range(labels.shape[1])]
