"""Detector features: gate pre-activations, flipped-subnetwork prediction, layer-wise labels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import AuxHeads, Encoder, predict_layerwise
from .ias import GatingState, IASConfig, compute_ias, flip_middle, mask_record

FAMILIES = ("mask", "flip", "lw")


def assembled_length(n: int, m: int) -> int:
    return n * m + n + 5


@dataclass
class FeatureVector:
    sample_id: str
    f_mask: np.ndarray
    f_flip: np.ndarray
    f_lw: np.ndarray
    label: float
    f_bmask: np.ndarray | None = None
    attack_type: str = "authentic"
    split: str = ""
    flagged: bool = False

    @property
    def assembled(self) -> np.ndarray:
        return np.concatenate([self.f_mask, self.f_flip, self.f_lw])

    def view(self, families: Sequence[str] = FAMILIES, binary: bool = False) -> np.ndarray:
        """Pure selection of the cached families; ``binary`` swaps f_bmask in for f_mask."""
        parts = []
        for fam in FAMILIES:
            if fam not in families:
                continue
            if fam == "mask":
                if binary and self.f_bmask is None:
                    raise ValueError(f"{self.sample_id}: binary mask not cached")
                parts.append(self.f_bmask if binary else self.f_mask)
            else:
                parts.append(self.f_flip if fam == "flip" else self.f_lw)
        unknown = set(families) - set(FAMILIES)
        if unknown or not parts:
            raise ValueError(f"invalid feature families {tuple(families)}")
        return np.concatenate(parts)

    def record(self) -> dict:
        rec = {
            "sample_id": self.sample_id,
            "attack_type": self.attack_type,
            "split": self.split,
            "assembled": self.assembled.tolist(),
            "label": self.label,
            "flagged": self.flagged,
        }
        if self.f_bmask is not None:
            rec["f_bmask"] = [int(v) for v in self.f_bmask]
        return rec

    @classmethod
    def from_record(cls, rec: dict, n: int, m: int) -> "FeatureVector":
        a = np.asarray(rec["assembled"], dtype=np.float64)
        if len(a) != assembled_length(n, m):
            raise ValueError(f"{rec['sample_id']}: assembled length {len(a)} != {assembled_length(n, m)}")
        nm = n * m
        bm = rec.get("f_bmask")
        return cls(
            sample_id=rec["sample_id"], f_mask=a[:nm], f_flip=a[nm : nm + 4], f_lw=a[nm + 4 :],
            label=rec["label"], f_bmask=None if bm is None else np.asarray(bm, dtype=np.float64),
            attack_type=rec["attack_type"], split=rec["split"], flagged=bool(rec["flagged"]),
        )


def extract_fmask(state: GatingState) -> np.ndarray:
    return np.asarray(state.p, dtype=np.float64).copy()


def extract_bmask(state: GatingState) -> np.ndarray:
    return np.asarray(state.g_b, dtype=np.float64).copy()


def extract_fflip(enc: Encoder, ids: np.ndarray, g_f: np.ndarray, target_class) -> np.ndarray:
    """[predicted class, target class, predicted-class probability, predicted == target].

    Batched: ``ids`` (B, L), ``g_f`` (B, nm), ``target_class`` (B,) gives (B, 4).
    """
    single = np.ndim(ids) == 1
    ids = np.atleast_2d(ids)
    g_f = np.atleast_2d(g_f)
    tgt = np.asarray(target_class, dtype=np.int64).reshape(-1)
    logits = enc.logits_np(ids, g_f)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    pred = np.argmax(probs, axis=1)
    out = np.stack([pred, tgt, probs[np.arange(len(pred)), pred], (pred == tgt)], axis=1).astype(np.float64)
    return out[0] if single else out


def lw_summary(labels: np.ndarray, target_class) -> np.ndarray:
    """Append match count (vs target) and switch count (consecutive changes) to label rows."""
    labels = np.atleast_2d(labels)
    tgt = np.asarray(target_class).reshape(-1, 1)
    match = (labels == tgt).sum(axis=1)
    switch = (labels[:, 1:] != labels[:, :-1]).sum(axis=1)
    return np.concatenate([labels, match[:, None], switch[:, None]], axis=1).astype(np.float64)


def extract_flw(enc: Encoder, aux: AuxHeads, ids: np.ndarray, g_f: np.ndarray, target_class) -> np.ndarray:
    single = np.ndim(ids) == 1
    ids = np.atleast_2d(ids)
    g_f = np.atleast_2d(g_f)
    labels = predict_layerwise(enc, aux, ids, g_f if len(g_f) == len(ids) else g_f[0])
    out = lw_summary(labels, target_class)
    return out[0] if single else out


@dataclass
class FeatureInput:
    sample_id: str
    text: str
    label: int
    attack_type: str = "authentic"
    split: str = ""


@dataclass
class ExtractionResult:
    vectors: list[FeatureVector]
    masks: list[dict] = field(default_factory=list)
    states: list[GatingState] = field(default_factory=list, repr=False)


def assemble(
    enc: Encoder,
    aux: AuxHeads,
    items: Sequence[FeatureInput],
    cfg: IASConfig | None = None,
    chunk: int = 64,
    keep_states: bool = False,
) -> ExtractionResult:
    """compute_ias -> flip_middle -> F_mask, F_flip, F_lw for every item, in chunks."""
    c = enc.config
    before = enc.checksum()
    result = ExtractionResult([])
    for s in range(0, len(items), chunk):
        part = items[s : s + chunk]
        ids = enc.encode([it.text for it in part])
        targets = np.argmax(enc.logits_np(ids), axis=1)  # complete-network prediction
        states = compute_ias(enc, ids, targets, cfg)
        g_b = np.stack([st.g_b for st in states])
        g_f = flip_middle(g_b, c.n, c.m).g_f
        flips = extract_fflip(enc, ids, g_f, targets)
        lws = extract_flw(enc, aux, ids, g_f, targets)
        for it, st, ff, lw in zip(part, states, flips, lws):
            result.vectors.append(FeatureVector(
                sample_id=it.sample_id, f_mask=extract_fmask(st), f_flip=ff, f_lw=lw, label=float(it.label),
                f_bmask=extract_bmask(st), attack_type=it.attack_type, split=it.split, flagged=st.flagged,
            ))
            result.masks.append(mask_record(it.sample_id, st))
            if keep_states:
                result.states.append(st)
    if enc.checksum() != before:
        raise RuntimeError("encoder parameters changed during feature extraction")
    return result


def matrix(vectors: Sequence[FeatureVector], families: Sequence[str] = FAMILIES, binary: bool = False):
    """(X, y) for a list of vectors under an ablation projection."""
    if not vectors:
        raise ValueError("no feature vectors")
    X = np.stack([v.view(families, binary) for v in vectors])
    y = np.array([v.label for v in vectors], dtype=np.float64)
    return X, y


class Standardizer:
    """Optional per-dimension z-score, fit on training vectors only (off by default)."""

    def __init__(self, eps: float = 1e-8):
        self.eps = eps
        self.mean = None
        self.std = None

    def fit(self, X: np.ndarray) -> "Standardizer":
        self.mean = X.mean(axis=0)
        self.std = X.std(axis=0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / np.maximum(self.std, self.eps)


def save_features(path, vectors: Iterable[FeatureVector]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for v in vectors:
            fh.write(json.dumps(v.record()) + "\n")


def load_features(path, n: int, m: int) -> list[FeatureVector]:
    seen = set()
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            v = FeatureVector.from_record(json.loads(line), n, m)
            if v.sample_id in seen:
                raise ValueError(f"duplicate sample id {v.sample_id} in {path}")
            seen.add(v.sample_id)
            out.append(v)
    return out
