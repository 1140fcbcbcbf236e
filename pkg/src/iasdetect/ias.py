"""Input-specific attention subnetworks: gate optimization, binarization, repair, flipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import Encoder
from .optim import Optimizer

P_MIN, P_MAX = 1e-6, 1.0 - 1e-6


class GatingAborted(RuntimeError):
    def __init__(self, msg, rows):
        super().__init__(msg)
        self.rows = rows


@dataclass
class IASConfig:
    alpha: float = 6.0
    eta: int = 10
    beta: float = 0.8
    beta_step: float = 0.2
    learning_rate: float = 0.1
    optimizer: str = "adam"
    init: float = 0.5


@dataclass
class GatingState:
    p: np.ndarray
    g: np.ndarray
    g_b: np.ndarray
    target_class: int
    alpha: float = 6.0
    eta: int = 10
    beta: float = 0.8
    beta_used: float | None = None
    flagged: bool = False
    trajectory: np.ndarray | None = field(default=None, repr=False)
    losses: np.ndarray | None = field(default=None, repr=False)

    @property
    def active_fraction(self) -> float:
        return float(self.g_b.mean())


@dataclass
class FlippedGating:
    g_f: np.ndarray
    flip_window: tuple[int, ...]  # 1-based layer indices


def hard_concrete(p, alpha: float = 6.0):
    """p^a / (p^a + (1-p)^a), written as 1 / (1 + exp(a (log(1-p) - log p))).

    Accepts floats, arrays or Tensors; inputs are clamped to [1e-6, 1 - 1e-6].
    """
    if isinstance(p, T.Tensor):
        pc = T.clip(p, P_MIN, P_MAX)
        return T.sigmoid(T.scale(T.sub(T.log(pc), T.log(T.sub(1.0, pc))), alpha))
    pc = np.clip(np.asarray(p, dtype=np.float64), P_MIN, P_MAX)
    out = 1.0 / (1.0 + np.exp(alpha * (np.log1p(-pc) - np.log(pc))))
    return float(out) if np.ndim(out) == 0 else out


def binarize(g, beta: float) -> np.ndarray:
    """1 where g >= beta * max(g) (max over the last axis), else 0."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    g = np.asarray(g, dtype=np.float64)
    top = g.max(axis=-1, keepdims=True)
    if np.any(top <= 0.0):
        raise ValueError("binarize: gating vector is all zero")
    return (g >= beta * top).astype(np.float64)


def repair_empty_layers(g_b, g, n: int, m: int) -> np.ndarray:
    """Switch on the largest-gate head (lowest index on ties) of every all-zero layer."""
    g_b = np.array(g_b, dtype=np.float64)
    lead = g_b.shape[:-1]
    gb3 = g_b.reshape(lead + (n, m))
    g3 = np.asarray(g, dtype=np.float64).reshape(lead + (n, m))
    empty = gb3.sum(axis=-1) == 0
    if empty.any():
        best = np.argmax(g3, axis=-1)  # first max wins ties
        idx = np.nonzero(empty)
        gb3[idx + (best[idx],)] = 1.0
    return gb3.reshape(g_b.shape)


def flip_window(n: int) -> tuple[int, ...]:
    """1-based layers {c, ..., 2c-1} with c = ceil(n/3); the flip branch wins at layer c."""
    c = math.ceil(n / 3)
    return tuple(range(c, 2 * c))


def flip_middle(g_b, n: int, m: int) -> FlippedGating:
    g_b = np.asarray(g_b, dtype=np.float64)
    window = flip_window(n)
    g_f = g_b.reshape(g_b.shape[:-1] + (n, m)).copy()
    rows = [j - 1 for j in window]
    g_f[..., rows, :] = 1.0 - g_f[..., rows, :]
    return FlippedGating(g_f.reshape(g_b.shape), window)


def optimize_gating(enc: Encoder, ids: np.ndarray, targets, cfg: IASConfig | None = None):
    """Optimize one free variable per head for every row of ``ids`` simultaneously.

    The summed per-row cross-entropy is separable across rows and Adam acts
    elementwise, so this equals running each input on its own. Returns
    ``(p, trajectory (B, eta+1, nm), losses (B, eta+1))``.
    """
    cfg = cfg or IASConfig()
    ids = np.atleast_2d(ids)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    c = enc.config
    if not enc.frozen:
        raise RuntimeError("optimize_gating requires frozen encoder parameters")
    p = T.Tensor(np.full((len(ids), c.n * c.m), cfg.init), requires_grad=True)
    opt = None if cfg.optimizer == "normalized" else Optimizer(cfg.optimizer, cfg.learning_rate)
    traj, losses = [], []
    for step in range(cfg.eta + 1):
        g = hard_concrete(p, cfg.alpha)
        per_row = T.cross_entropy(enc.forward(ids, g), targets, reduction="none")
        if not np.all(np.isfinite(per_row.data)):
            bad = np.nonzero(~np.isfinite(per_row.data))[0]
            raise GatingAborted(f"non-finite gating loss at step {step}", bad.tolist())
        traj.append(g.data.copy())
        losses.append(per_row.data.copy())
        if step == cfg.eta:
            break
        T.sum_(per_row).backward()
        if opt is None:
            # steepest descent with the largest per-row coordinate step equal to the learning rate
            scale_ = np.abs(p.grad).max(axis=1, keepdims=True)
            p.data -= cfg.learning_rate * p.grad / np.where(scale_ > 0, scale_, 1.0)
            p.grad = None
        else:
            opt.apply([p])
        np.clip(p.data, P_MIN, P_MAX, out=p.data)
    return p.data.copy(), np.stack(traj, axis=1), np.stack(losses, axis=1)


def _betas(cfg: IASConfig) -> list[float]:
    out, b = [], cfg.beta
    while b > 1e-9:
        out.append(round(b, 10))
        b -= cfg.beta_step
    return out


def compute_ias(enc: Encoder, ids: np.ndarray, targets, cfg: IASConfig | None = None) -> list[GatingState]:
    """Full protocol for a batch: optimize, threshold at decreasing beta until the
    subnetwork reproduces the target, else flag and fall back to all heads."""
    cfg = cfg or IASConfig()
    ids = np.atleast_2d(ids)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    c = enc.config
    p, traj, losses = optimize_gating(enc, ids, targets, cfg)
    g = traj[:, -1, :]
    masks = np.ones_like(g)
    used = np.full(len(ids), np.nan)
    pending = np.arange(len(ids))
    for beta in _betas(cfg):
        if len(pending) == 0:
            break
        cand = repair_empty_layers(binarize(g[pending], beta), g[pending], c.n, c.m)
        pred = np.argmax(enc.logits_np(ids[pending], cand), axis=1)
        ok = pred == targets[pending]
        masks[pending[ok]] = cand[ok]
        used[pending[ok]] = beta
        pending = pending[~ok]
    states = []
    for i in range(len(ids)):
        flagged = bool(np.isnan(used[i]))
        states.append(GatingState(
            p=p[i], g=g[i], g_b=masks[i], target_class=int(targets[i]), alpha=cfg.alpha, eta=cfg.eta,
            beta=cfg.beta, beta_used=None if flagged else float(used[i]), flagged=flagged,
            trajectory=traj[i], losses=losses[i],
        ))
    return states


def mask_record(sample_id: str, st: GatingState) -> dict:
    """Mask-cache line: {sample_id, p, g_b, beta_used, flagged, target_class}."""
    return {
        "sample_id": sample_id,
        "p": st.p.tolist(),
        "g_b": [int(v) for v in st.g_b],
        "beta_used": st.beta_used,
        "flagged": st.flagged,
        "target_class": st.target_class,
    }


def state_from_record(rec: dict, cfg: IASConfig | None = None) -> GatingState:
    cfg = cfg or IASConfig()
    p = np.asarray(rec["p"], dtype=np.float64)
    return GatingState(
        p=p, g=hard_concrete(p, cfg.alpha), g_b=np.asarray(rec["g_b"], dtype=np.float64),
        target_class=int(rec["target_class"]), alpha=cfg.alpha, eta=cfg.eta, beta=cfg.beta,
        beta_used=rec["beta_used"], flagged=bool(rec["flagged"]),
    )
