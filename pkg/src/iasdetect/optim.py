"""SGD and Adam over lists of leaf tensors, plus the parameter checkpoint format."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1


class MissingGradientError(RuntimeError):
    pass


@dataclass
class Optimizer:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: dict = field(default_factory=dict, repr=False)
    _v: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")

    def apply(self, params: Sequence[Tensor]):
        """One update of every param from its grad; grads are cleared afterwards."""
        for i, p in enumerate(params):
            if p.grad is None:
                raise MissingGradientError(f"parameter {i} (shape {p.shape}) has no gradient")
        self.step_count += 1
        t = self.step_count
        lr = self.learning_rate
        for p in params:
            g = p.grad
            if self.kind == "sgd":
                p.data -= lr * g
            else:
                key = id(p)
                m = self._m.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                else:
                    v = self._v[key]
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                self._m[key], self._v[key] = m, v
                m_hat = m / (1.0 - self.beta1**t)
                v_hat = v / (1.0 - self.beta2**t)
                p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


def apply_optimizer(opt: Optimizer, params: Sequence[Tensor]):
    opt.apply(params)


def save_checkpoint(path: str | os.PathLike, params: Mapping[str, np.ndarray | Tensor], meta: Mapping | None = None):
    """Write ``name -> array`` as an .npz with a format-version entry.

    ``meta`` is stored as a JSON string under ``__meta__``.
    """
    import json

    arrays = {}
    for name, value in params.items():
        if name.startswith("__"):
            raise ValueError(f"parameter name {name!r} is reserved")
        arrays[name] = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
    arrays["__format_version__"] = np.array(CHECKPOINT_FORMAT_VERSION)
    arrays["__meta__"] = np.array(json.dumps(dict(meta or {}), sort_keys=True))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    import json

    with np.load(path, allow_pickle=False) as z:
        version = int(z["__format_version__"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"{path}: checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}")
        meta = json.loads(str(z["__meta__"]))
        params = {k: z[k].copy() for k in z.files if not k.startswith("__")}
    return params, meta
