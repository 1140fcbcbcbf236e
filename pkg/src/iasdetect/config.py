"""Pipeline configuration: one flat, JSON-serializable record whose hash tags every artifact."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attacks import ATTACK_TYPES

ENV_OUTPUT_ROOT = "IASDETECT_OUT"
DEFAULT_OUTPUT = "runs/default"
TASKS = ("synthetic-sentiment", "synthetic-topic", "external")
ABLATIONS = ("full", "mask", "flip", "lw", "bin", "no-cutmix")


@dataclass
class PipelineConfig:
    # task
    task: str = "synthetic-sentiment"
    data_size: int = 2000
    data_dir: str = ""  # only for task == "external": {train,val,test}.jsonl and optional lexicon.tsv
    # encoder
    preset: str = "small"
    compare_presets: tuple = ("small", "base")
    max_len: int = 24
    seed: int = 0
    enc_learning_rate: float = 3e-4
    enc_batch_size: int = 32
    enc_max_epochs: int = 100
    enc_patience: int = 5
    enc_min_delta: float = 1e-3
    aux_learning_rate: float = 1e-3
    aux_max_epochs: int = 100
    aux_patience: int = 5
    # gating
    ias_alpha: float = 6.0
    ias_eta: int = 10
    ias_beta: float = 0.8
    ias_beta_step: float = 0.2
    ias_learning_rate: float = 0.1
    ias_optimizer: str = "adam"
    ias_init: float = 0.5
    # attacks
    attack_types: tuple = ATTACK_TYPES
    attack_quota: int = 40
    attack_budget_fraction: float = 0.3
    # features and detector
    feature_zscore: bool = False
    cutmix_r: int = 2
    cutmix_ratio: float = 1.0
    det_learning_rate: float = 1e-3
    det_batch_size: int = 32
    det_max_epochs: int = 100
    det_patience: int = 10
    det_dropout: float = 0.1
    det_seeds: tuple = (0, 1, 2)
    ablations: tuple = ABLATIONS
    sweep_fractions: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    transfer_fractions: tuple = (0.25, 0.5, 0.75)
    refereeing_threshold: float = 0.5
    analysis_trajectories: int = 8
    output_dir: str = field(default="", metadata={"hashed": False})

    def __post_init__(self):
        for f in fields(self):
            if f.type == "tuple" and isinstance(getattr(self, f.name), list):
                setattr(self, f.name, tuple(getattr(self, f.name)))
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "external" and not self.data_dir:
            raise ValueError("task 'external' needs data_dir")
        unknown = set(self.attack_types) - set(ATTACK_TYPES)
        if unknown:
            raise ValueError(f"unknown attack types {sorted(unknown)}")
        bad = set(self.ablations) - set(ABLATIONS)
        if bad:
            raise ValueError(f"unknown ablations {sorted(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def config_hash(self) -> str:
        hashed = {f.name: v for f, v in zip(fields(self), self.to_dict().values()) if f.metadata.get("hashed", True)}
        return hashlib.sha256(json.dumps(hashed, sort_keys=True).encode()).hexdigest()[:16]

    def resolve_output(self) -> Path:
        return Path(self.output_dir or os.environ.get(ENV_OUTPUT_ROOT) or DEFAULT_OUTPUT)
