"""Labeled samples, line-delimited dataset files and the word-level vocabulary."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    text: str
    label: int


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_dataset(path, samples: Sequence[LabeledSample]):
    write_jsonl(path, (asdict(s) for s in samples))


def load_dataset(path, prefix: str | None = None) -> list[LabeledSample]:
    """Read ``{text, label}`` records; a missing ``sample_id`` is derived from the line number."""
    prefix = prefix or os.path.splitext(os.path.basename(str(path)))[0]
    out = []
    for i, rec in enumerate(read_jsonl(path)):
        out.append(LabeledSample(str(rec.get("sample_id", f"{prefix}-{i}")), rec["text"], int(rec["label"])))
    return out


class Vocab:
    """Whitespace word vocabulary; unknown words map to ``[UNK]``.

    Pair inputs are expected pre-joined with the literal ``[SEP]`` token.
    """

    def __init__(self, words: Sequence[str]):
        self.itos = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        counts = Counter(w for t in texts for w in t.split())
        return cls(sorted(w for w, c in counts.items() if c >= min_count))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def encode(self, text: str, max_len: int) -> list[int]:
        ids = [CLS_ID] + [self.stoi.get(w, UNK_ID) for w in text.split()]
        return ids[:max_len]

    def batch(self, texts: Sequence[str], max_len: int) -> np.ndarray:
        """Right-padded (B, T') id matrix with T' the longest encoded length."""
        rows = [self.encode(t, max_len) for t in texts]
        width = max(len(r) for r in rows)
        out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
        for i, r in enumerate(rows):
            out[i, : len(r)] = r
        return out

    def to_json(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    @classmethod
    def from_json(cls, words: Sequence[str]) -> "Vocab":
        return cls(list(words))
