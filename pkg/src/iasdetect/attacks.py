"""Black-box word- and character-level attacks and the authentic/adversarial benchmark.

All attacks share one contract: given a correctly classified sample, return an
:class:`AdversarialExample` whose perturbed text changes the model's prediction,
or ``None`` when the edit budget runs out first.
"""

from __future__ import annotations

import logging
import math
import string
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import UNK, LabeledSample
from .lexicon import Lexicon

log = logging.getLogger(__name__)

WORD_ATTACKS = ("word-deletion", "word-antonym", "word-synonym", "word-embedding", "word-order-swap")
CHAR_ATTACKS = ("char-substitution", "char-deletion", "char-insertion", "char-order-swap")
SIMPLE_ATTACKS = WORD_ATTACKS + CHAR_ATTACKS
ATTACK_TYPES = WORD_ATTACKS + ("pwws", "textfooler") + CHAR_ATTACKS
AUTHENTIC = "authentic"
LETTERS = string.ascii_lowercase


@dataclass
class AdversarialExample:
    sample_id: str
    source_text: str
    perturbed_text: str
    attack_type: str
    original_label: int
    adversarial_class: int
    query_count: int
    positions: list[int] = field(default_factory=list)

    def record(self) -> dict:
        return asdict(self)


class Victim:
    """Query wrapper: probabilities for word lists, with a running query counter."""

    def __init__(self, proba_fn: Callable[[Sequence[str]], np.ndarray]):
        self._proba = proba_fn
        self.queries = 0

    @classmethod
    def from_encoder(cls, enc) -> "Victim":
        return cls(enc.predict_proba)

    def proba(self, word_lists: Sequence[Sequence[str]]) -> np.ndarray:
        self.queries += len(word_lists)
        return self._proba([" ".join(w for w in ws if w is not None) for ws in word_lists])


def default_budget(n_words: int, fraction: float = 0.3) -> int:
    return max(1, int(math.floor(fraction * n_words)))


# ---------------------------------------------------------------------------
# character perturbations


def _char_edit(word: str, kind: str, rng: np.random.Generator) -> str | None:
    if kind == "char-substitution" and len(word) >= 1:
        k = int(rng.integers(len(word)))
        choices = [c for c in LETTERS if c != word[k]]
        return word[:k] + choices[int(rng.integers(len(choices)))] + word[k + 1 :]
    if kind == "char-deletion" and len(word) >= 2:
        k = int(rng.integers(len(word)))
        return word[:k] + word[k + 1 :]
    if kind == "char-insertion":
        k = int(rng.integers(len(word) + 1))
        return word[:k] + LETTERS[int(rng.integers(26))] + word[k:]
    if kind == "char-order-swap" and len(word) >= 4:
        # adjacent interior pair, first and last characters stay put
        for _ in range(8):
            k = int(rng.integers(1, len(word) - 2))
            if word[k] != word[k + 1]:
                return word[:k] + word[k + 1] + word[k] + word[k + 2 :]
        return None
    return None


# ---------------------------------------------------------------------------
# candidate generation for the greedy attacks


def _candidates(words: list[str], i: int, kind: str, lexicon: Lexicon, rng) -> list[tuple]:
    """Edits at position ``i`` as (op, payload) pairs."""
    w = words[i]
    if kind == "word-deletion":
        return [("delete", None)]
    if kind == "word-order-swap":
        if i + 1 < len(words) and words[i + 1] != w:
            return [("swap", None)]
        return []
    if kind in ("word-antonym", "word-synonym", "word-embedding"):
        rel = {"word-antonym": "antonym", "word-synonym": "synonym", "word-embedding": "neighbor"}[kind]
        return [("sub", v) for v in lexicon.related(w, rel)]
    if kind in CHAR_ATTACKS:
        new = _char_edit(w, kind, rng)
        return [] if new is None or new == w else [("sub", new)]
    raise ValueError(f"unknown attack kind {kind!r}")


def _apply(slots: list, i: int, edit: tuple) -> list[int]:
    op, payload = edit
    if op == "delete":
        slots[i] = None
        return [i]
    if op == "swap":
        slots[i], slots[i + 1] = slots[i + 1], slots[i]
        return [i, i + 1]
    slots[i] = payload
    return [i]


def _finish(sample, kind, slots, y, pred, victim, positions) -> AdversarialExample:
    return AdversarialExample(
        sample_id=f"{sample.sample_id}:{kind}",
        source_text=sample.text,
        perturbed_text=" ".join(w for w in slots if w is not None),
        attack_type=kind,
        original_label=int(y),
        adversarial_class=int(pred),
        query_count=victim.queries,
        positions=sorted(set(positions)),
    )


def _greedy_apply(sample, kind, words, ranked, victim, y, budget) -> AdversarialExample | None:
    """Apply ranked (position, edit) pairs cumulatively until the prediction changes."""
    slots: list = list(words)
    touched: list[int] = []
    used = 0
    for i, edit in ranked:
        if used >= budget:
            break
        if any(p in touched for p in ([i, i + 1] if edit[0] == "swap" else [i])):
            continue
        touched += _apply(slots, i, edit)
        used += 1
        probs = victim.proba([slots])[0]
        pred = int(np.argmax(probs))
        if pred != y:
            return _finish(sample, kind, slots, y, pred, victim, touched)
    return None


def simple_attack(
    sample: LabeledSample, kind: str, victim: Victim, lexicon: Lexicon, rng: np.random.Generator,
    budget: int | None = None,
) -> AdversarialExample | None:
    """Rank positions by the confidence drop of their best single edit, then apply greedily."""
    if kind not in SIMPLE_ATTACKS:
        raise ValueError(f"{kind!r} is not a simple attack kind")
    words = sample.text.split()
    if not words:
        return None
    budget = default_budget(len(words)) if budget is None else budget
    victim.queries = 0
    base = victim.proba([words])[0]
    y = int(np.argmax(base))
    if y != sample.label:
        return None
    cands = []
    for i in range(len(words)):
        for edit in _candidates(words, i, kind, lexicon, rng):
            slots = list(words)
            _apply(slots, i, edit)
            cands.append((i, edit, slots))
    if not cands:
        return None
    probs = victim.proba([c[2] for c in cands])[:, y]
    best: dict[int, tuple[float, tuple]] = {}
    for (i, edit, _), p in zip(cands, probs):
        drop = base[y] - p
        if i not in best or drop > best[i][0]:
            best[i] = (drop, edit)
    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    return _greedy_apply(sample, kind, words, [(i, e) for i, (_, e) in ranked], victim, y, budget)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def word_saliency(words: list[str], victim: Victim, y: int, base_p: float) -> np.ndarray:
    """Probability drop of class ``y`` when each word becomes the unknown token."""
    probs = victim.proba([words[:i] + [UNK] + words[i + 1 :] for i in range(len(words))])[:, y]
    return base_p - probs


def pwws(
    sample: LabeledSample, victim: Victim, lexicon: Lexicon, rng: np.random.Generator | None = None,
    budget: int | None = None,
) -> AdversarialExample | None:
    """Probability-weighted word saliency: softmax(saliency) x best synonym drop."""
    words = sample.text.split()
    if not words:
        return None
    budget = default_budget(len(words)) if budget is None else budget
    victim.queries = 0
    base = victim.proba([words])[0]
    y = int(np.argmax(base))
    if y != sample.label:
        return None
    sal = _softmax(word_saliency(words, victim, y, base[y]))
    scored = []
    for i, w in enumerate(words):
        syns = lexicon.synonyms(w)
        if not syns:
            continue
        probs = victim.proba([words[:i] + [s] + words[i + 1 :] for s in syns])[:, y]
        k = int(np.argmin(probs))
        scored.append((sal[i] * (base[y] - probs[k]), i, syns[k]))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return _greedy_apply(sample, "pwws", words, [(i, ("sub", s)) for _, i, s in scored], victim, y, budget)


def deletion_importance(words: list[str], victim: Victim, y: int, base_p: float) -> np.ndarray:
    probs = victim.proba([words[:i] + words[i + 1 :] for i in range(len(words))])[:, y]
    return base_p - probs


def textfooler(
    sample: LabeledSample, victim: Victim, lexicon: Lexicon, rng: np.random.Generator | None = None,
    budget: int | None = None,
) -> AdversarialExample | None:
    """Deletion-importance ranking, POS-preserving neighbor substitution.

    ``query_count`` counts queries on perturbed texts (the reference query on the
    unmodified input is excluded), bounded by |words| x (1 + max neighbors).
    """
    words = sample.text.split()
    if not words:
        return None
    budget = default_budget(len(words)) if budget is None else budget
    victim.queries = 0
    base = victim.proba([words])[0]
    victim.queries = 0
    y = int(np.argmax(base))
    if y != sample.label:
        return None
    imp = deletion_importance(words, victim, y, base[y])
    order = sorted(range(len(words)), key=lambda i: (-imp[i], i))
    slots = list(words)
    current_p = base[y]
    touched: list[int] = []
    for i in order:
        if len(touched) >= budget:
            break
        pos = lexicon.pos.get(words[i])
        cands = [v for v in lexicon.neighbors(words[i]) if pos is not None and lexicon.pos.get(v) == pos]
        if not cands:
            continue
        trial = []
        for v in cands:
            s = list(slots)
            s[i] = v
            trial.append(s)
        probs = victim.proba(trial)
        k = int(np.argmin(probs[:, y]))
        if probs[k, y] >= current_p:
            continue
        slots[i] = cands[k]
        touched.append(i)
        current_p = probs[k, y]
        pred = int(np.argmax(probs[k]))
        if pred != y:
            return _finish(sample, "textfooler", slots, y, pred, victim, touched)
    return None


def run_attack(kind: str, sample, victim, lexicon, rng, budget=None) -> AdversarialExample | None:
    if kind == "pwws":
        return pwws(sample, victim, lexicon, rng, budget)
    if kind == "textfooler":
        return textfooler(sample, victim, lexicon, rng, budget)
    return simple_attack(sample, kind, victim, lexicon, rng, budget)


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkItem:
    sample_id: str
    text: str
    label: int  # 0 authentic, 1 adversarial
    attack_type: str
    target_class: int
    split: str
    source_id: str


@dataclass
class Benchmark:
    items: list[BenchmarkItem]
    adversarial: list[AdversarialExample]
    warnings: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[BenchmarkItem]:
        return [it for it in self.items if it.split == name]

    def stats(self) -> dict:
        out = {"total": len(self.items), "per_split": {}, "per_type": {}}
        for it in self.items:
            out["per_split"][it.split] = out["per_split"].get(it.split, 0) + 1
            out["per_type"][it.attack_type] = out["per_type"].get(it.attack_type, 0) + 1
        out["warnings"] = list(self.warnings)
        return out


def attack_rng(seed: int, sample_id: str, kind: str) -> np.random.Generator:
    """Independent stream per (global seed, sample id, attack type)."""
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode()), zlib.crc32(kind.encode())])


SPLIT_FRACTIONS = (("train", 0.7), ("val", 0.1), ("test", 0.2))


def assign_splits(n: int) -> list[str]:
    """Low-discrepancy 70/10/20 labels: every prefix stays within one sample of the ratio."""
    counts = {name: 0 for name, _ in SPLIT_FRACTIONS}
    out = []
    for k in range(1, n + 1):
        name = max(SPLIT_FRACTIONS, key=lambda nf: nf[1] * k - counts[nf[0]])[0]
        counts[name] += 1
        out.append(name)
    return out


def build_benchmark(
    test_set: Sequence[LabeledSample],
    enc,
    lexicon: Lexicon,
    seed: int = 0,
    per_type_quota: int = 40,
    types: Sequence[str] = ATTACK_TYPES,
    budget_fraction: float = 0.3,
    max_authentic: int | None = None,
) -> Benchmark:
    victim = Victim.from_encoder(enc)
    preds = enc.predict([s.text for s in test_set])
    authentic = [s for s, p in zip(test_set, preds) if p == s.label]
    if max_authentic is not None:
        authentic = authentic[:max_authentic]
    warnings = []
    adversarial: list[AdversarialExample] = []
    for t_idx, kind in enumerate(types):
        order = np.random.default_rng([seed, 11, t_idx]).permutation(len(authentic))
        found = 0
        for s_idx in order:
            if found >= per_type_quota:
                break
            sample = authentic[int(s_idx)]
            rng = attack_rng(seed, sample.sample_id, kind)
            budget = default_budget(len(sample.text.split()), budget_fraction)
            ex = run_attack(kind, sample, victim, lexicon, rng, budget)
            if ex is not None:
                adversarial.append(ex)
                found += 1
        if found == 0:
            warnings.append(f"attack type {kind} produced no successful examples; omitted")
            log.warning(warnings[-1])
        log.info("attack %s: %d examples", kind, found)
    if adversarial:
        replay = enc.predict([a.perturbed_text for a in adversarial])
        bad = [a.sample_id for a, p in zip(adversarial, replay) if p != a.adversarial_class]
        if bad:
            raise RuntimeError(f"adversarial replay mismatch for {bad[:5]}")

    groups: list[list[BenchmarkItem]] = [[
        BenchmarkItem(s.sample_id, s.text, 0, AUTHENTIC, s.label, "", s.sample_id) for s in authentic
    ]]
    for kind in types:
        groups.append([
            BenchmarkItem(a.sample_id, a.perturbed_text, 1, kind, a.adversarial_class, "", a.sample_id.split(":")[0])
            for a in adversarial if a.attack_type == kind
        ])
    split_rng = np.random.default_rng([seed, 13])
    ordered = []
    for grp in groups:
        ordered += [grp[int(i)] for i in split_rng.permutation(len(grp))]
    items = []
    for it, name in zip(ordered, assign_splits(len(ordered))):
        it.split = name
        items.append(it)
    return Benchmark(items, adversarial, warnings)
