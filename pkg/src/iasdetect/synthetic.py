"""Keyword-driven synthetic classification corpora with a companion lexicon.

Two tasks are available: ``sentiment`` (2 classes, movie-review flavoured) and
``topic`` (4 classes, news-headline flavoured). Each class owns a set of
*concepts*; a concept is a frequent primary word plus two rarer synonyms that
carry the same label weight. A sentence is neutral filler plus one to three
keywords, and its label is decided by keyword counts, so a bag-of-words linear
rule separates every generated sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledSample
from .lexicon import Lexicon

# (primary, synonym, synonym, pos)
SENTIMENT_CONCEPTS = {
    1: [
        ("good", "fine", "decent", "ADJ"),
        ("great", "superb", "terrific", "ADJ"),
        ("charming", "delightful", "lovely", "ADJ"),
        ("wonderful", "marvelous", "fabulous", "ADJ"),
        ("brilliant", "dazzling", "splendid", "ADJ"),
        ("funny", "amusing", "hilarious", "ADJ"),
        ("beautiful", "gorgeous", "stunning", "ADJ"),
        ("clever", "smart", "witty", "ADJ"),
        ("fresh", "original", "inventive", "ADJ"),
        ("moving", "touching", "poignant", "ADJ"),
        ("exciting", "thrilling", "gripping", "ADJ"),
        ("enjoyable", "pleasant", "entertaining", "ADJ"),
        ("masterpiece", "gem", "triumph", "NOUN"),
        ("joy", "delight", "pleasure", "NOUN"),
        ("love", "adore", "cherish", "VERB"),
        ("recommend", "endorse", "praise", "VERB"),
    ],
    0: [
        ("bad", "poor", "lousy", "ADJ"),
        ("awful", "terrible", "dreadful", "ADJ"),
        ("annoying", "irritating", "grating", "ADJ"),
        ("boring", "dull", "tedious", "ADJ"),
        ("stupid", "dumb", "silly", "ADJ"),
        ("unfunny", "lame", "humorless", "ADJ"),
        ("ugly", "hideous", "unsightly", "ADJ"),
        ("clumsy", "sloppy", "careless", "ADJ"),
        ("stale", "trite", "derivative", "ADJ"),
        ("bland", "flat", "lifeless", "ADJ"),
        ("confusing", "baffling", "muddled", "ADJ"),
        ("painful", "agonizing", "excruciating", "ADJ"),
        ("disaster", "mess", "failure", "NOUN"),
        ("bore", "chore", "slog", "NOUN"),
        ("hate", "loathe", "despise", "VERB"),
        ("avoid", "skip", "shun", "VERB"),
    ],
}

SENTIMENT_FILLER = {
    "DET": ["the", "a", "this", "that", "every", "some", "its", "their"],
    "NOUN": [
        "movie", "film", "story", "plot", "cast", "actor", "actress", "director", "script",
        "scene", "ending", "music", "soundtrack", "camera", "dialogue", "character", "performance",
        "sequel", "premise", "pacing", "audience", "theater", "screen", "studio", "drama", "comedy",
        "journey", "show", "episode", "series", "effort", "picture", "role", "lead", "villain",
        "hero", "setting", "budget", "runtime", "trailer", "costume", "editing", "score", "twist",
        "romance", "thriller", "documentary", "remake", "franchise", "critic",
    ],
    "VERB": [
        "is", "was", "seems", "feels", "looks", "remains", "becomes", "felt", "sounds", "plays",
        "runs", "moves", "shows", "tells", "offers", "delivers",
    ],
    "ADV": [
        "often", "quite", "very", "really", "rather", "somewhat", "fairly", "truly", "sometimes",
        "mostly", "always", "simply", "just", "still", "almost", "nearly", "largely", "mainly",
    ],
    "ADP": ["and", "with", "of", "in", "about", "for", "to", "at", "by", "from", "on", "as"],
    "ADJ": [
        "long", "short", "new", "old", "recent", "first", "final", "main", "whole", "local",
        "french", "american", "modern", "classic", "big", "small", "early", "late", "young",
        "second", "familiar", "quiet", "loud", "dark", "bright", "slow", "fast", "simple",
    ],
}

TOPIC_CONCEPTS = {
    0: [  # world
        ("war", "conflict", "battle", "NOUN"),
        ("election", "vote", "ballot", "NOUN"),
        ("president", "leader", "premier", "NOUN"),
        ("treaty", "accord", "pact", "NOUN"),
        ("embassy", "consulate", "mission", "NOUN"),
        ("refugees", "migrants", "exiles", "NOUN"),
        ("protest", "rally", "demonstration", "NOUN"),
        ("minister", "envoy", "diplomat", "NOUN"),
    ],
    1: [  # sports
        ("match", "game", "fixture", "NOUN"),
        ("goal", "touchdown", "basket", "NOUN"),
        ("coach", "trainer", "manager", "NOUN"),
        ("league", "division", "conference", "NOUN"),
        ("champion", "winner", "titleholder", "NOUN"),
        ("stadium", "arena", "ballpark", "NOUN"),
        ("striker", "forward", "attacker", "NOUN"),
        ("tournament", "cup", "championship", "NOUN"),
    ],
    2: [  # business
        ("market", "exchange", "bourse", "NOUN"),
        ("profit", "earnings", "gain", "NOUN"),
        ("shares", "stocks", "equities", "NOUN"),
        ("merger", "acquisition", "takeover", "NOUN"),
        ("investor", "shareholder", "financier", "NOUN"),
        ("revenue", "income", "sales", "NOUN"),
        ("bank", "lender", "creditor", "NOUN"),
        ("economy", "recession", "inflation", "NOUN"),
    ],
    3: [  # sci/tech
        ("software", "program", "application", "NOUN"),
        ("computer", "laptop", "desktop", "NOUN"),
        ("internet", "web", "online", "NOUN"),
        ("chip", "processor", "semiconductor", "NOUN"),
        ("startup", "venture", "newcomer", "NOUN"),
        ("robot", "android", "automaton", "NOUN"),
        ("smartphone", "handset", "mobile", "NOUN"),
        ("network", "broadband", "wireless", "NOUN"),
    ],
}

TOPIC_FILLER = {
    "DET": ["the", "a", "this", "that", "its", "their", "some", "another"],
    "NOUN": [
        "report", "officials", "week", "year", "sources", "plans", "news", "statement", "people",
        "city", "country", "group", "company", "team", "day", "month", "deal", "talks", "record",
        "season", "results", "analysts", "update", "story", "decision", "meeting", "record",
        "move", "end", "start", "hopes", "fans", "workers", "critics", "spokesman",
    ],
    "VERB": [
        "said", "says", "announced", "reported", "expects", "faces", "plans", "wins", "ends",
        "starts", "confirmed", "denied", "warned", "hopes", "sees", "makes",
    ],
    "ADV": ["today", "yesterday", "again", "still", "now", "soon", "sharply", "quickly", "late", "early"],
    "ADP": ["and", "with", "of", "in", "about", "for", "to", "at", "by", "from", "on", "after", "over"],
    "ADJ": ["new", "major", "big", "local", "national", "first", "last", "top", "latest", "key", "former", "second"],
}

PRIMARY_RATE = 0.8


@dataclass
class SyntheticTask:
    kind: str
    num_classes: int
    train: list[LabeledSample]
    val: list[LabeledSample]
    test: list[LabeledSample]
    lexicon: Lexicon
    keyword_class: dict[str, int]

    @property
    def vocabulary(self) -> set[str]:
        return {w for s in self.train + self.val + self.test for w in s.text.split()}


def _tables(kind: str):
    if kind == "sentiment":
        return SENTIMENT_CONCEPTS, SENTIMENT_FILLER
    if kind == "topic":
        return TOPIC_CONCEPTS, TOPIC_FILLER
    raise ValueError(f"unknown synthetic task {kind!r} (expected 'sentiment' or 'topic')")


def build_lexicon(kind: str, rng: np.random.Generator | None = None) -> Lexicon:
    """Synonyms within a concept, antonyms across classes, neighbors within a class.

    Neighbors mix same-POS and other-POS words so a POS filter has something to do.
    """
    concepts, filler = _tables(kind)
    rng = rng or np.random.default_rng(0)
    lex = Lexicon()
    classes = sorted(concepts)
    for c in classes:
        for idx, (*words, pos) in enumerate(concepts[c]):
            for w in words:
                lex.add(w, "pos", pos)
                for v in words:
                    lex.add(w, "synonym", v)
                # antonym: same concept slot in every other class
                for other in classes:
                    if other == c:
                        continue
                    partner = concepts[other][idx % len(concepts[other])]
                    lex.add(w, "antonym", partner[0])
                    lex.add(w, "antonym", partner[1 + (words.index(w) % 2)])
                for v in words:
                    lex.add(w, "neighbor", v)
            same_class = [cw for cw in concepts[c] if cw is not concepts[c][idx]]
            picks = rng.choice(len(same_class), size=min(3, len(same_class)), replace=False)
            for w in words:
                for j in picks:
                    lex.add(w, "neighbor", same_class[int(j)][int(rng.integers(0, 3))])
    for pos, words in filler.items():
        for w in words:
            lex.pos.setdefault(w, pos)
        if pos in ("ADV", "ADJ", "NOUN", "VERB"):
            for w in words:
                others = [v for v in words if v != w]
                for j in rng.choice(len(others), size=min(3, len(others)), replace=False):
                    lex.add(w, "neighbor", others[int(j)])
    return lex


def _draw_keyword(concepts, cls: int, rng) -> str:
    concept = concepts[cls][int(rng.integers(len(concepts[cls])))]
    r = rng.random()
    if r < PRIMARY_RATE:
        return concept[0]
    return concept[1] if r < PRIMARY_RATE + (1 - PRIMARY_RATE) / 2 else concept[2]


def _filler_sentence(filler, rng, length: int) -> list[str]:
    pattern = ["DET", "NOUN", "VERB", "ADV", "ADJ", "ADP", "DET", "NOUN", "ADP", "NOUN", "ADV", "VERB"]
    start = int(rng.integers(0, 3))
    out = []
    for k in range(length):
        pos = pattern[(start + k) % len(pattern)]
        if rng.random() < 0.25:
            pos = list(filler)[int(rng.integers(len(filler)))]
        words = filler[pos]
        out.append(words[int(rng.integers(len(words)))])
    return out


def _keyword_classes(label: int, num_classes: int, rng) -> list[int]:
    """Class of each inserted keyword; ``label`` keeps a strict count majority."""
    r = rng.random()
    if r < 0.5:
        return [label]
    if r < 0.7:
        return [label, label]
    other = [c for c in range(num_classes) if c != label]
    if num_classes == 2 or rng.random() < 0.5:
        return [label, label, other[int(rng.integers(len(other)))]]
    return [label, label, label]


def _make_sample(concepts, filler, label, num_classes, rng) -> str:
    words = _filler_sentence(filler, rng, int(rng.integers(4, 10)))
    for c in _keyword_classes(label, num_classes, rng):
        words.insert(int(rng.integers(0, len(words) + 1)), _draw_keyword(concepts, c, rng))
    return " ".join(words)


def keyword_classes(kind: str) -> dict[str, int]:
    concepts, _ = _tables(kind)
    return {w: c for c, rows in concepts.items() for *ws, _pos in rows for w in ws}


def bow_rule(text: str, keyword_class: dict[str, int], num_classes: int) -> int:
    """Count-majority label rule; ties resolve to the lowest class id."""
    counts = np.zeros(num_classes)
    for w in text.split():
        if w in keyword_class:
            counts[keyword_class[w]] += 1
    return int(np.argmax(counts))


def perceptron_probe(samples, num_classes: int, epochs: int = 50) -> float:
    """Train a multiclass bag-of-words perceptron and return its training accuracy."""
    vocab = sorted({w for s in samples for w in s.text.split()})
    index = {w: i for i, w in enumerate(vocab)}
    x = np.zeros((len(samples), len(vocab) + 1))
    x[:, -1] = 1.0
    for i, s in enumerate(samples):
        for w in s.text.split():
            x[i, index[w]] += 1.0
    y = np.array([s.label for s in samples])
    w = np.zeros((num_classes, x.shape[1]))
    for _ in range(epochs):
        mistakes = 0
        for i in range(len(samples)):
            pred = int(np.argmax(w @ x[i]))
            if pred != y[i]:
                w[y[i]] += x[i]
                w[pred] -= x[i]
                mistakes += 1
        if mistakes == 0:
            break
    return float((np.argmax(x @ w.T, axis=1) == y).mean())


class GenerationError(RuntimeError):
    pass


def gen_synthetic(kind: str = "sentiment", size: int = 2000, seed: int = 0) -> SyntheticTask:
    """Generate train/val/test splits (size, size/8, size/5) plus the lexicon."""
    if size < 100:
        raise ValueError("size must be >= 100")
    concepts, filler = _tables(kind)
    num_classes = len(concepts)
    rng = np.random.default_rng([seed, 7919])
    splits = {}
    for name, n in (("train", size), ("val", size // 8), ("test", size // 5)):
        labels = np.arange(n) % num_classes
        rng.shuffle(labels)
        splits[name] = [
            LabeledSample(f"{name}-{i}", _make_sample(concepts, filler, int(y), num_classes, rng), int(y))
            for i, y in enumerate(labels)
        ]
    kw = keyword_classes(kind)
    everything = splits["train"] + splits["val"] + splits["test"]
    for s in everything:
        if bow_rule(s.text, kw, num_classes) != s.label:
            raise GenerationError(f"sample {s.sample_id} violates the keyword rule")
    acc = perceptron_probe(everything, num_classes)
    if acc < 1.0:
        raise GenerationError(f"bag-of-words probe accuracy {acc:.4f} < 1.0")
    lex = build_lexicon(kind, np.random.default_rng([seed, 104729]))
    return SyntheticTask(kind, num_classes, splits["train"], splits["val"], splits["test"], lex, kw)
