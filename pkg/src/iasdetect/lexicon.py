"""Word relations used by the attacks: synonyms, antonyms, embedding neighbors, POS tags.

On disk the lexicon is tab-separated ``word<TAB>relation<TAB>related`` with
relation one of ``synonym``, ``antonym``, ``neighbor`` or ``pos``.
"""

from __future__ import annotations

from collections import defaultdict

RELATIONS = ("synonym", "antonym", "neighbor")


class Lexicon:
    def __init__(self):
        self._rel: dict[str, dict[str, list[str]]] = {r: defaultdict(list) for r in RELATIONS}
        self.pos: dict[str, str] = {}

    def add(self, word: str, relation: str, related: str):
        if relation == "pos":
            self.pos[word] = related
            return
        if relation not in self._rel:
            raise ValueError(f"unknown lexicon relation {relation!r}")
        if related == word:
            return
        bucket = self._rel[relation][word]
        if related not in bucket:
            bucket.append(related)

    def synonyms(self, word: str) -> list[str]:
        return list(self._rel["synonym"].get(word, ()))

    def antonyms(self, word: str) -> list[str]:
        return list(self._rel["antonym"].get(word, ()))

    def neighbors(self, word: str) -> list[str]:
        return list(self._rel["neighbor"].get(word, ()))

    def related(self, word: str, relation: str) -> list[str]:
        return list(self._rel[relation].get(word, ()))

    def max_neighbors(self) -> int:
        return max((len(v) for v in self._rel["neighbor"].values()), default=0)

    def words(self) -> set[str]:
        out = set(self.pos)
        for rel in self._rel.values():
            for w, vals in rel.items():
                out.add(w)
                out.update(vals)
        return out

    def restrict(self, vocab) -> "Lexicon":
        """Copy keeping only relations whose both ends are in ``vocab``."""
        lex = Lexicon()
        for w, p in self.pos.items():
            if w in vocab:
                lex.pos[w] = p
        for r, table in self._rel.items():
            for w, vals in table.items():
                if w not in vocab:
                    continue
                for v in vals:
                    if v in vocab:
                        lex.add(w, r, v)
        return lex

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for w in sorted(self.pos):
                fh.write(f"{w}\tpos\t{self.pos[w]}\n")
            for r in RELATIONS:
                for w in sorted(self._rel[r]):
                    for v in self._rel[r][w]:
                        fh.write(f"{w}\t{r}\t{v}\n")

    @classmethod
    def load(cls, path) -> "Lexicon":
        lex = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
                lex.add(*parts)
        return lex
