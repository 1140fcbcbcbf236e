import numpy as np
import pytest

from iasdetect.attacks import (
    ATTACK_TYPES, AUTHENTIC, SIMPLE_ATTACKS, Victim, assign_splits, attack_rng, build_benchmark, default_budget,
    deletion_importance, pwws, run_attack, simple_attack, textfooler, word_saliency,
)
from iasdetect.data import LabeledSample
from iasdetect.lexicon import Lexicon

from helpers import bow_victim_fn

KEYWORDS = {"good": 1, "great": 1, "superb": 1, "bad": 0, "awful": 0}


@pytest.fixture
def lexicon():
    lex = Lexicon()
    lex.add("good", "antonym", "bad")
    lex.add("good", "synonym", "fine")
    lex.add("great", "synonym", "grand")
    lex.add("movie", "synonym", "film")
    lex.add("good", "neighbor", "awful")
    lex.add("good", "neighbor", "nice")
    lex.add("movie", "neighbor", "show")
    for w in ("good", "awful", "nice", "great"):
        lex.add(w, "pos", "ADJ")
    for w in ("movie", "show"):
        lex.add(w, "pos", "NOUN")
    return lex


@pytest.fixture
def victim():
    return Victim(bow_victim_fn(KEYWORDS, 2))


def positive(text, sid="s-0"):
    return LabeledSample(sid, text, 1)


class TestSimpleAttacks:
    def test_antonym_flips_with_one_edit(self, victim, lexicon):
        ex = simple_attack(positive("the movie was good"), "word-antonym", victim, lexicon, np.random.default_rng(0))
        assert ex is not None
        assert ex.perturbed_text == "the movie was bad"
        assert ex.positions == [3] and ex.adversarial_class == 0 and ex.original_label == 1

    def test_char_deletion_changes_recorded_positions_only(self, victim, lexicon):
        src = "a fine movie that is good"
        ex = simple_attack(positive(src), "char-deletion", victim, lexicon, np.random.default_rng(1))
        assert ex is not None
        a, b = src.split(), ex.perturbed_text.split()
        assert len(a) == len(b)
        assert [i for i in range(len(a)) if a[i] != b[i]] == ex.positions
        for i in ex.positions:
            assert len(b[i]) == len(a[i]) - 1

    def test_char_order_swap_keeps_outer_characters(self, victim, lexicon):
        ex = simple_attack(positive("a great plot"), "char-order-swap", victim, lexicon, np.random.default_rng(2))
        assert ex is not None
        new = ex.perturbed_text.split()[1]
        assert new != "great" and new[0] == "g" and new[-1] == "t" and sorted(new) == sorted("great")

    def test_word_order_swap_touches_adjacent_pair(self, lexicon):
        # a victim that only looks at the first word
        vic = Victim(lambda texts: np.array([[0.1, 0.9] if t.split()[0] == "good" else [0.9, 0.1] for t in texts]))
        ex = simple_attack(positive("good movie here"), "word-order-swap", vic, lexicon, np.random.default_rng(0))
        assert ex.perturbed_text == "movie good here" and ex.positions == [0, 1]

    def test_replay_matches_adversarial_class(self, victim, lexicon):
        for kind in SIMPLE_ATTACKS:
            ex = simple_attack(positive("the movie was good"), kind, victim, lexicon, np.random.default_rng(3))
            if ex is not None:
                assert int(np.argmax(victim.proba([ex.perturbed_text.split()])[0])) == ex.adversarial_class != 1
                assert ex.perturbed_text != ex.source_text

    def test_no_flip_within_budget_returns_none(self, victim, lexicon):
        sample = positive("good great superb movie")
        assert simple_attack(sample, "word-deletion", victim, lexicon, np.random.default_rng(0), budget=1) is None

    def test_budget_respected(self, trained, trained_task):
        enc = trained[0]
        vic = Victim.from_encoder(enc)
        for s in trained_task.test[:30]:
            for kind in ("word-deletion", "char-insertion"):
                budget = default_budget(len(s.text.split()))
                ex = run_attack(kind, s, vic, trained_task.lexicon, attack_rng(0, s.sample_id, kind))
                if ex is not None:
                    assert len(ex.positions) <= budget + (kind == "word-order-swap")

    def test_misclassified_sample_not_attacked(self, victim, lexicon):
        wrong = LabeledSample("s-9", "the movie was good", 0)
        assert simple_attack(wrong, "word-antonym", victim, lexicon, np.random.default_rng(0)) is None

    def test_unknown_kind(self, victim, lexicon):
        with pytest.raises(ValueError):
            simple_attack(positive("good"), "pwws", victim, lexicon, np.random.default_rng(0))

    @pytest.mark.parametrize("n,expected", [(1, 1), (3, 1), (10, 3), (24, 7)])
    def test_default_budget(self, n, expected):
        assert default_budget(n) == expected


class TestPWWS:
    def test_keyword_outranks_filler(self, victim):
        words = "the movie was good".split()
        base = victim.proba([words])[0]
        sal = word_saliency(words, victim, 1, base[1])
        assert sal[3] > max(sal[:3])
        np.testing.assert_allclose(sal[:3], 0.0, atol=1e-12)

    def test_substitutions_are_synonyms(self, trained, trained_task):
        lex = trained_task.lexicon
        vic = Victim.from_encoder(trained[0])
        found = 0
        for s in trained_task.test[:60]:
            ex = pwws(s, vic, lex)
            if ex is None:
                continue
            found += 1
            a, b = s.text.split(), ex.perturbed_text.split()
            for i in ex.positions:
                assert b[i] in lex.synonyms(a[i])
        assert found > 0

    def test_deterministic(self, trained, trained_task):
        vic = Victim.from_encoder(trained[0])
        runs = [[(ex.record() if ex else None) for ex in (pwws(s, vic, trained_task.lexicon, np.random.default_rng(7))
                                                       for s in trained_task.test[:20])] for _ in range(2)]
        assert runs[0] == runs[1]


class TestTextFooler:
    def test_importance_matches_brute_force(self, trained, trained_task):
        enc = trained[0]
        vic = Victim.from_encoder(enc)
        for s in trained_task.test[:15]:
            words = s.text.split()
            base = enc.predict_proba([s.text])[0]
            y = int(np.argmax(base))
            oracle = np.array([base[y] - enc.predict_proba([" ".join(words[:i] + words[i + 1 :])])[0, y]
                               for i in range(len(words))])
            got = deletion_importance(words, vic, y, base[y])
            np.testing.assert_allclose(got, oracle, atol=1e-12)
            assert sorted(range(len(words)), key=lambda i: (-got[i], i)) == sorted(range(len(words)), key=lambda i: (-oracle[i], i))

    def test_neighbors_and_query_bound(self, trained, trained_task):
        lex = trained_task.lexicon
        vic = Victim.from_encoder(trained[0])
        max_nb = lex.max_neighbors()
        found = 0
        for s in trained_task.test[:80]:
            ex = textfooler(s, vic, lex)
            if ex is None:
                continue
            found += 1
            a, b = s.text.split(), ex.perturbed_text.split()
            assert ex.query_count <= len(a) * (1 + max_nb)
            for i in ex.positions:
                assert b[i] in lex.neighbors(a[i]) and lex.pos[b[i]] == lex.pos[a[i]]
        assert found > 0

    def test_pos_filter(self, lexicon):
        # "awful" flips the victim but "nice" keeps the class; both are ADJ neighbors of "good"
        vic = Victim(bow_victim_fn(KEYWORDS, 2))
        ex = textfooler(positive("the movie was good"), vic, lexicon)
        assert ex.perturbed_text == "the movie was awful"

    def test_pos_mismatch_excluded(self):
        lex = Lexicon()
        lex.add("good", "neighbor", "bad")
        lex.add("good", "pos", "ADJ")
        lex.add("bad", "pos", "NOUN")
        assert textfooler(positive("the movie was good"), Victim(bow_victim_fn(KEYWORDS, 2)), lex) is None


@pytest.fixture(scope="module")
def bench(trained, trained_task):
    enc = trained[0]
    before = enc.checksum()
    b = build_benchmark(trained_task.test, enc, trained_task.lexicon, seed=0, per_type_quota=4)
    return b, before


class TestBenchmark:
    def test_split_sizes(self):
        labels = assign_splits(100)
        assert (labels.count("train"), labels.count("val"), labels.count("test")) == (70, 10, 20)

    def test_split_prefix_within_one_sample(self):
        labels = assign_splits(57)
        for k in range(1, 58):
            pre = labels[:k]
            for name, frac in (("train", 0.7), ("val", 0.1), ("test", 0.2)):
                assert abs(pre.count(name) - frac * k) <= 1.0

    def test_contracts(self, bench, trained, trained_task):
        b, before = bench
        enc = trained[0]
        assert enc.checksum() == before
        auth = [it for it in b.items if it.attack_type == AUTHENTIC]
        np.testing.assert_array_equal(enc.predict([it.text for it in auth]), [it.target_class for it in auth])
        adv = [it for it in b.items if it.label == 1]
        np.testing.assert_array_equal(enc.predict([it.text for it in adv]), [it.target_class for it in adv])
        auth_ids = {it.sample_id for it in auth}
        assert all(it.source_id in auth_ids for it in adv)
        assert len({it.sample_id for it in b.items}) == len(b.items)
        assert {it.attack_type for it in adv} <= set(ATTACK_TYPES)

    def test_splits_disjoint_and_ratio(self, bench):
        b, _ = bench
        sizes = {k: len(b.split(k)) for k in ("train", "val", "test")}
        assert sum(sizes.values()) == len(b.items)
        for name, frac in (("train", 0.7), ("val", 0.1), ("test", 0.2)):
            assert abs(sizes[name] - frac * len(b.items)) <= 1.0

    def test_deterministic(self, bench, trained, trained_task):
        b, _ = bench
        again = build_benchmark(trained_task.test, trained[0], trained_task.lexicon, seed=0, per_type_quota=4)
        assert [vars(i) for i in again.items] == [vars(i) for i in b.items]

    def test_zero_success_type_is_warned_and_omitted(self, trained, trained_task):
        b = build_benchmark(trained_task.test, trained[0], Lexicon(), types=("word-antonym",), per_type_quota=2)
        assert b.warnings and "word-antonym" in b.warnings[0]
        assert all(it.attack_type == AUTHENTIC for it in b.items)
