import numpy as np
import pytest

from iasdetect.data import Vocab
from iasdetect.encoder import AuxHeads, Encoder, ModelConfig, TrainConfig, fine_tune, train_aux_heads
from iasdetect.synthetic import gen_synthetic

TINY = dict(n=3, m=2, d_model=8, d_ff=16, max_len=12, num_classes=2, dropout=0.0)


@pytest.fixture(scope="session")
def sentiment_task():
    return gen_synthetic("sentiment", 200, seed=0)


@pytest.fixture(scope="session")
def tiny_vocab(sentiment_task):
    return Vocab.build(s.text for s in sentiment_task.train)


@pytest.fixture
def tiny_encoder(tiny_vocab):
    enc = Encoder(ModelConfig(**TINY), tiny_vocab, seed=3)
    # spread the weights so gate gradients are far from zero
    for k, t in enc.params.items():
        if not k.endswith(("_g", "_b")) and t.data.ndim > 1:
            t.data *= 20.0
    enc.set_frozen(True)
    return enc


@pytest.fixture(scope="session")
def trained_task():
    return gen_synthetic("sentiment", 400, seed=0)


@pytest.fixture(scope="session")
def trained(trained_task):
    """A quickly trained three-layer model plus auxiliary heads (about 0.9 test accuracy)."""
    cfg = ModelConfig(n=3, m=2, d_model=32, d_ff=64, max_len=16, num_classes=2)
    enc, rec = fine_tune(trained_task.train, cfg, val=trained_task.val,
                         tc=TrainConfig(learning_rate=2e-3, max_epochs=60, patience=8, seed=0))
    aux = train_aux_heads(enc, trained_task.train, trained_task.val)
    return enc, aux, rec


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_aux(enc, seed=0):
    return AuxHeads(enc.config.n, enc.config.d_model, enc.config.num_classes, seed=seed)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" in props and rep.when == "call":
                rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL", props.get("detail", "")))
    if rows:
        terminalreporter.section("acceptance criteria")
        for num, status, detail in sorted(rows):
            terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")
