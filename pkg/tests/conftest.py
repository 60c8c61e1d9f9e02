import numpy as np
import pytest

from dsduda import corpus as C
from dsduda.model import CbrnnConfig
from dsduda.train import TrainConfig

TINY_MODEL = CbrnnConfig(n_banks=2, bank_channels=3, hidden=5, attention_hidden=4)


def tiny_synth(seed=0, target=True):
    src = C.DomainSpec(speakers_per_class=2, utterances_per_speaker=3, tempo_range=(0.9, 1.1))
    tgt = C.DomainSpec(speakers_per_class=2 if target else 1, utterances_per_speaker=3, healthy_ratio=2.0,
                       stimulus_mix=(0.4, 0.2, 0.4), tilt_db_per_octave=-10.0, noise_floor=0.1,
                       tempo_range=(1.0, 1.3))
    return C.SynthConfig(source=src, target=tgt, seed=seed)


@pytest.fixture(scope="session")
def tiny_corpus():
    return C.generate_synthetic(tiny_synth())


@pytest.fixture(scope="session")
def source_only(tiny_corpus):
    return [u for u in tiny_corpus if u.domain == "source"]


@pytest.fixture
def tiny_model():
    return TINY_MODEL


@pytest.fixture
def quick_train():
    return TrainConfig(epochs=1, batch_size=4, alpha=1e-3, beta=1e-3, gamma=1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report ------------------------------------------------

ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion; the test fails when it is not met."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
