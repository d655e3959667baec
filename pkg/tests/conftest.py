import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from groundprobe.datagen import GenConfig, Split, build_corpus
from groundprobe.encoder import ScorerModel, TrainConfig, corpus_vocab, train
from groundprobe.geometry import GRID, BoundingBox

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def boxes(draw, lo=0, hi=GRID):
    x0, x1 = sorted((draw(st.integers(lo, hi)), draw(st.integers(lo, hi))))
    y0, y1 = sorted((draw(st.integers(lo, hi)), draw(st.integers(lo, hi))))
    return BoundingBox(x0, x1, y0, y1)


@pytest.fixture(scope="session")
def small_corpus():
    return build_corpus(GenConfig(seed=3, screens=300, commands_per_screen=3), (0.5, 0.2, 0.3))


@pytest.fixture(scope="session")
def small_models(small_corpus):
    """Both scorers trained on the small corpus.

    The layout scorer needs far more data than this to generalize, so it is
    only used where any trained weights will do.
    """
    vocab = corpus_vocab(small_corpus)
    out = {}
    for kind, epochs in (("text", 30), ("layout", 8)):
        model = ScorerModel.init(kind, vocab, seed=1)
        train(model, small_corpus.pairs_in(Split.TRAIN), TrainConfig(learning_rate=0.3, epochs=epochs), small_corpus)
        out[kind] = model
    return out


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
