import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groundprobe import encoder
from groundprobe.datagen import GenConfig, Split, build_corpus, generate_screen
from groundprobe.encoder import (
    ModelKind,
    ScorerModel,
    TrainConfig,
    Vocab,
    coord_bucket,
    encode_inputs,
    encode_pair,
    ground,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    score,
    tokenize,
    train,
)
from groundprobe.errors import (
    DataError,
    DimensionMismatch,
    EmptyCommand,
    EmptyScreen,
    NonFiniteLoss,
    SchemaMismatch,
)
from groundprobe.geometry import BoundingBox, Command, Reasoning, Screen, UIElement
from groundprobe.probing import import_representations

VOCAB = Vocab.build(["click on the cancel button", "ok back settings tap"])


def model(kind="layout", seed=0, **kw):
    return ScorerModel.init(kind, VOCAB, seed=seed, **kw)


def test_vocab_reserved():
    assert VOCAB.tokens[:3] == [encoder.PAD, encoder.UNK, encoder.SEP]
    assert (VOCAB.pad, VOCAB.unk, VOCAB.sep) == (0, 1, 2)
    assert sorted(VOCAB.index.values()) == list(range(len(VOCAB)))


def test_tokenize_examples():
    ids = tokenize("Click on the Cancel button", VOCAB)
    assert [VOCAB.tokens[i] for i in ids] == ["click", "on", "the", "cancel", "button"]
    assert tokenize("", VOCAB) == []
    assert tokenize("zebra", VOCAB) == [VOCAB.unk]
    assert tokenize("a_b-c", VOCAB) == [VOCAB.unk] * 3
    assert len(tokenize("ok " * 50, VOCAB)) == 32


def test_coord_bucket_range():
    assert coord_bucket(0, 50) == 0 and coord_bucket(1000, 50) == 49 and coord_bucket(999, 50) == 49
    assert coord_bucket(20, 50) == 1 and coord_bucket(19, 50) == 0


def test_kind_parse():
    assert ModelKind.parse("text") is ModelKind.TEXT and ModelKind.parse("layout") is ModelKind.LAYOUT
    with pytest.raises(DataError):
        ModelKind.parse("vision")


def test_train_config_invariants():
    assert TrainConfig() == TrainConfig(1e-3, 64, 5, 0)
    with pytest.raises(DataError):
        TrainConfig(epochs=0)
    with pytest.raises(DataError):
        TrainConfig(learning_rate=0)


def test_shared_text_pathway_shapes():
    t, l = model("text"), model("layout")
    for k, v in t.params.items():
        assert l.params[k].shape == v.shape
    assert set(l.params) - set(t.params) == {"x0", "x1", "y0", "y1"}
    assert l.params["x0"].shape == (50, 64)


E1 = UIElement("a", "ok", BoundingBox(0, 100, 0, 100))
E2 = UIElement("b", "ok", BoundingBox(700, 900, 600, 800))


def test_encode_pair_pure():
    m = model()
    assert np.array_equal(encode_pair(m, "tap ok", E1), encode_pair(m, "tap ok", E1))


def test_text_only_blind_to_position():
    m = model("text")
    assert np.array_equal(encode_pair(m, "tap ok", E1), encode_pair(m, "tap ok", E2))


def test_layout_sees_position():
    m = model("layout")
    assert not np.array_equal(encode_pair(m, "tap ok", E1), encode_pair(m, "tap ok", E2))


TEXT_MODEL = model("text", seed=5)


@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
def test_text_only_invariant_to_any_bbox(a, b, c, d):
    m = TEXT_MODEL
    box = BoundingBox(min(a, b), max(a, b), min(c, d), max(c, d))
    moved = UIElement("a", "ok", box)
    assert np.array_equal(encode_pair(m, "tap ok", E1), encode_pair(m, "tap ok", moved))


def test_empty_command():
    with pytest.raises(EmptyCommand):
        encode_pair(model(), "   ", E1)


def test_representation_shape_and_finite():
    v = encode_pair(model(), "tap ok", E1)
    assert v.shape == (64,) and np.isfinite(v).all()


def test_score_examples():
    m = model()
    m.params["head.W1"][:] = 0.0
    m.params["head.b1"][:] = [1.5, 1.5]
    s = score(m, np.ones(64, np.float32))
    assert s.probability == pytest.approx(0.5) and s.relevance == 0.0
    m.params["head.b1"][:] = [0.2, 1.1]
    p = score(m, np.ones(64, np.float32)).probability
    m.params["head.b1"][:] = [0.2 + 7, 1.1 + 7]
    assert score(m, np.ones(64, np.float32)).probability == pytest.approx(p, abs=1e-6)
    assert p + (1 - p) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DimensionMismatch):
        score(m, np.ones(10))


def test_score_matches_forward():
    m = model()
    rep = encode_pair(m, "tap ok", E2)
    s = score(m, rep)
    direct = encoder.relevance_scores(m, "tap ok", [E2])[0]
    assert s.relevance == pytest.approx(float(direct), abs=1e-5)


def brute_force_ground(m, screen, command):
    """Score every element on its own and take the first maximum."""
    best, best_id = -math.inf, None
    for e in screen.elements:
        b = encode_inputs(m, [command.phrase], [e])
        logits = encoder._forward(m.params, b, m.layout)[0][0]
        s = float(logits[1] - logits[0])
        if s > best:
            best, best_id = s, e.id
    return best_id


def test_ground_single_element():
    s = Screen("s", 1000, 1000, [E1])
    assert ground(model(), s, Command("c", "tap back", "s", "a", Reasoning.EXTRACTIVE)) == "a"


def test_ground_tie_lowest_index():
    m = model("text")
    s = Screen("s", 1000, 1000, [E1, E2])
    assert ground(m, s, Command("c", "tap ok", "s", "b", Reasoning.EXTRACTIVE)) == "a"


def test_ground_empty_screen():
    class Empty:
        id = "x"
        elements = ()

    with pytest.raises(EmptyScreen):
        ground(model(), Empty(), Command("c", "tap ok", "x", "a", Reasoning.EXTRACTIVE))


def test_ground_shift_invariant():
    m = model(seed=3)
    s = Screen("s", 1000, 1000, [E1, E2, UIElement("c", "back", BoundingBox(300, 500, 300, 500))])
    c = Command("c", "tap back", "s", "c", Reasoning.EXTRACTIVE)
    before = ground(m, s, c)
    m.params["head.b1"] += np.float32(3.0)
    assert ground(m, s, c) == before


def test_ground_matches_oracle_random():
    rng = np.random.default_rng(0)
    cfg = GenConfig()
    vocab = Vocab.build(list(cfg.text_lexicon) + ["tap", "the", "left", "of"])
    for i in range(100):
        m = ScorerModel.init(["text", "layout"][i % 2], vocab, seed=i)
        screen = generate_screen(rng, cfg, "s")
        e = screen.elements[int(rng.integers(len(screen)))]
        cmd = Command("c", f"tap the {e.text}", "s", e.id, Reasoning.EXTRACTIVE)
        assert ground(m, screen, cmd) == brute_force_ground(m, screen, cmd)


@pytest.fixture(scope="module")
def tiny():
    corpus = build_corpus(GenConfig(seed=2, screens=200, commands_per_screen=2), (0.5, 0.2, 0.3))
    vocab = encoder.corpus_vocab(corpus)
    return corpus, vocab


def test_initial_loss_near_ln2(tiny):
    corpus, vocab = tiny
    pairs = corpus.pairs_in(Split.TRAIN)
    pos = [p for p in pairs if p.label == 1]
    neg = [p for p in pairs if p.label == 0][: len(pos)]
    for kind in ("text", "layout"):
        m = ScorerModel.init(kind, vocab)
        loss = encoder.mean_loss(m, encoder.pair_batch(m, corpus, pos + neg))
        assert abs(loss - math.log(2)) < 0.05


def test_training_deterministic_and_decreasing(tiny):
    corpus, vocab = tiny
    pairs = corpus.pairs_in(Split.TRAIN)
    runs = []
    for _ in range(2):
        m = ScorerModel.init("layout", vocab, seed=4)
        res = train(m, pairs, TrainConfig(learning_rate=0.2, epochs=4, seed=1), corpus)
        runs.append((res.losses, encoder.checkpoint_json(m)))
    assert runs[0] == runs[1]
    losses = runs[0][0]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_training_epoch_callback(tiny):
    corpus, vocab = tiny
    seen = []
    m = ScorerModel.init("text", vocab)
    train(m, corpus.pairs_in(Split.TRAIN)[:200], TrainConfig(epochs=3), corpus, on_epoch=lambda e, l: seen.append(e))
    assert seen == [1, 2, 3]


def test_divergence_raises(tiny):
    corpus, vocab = tiny
    m = ScorerModel.init("layout", vocab)
    with pytest.raises(NonFiniteLoss):
        train(m, corpus.pairs_in(Split.TRAIN), TrainConfig(learning_rate=1e30, epochs=2), corpus)


def test_empty_training_set(tiny):
    corpus, vocab = tiny
    with pytest.raises(DataError):
        train(ScorerModel.init("text", vocab), [], TrainConfig(), corpus)


def test_lexical_grounding_after_training(small_corpus, small_models):
    m = small_models["text"]
    cmds = [c for c in small_corpus.commands_in(Split.TEST) if c.reasoning is Reasoning.EXTRACTIVE]
    hits = [ground(m, small_corpus.screens[c.screen_id], c) == c.target_id for c in cmds]
    assert np.mean(hits) >= 0.75
    s = Screen("s", 1000, 1000, [UIElement("x", "ok", BoundingBox(0, 10, 0, 10)),
                                 UIElement("y", "cancel", BoundingBox(500, 600, 0, 10))])
    assert ground(m, s, Command("c", "click on the cancel button", "s", "y", Reasoning.EXTRACTIVE)) == "y"


@pytest.mark.parametrize("kind", ["text", "layout"])
def test_grad_check_passes(tiny, kind):
    corpus, vocab = tiny
    m = ScorerModel.init(kind, vocab, seed=7)
    batch = encoder.pair_batch(m, corpus, corpus.pairs[:40])
    assert grad_check(m, batch, epsilon=1e-5, n_samples=150) < 1e-3


def test_grad_check_zero_case(tiny):
    corpus, vocab = tiny
    m = ScorerModel.init("layout", vocab)
    for k in m.params:
        m.params[k][:] = 0.0
    pos = [p for p in corpus.pairs if p.label == 1][:5]
    neg = [p for p in corpus.pairs if p.label == 0][:5]
    batch = encoder.pair_batch(m, corpus, pos + neg)
    _, grads = encoder.loss_and_grads(m.copy(np.float64).params, batch, True)
    assert all(np.abs(g).max() < 1e-12 for g in grads.values())
    assert grad_check(m, batch) < 1e-6


def test_grad_check_detects_sign_flip(tiny):
    corpus, vocab = tiny
    m = ScorerModel.init("layout", vocab, seed=1)
    batch = encoder.pair_batch(m, corpus, corpus.pairs[:30])

    def flipped(params, b, layout):
        loss, g = encoder.loss_and_grads(params, b, layout)
        return loss, {k: -v for k, v in g.items()}

    # the metric saturates at 1 when analytic = -numeric
    assert grad_check(m, batch, grad_fn=flipped) == pytest.approx(1.0, abs=1e-3)


def test_checkpoint_roundtrip(tmp_path, small_models, small_corpus):
    for m in small_models.values():
        p = save_checkpoint(m, tmp_path / f"{m.kind.short}.json")
        back = load_checkpoint(p)
        assert back.kind is m.kind and back.vocab.tokens == m.vocab.tokens
        for k in m.params:
            assert np.array_equal(back.params[k], m.params[k])
        c = small_corpus.commands[0]
        s = small_corpus.screens[c.screen_id]
        assert np.array_equal(encoder.relevance_scores(back, c.phrase, s.elements),
                              encoder.relevance_scores(m, c.phrase, s.elements))
        assert encoder.checkpoint_json(back) == p.read_text()


def test_bad_checkpoint(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(SchemaMismatch):
        load_checkpoint(p)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.json")


def test_export_roundtrip(tmp_path, small_models, small_corpus):
    pairs = small_corpus.pairs_in(Split.TEST)[:300]
    for m in small_models.values():
        path = tmp_path / f"{m.kind.short}.csv"
        assert encoder.export_representations(m, small_corpus, pairs, path) == len(pairs)
        table = import_representations(path)
        direct = encoder.representations(m, encoder.pair_batch(m, small_corpus, pairs)).astype(np.float32)
        assert np.array_equal(table.vectors, direct)
        assert table.element_ids == [p.element_id for p in pairs]


def test_text_export_duplicates_same_text(small_models):
    m = small_models["text"]
    a = encode_pair(m, "tap ok", E1)
    b = encode_pair(m, "tap ok", E2)
    assert np.array_equal(a, b)
