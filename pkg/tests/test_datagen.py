import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import rects_overlap, satisfiers

from groundprobe.datagen import (
    DEFAULT_LEXICON,
    DEFAULT_COMMAND_MIX,
    Corpus,
    GenConfig,
    PairInstance,
    Split,
    allocate,
    build_corpus,
    gen_absolute,
    gen_extractive,
    gen_relative,
    generate_corpus,
    generate_screen,
    load_corpus,
    make_pairs,
    reasoning_counts,
    split_dataset,
    template_vocabulary,
    write_corpus,
)
from groundprobe.errors import (
    DanglingScreenReference,
    DataError,
    EmptyDataset,
    GridCapacityExceeded,
    NoUniqueAbsoluteReferent,
    NoUniquelyNamedElement,
    NoUniqueRelativeReferent,
)
from groundprobe.geometry import BoundingBox, Command, Reasoning, Screen, UIElement


def rng(seed=0):
    return np.random.default_rng(seed)


def el(i, text, cx, cy, r=40):
    return UIElement(f"e{i}", text, BoundingBox(cx - r, cx + r, cy - r, cy + r))


def test_config_defaults():
    cfg = GenConfig()
    assert cfg.elements_per_screen == (4, 12) and cfg.grid == (6, 4)
    assert len(cfg.text_lexicon) >= 200 and "cancel" in cfg.text_lexicon
    a, b, c = DEFAULT_COMMAND_MIX
    assert a == pytest.approx(100921 / 164674) and b == pytest.approx(6531 / 164674)
    assert sum(DEFAULT_COMMAND_MIX) == pytest.approx(1.0, abs=1e-9)


def test_lexicon_disjoint_from_templates():
    assert len(set(DEFAULT_LEXICON)) == len(DEFAULT_LEXICON)
    assert not set(DEFAULT_LEXICON) & template_vocabulary()


def test_config_validation():
    with pytest.raises(GridCapacityExceeded):
        GenConfig(elements_per_screen=(4, 25))
    with pytest.raises(DataError):
        GenConfig(command_mix=(0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        GenConfig(elements_per_screen=(0, 3))


def test_generate_screen_seed7_disjoint():
    s = generate_screen(rng(7), GenConfig())
    assert 4 <= len(s) <= 12
    for a, b in itertools.combinations(s.elements, 2):
        assert not rects_overlap(a.bbox, b.bbox)


@given(st.integers(0, 2**32 - 1))
def test_generated_interiors_disjoint(seed):
    s = generate_screen(rng(seed), GenConfig())
    for a, b in itertools.combinations(s.elements, 2):
        assert not rects_overlap(a.bbox, b.bbox)


def test_single_element_screen():
    s = generate_screen(rng(1), GenConfig(elements_per_screen=(1, 1)))
    assert len(s) == 1


def test_screen_determinism():
    a = generate_screen(rng(11), GenConfig())
    b = generate_screen(rng(11), GenConfig())
    assert a == b and a.elements == b.elements


def test_extractive_cancel():
    s = Screen("s", 1000, 1000, [el(0, "cancel", 100, 100), el(1, "ok", 600, 100)])
    for seed in range(30):
        c = gen_extractive(s, rng(seed))
        if c.target_id == "e0" and c.phrase.startswith("click"):
            assert c.phrase == "click on the cancel button"
            break
    else:
        pytest.fail("template never drawn")
    assert c.reasoning is Reasoning.EXTRACTIVE and c.anchor_id is None


def test_extractive_requires_unique_text():
    s = Screen("s", 1000, 1000, [el(0, "ok", 100, 100), el(1, "ok", 600, 100)])
    with pytest.raises(NoUniquelyNamedElement):
        gen_extractive(s, rng())


def test_extractive_string_containment():
    cfg = GenConfig()
    r = rng(5)
    made = 0
    while made < 100:
        s = generate_screen(r, cfg)
        try:
            c = gen_extractive(s, r)
        except NoUniquelyNamedElement:
            continue
        made += 1
        words = set(c.phrase.split())
        mentioned = [e for e in s.elements if e.text in words]
        assert [e.id for e in mentioned] == [c.target_id]


def test_absolute_single_top_left():
    s = Screen("s", 1000, 1000, [el(0, "a", 100, 100), el(1, "b", 700, 100), el(2, "c", 800, 150),
                                 el(3, "d", 100, 700), el(4, "e", 200, 800), el(5, "f", 700, 700),
                                 el(6, "g", 800, 800)])
    seen = set()
    for seed in range(200):
        c = gen_absolute(s, rng(seed))
        assert [e.id for e in satisfiers(c, s)] == [c.target_id]
        seen.add((c.phrase, c.target_id))
    assert ("click the element at the top left", "e0") in seen


def test_absolute_no_unique_referent():
    # three per quadrant, and every extreme coordinate tied
    pts = [(100, 100), (400, 100), (600, 100), (900, 100), (100, 900), (400, 900), (600, 900), (900, 900),
           (100, 400), (100, 600), (900, 400), (900, 600)]
    s = Screen("s", 1000, 1000, [el(i, str(i), x, y) for i, (x, y) in enumerate(pts)])
    with pytest.raises(NoUniqueAbsoluteReferent):
        gen_absolute(s, rng())


def test_relative_single_left_neighbor():
    s = Screen("s", 1000, 1000, [el(0, "settings", 600, 500), el(1, "wifi", 300, 500), el(2, "back", 600, 900)])
    phrases = set()
    for seed in range(100):
        c = gen_relative(s, rng(seed))
        assert c.anchor_id != c.target_id
        assert [e.id for e in satisfiers(c, s)] == [c.target_id]
        phrases.add((c.phrase, c.target_id))
    assert ("click the element to the left of settings", "e1") in phrases


def test_relative_rejects_same_text_target():
    # the only neighbors share the anchor's text, so nothing qualifies
    s = Screen("s", 1000, 1000, [el(0, "ok", 300, 500), el(1, "ok", 600, 500)])
    with pytest.raises(NoUniqueRelativeReferent):
        gen_relative(s, rng())


def test_relative_requires_unique_nearest():
    s = Screen("s", 1000, 1000, [el(0, "a", 100, 100, r=10), el(1, "b", 900, 900, r=10)])
    with pytest.raises(NoUniqueRelativeReferent):
        gen_relative(s, rng())


@pytest.fixture(scope="module")
def corpus():
    return build_corpus(GenConfig(seed=9, screens=600, commands_per_screen=3), (0.5, 0.2, 0.3))


def test_every_command_has_unique_referent(corpus):
    for c in corpus.commands:
        s = corpus.screens[c.screen_id]
        assert [e.id for e in satisfiers(c, s)] == [c.target_id], c.phrase


def test_command_mix_matches_config(corpus):
    counts = reasoning_counts(corpus.commands)
    n = len(corpus.commands)
    for r, p in zip(Reasoning, DEFAULT_COMMAND_MIX):
        assert abs(counts[r] / n - p) <= 0.02


def test_anchor_presence(corpus):
    for c in corpus.commands:
        assert (c.anchor_id is not None) == (c.reasoning is Reasoning.RELATIVE)
        if c.anchor_id:
            assert c.anchor_id != c.target_id


def test_corpus_determinism():
    cfg = GenConfig(seed=4, screens=50)
    a, b = generate_corpus(cfg), generate_corpus(cfg)
    assert a == b


def test_allocate():
    assert allocate(1000, (0.3, 0.2, 0.5)) == [300, 200, 500]
    assert sum(allocate(7, (1 / 3, 1 / 3, 1 / 3))) == 7


def test_make_pairs_counts():
    s = Screen("s", 1000, 1000, [el(i, str(i), 100 + 150 * i, 100) for i in range(5)])
    c = Command("c", "tap 2", "s", "e2", Reasoning.EXTRACTIVE)
    pairs = make_pairs([s], [c])
    assert len(pairs) == 5 and sum(p.label for p in pairs) == 1


def test_make_pairs_cap():
    els = [UIElement(f"e{i}", f"t{i}", BoundingBox(i * 30, i * 30 + 20, 0, 20)) for i in range(30)]
    s = Screen("s", 1000, 1000, els)
    c = Command("c", "tap t7", "s", "e7", Reasoning.EXTRACTIVE)
    pairs = make_pairs([s], [c])
    assert len(pairs) == 21 and sum(p.label for p in pairs) == 1
    assert any(p.element_id == "e7" and p.label == 1 for p in pairs)


def test_make_pairs_dangling():
    c = Command("c", "tap x", "missing", "e0", Reasoning.EXTRACTIVE)
    with pytest.raises(DanglingScreenReference):
        make_pairs([], [c])


def test_one_positive_per_group(corpus):
    pos = Counter(p.command_id for p in corpus.pairs if p.label == 1)
    assert set(pos.values()) == {1} and len(pos) == len(corpus.commands)


def _groups(n):
    return [PairInstance(f"c{i:04d}", "e", 1) for i in range(n)]


def test_split_30_20_50():
    out = split_dataset(_groups(1000), (0.3, 0.2, 0.5), seed=0)
    counts = Counter(p.split for p in out)
    assert counts == {Split.TRAIN: 300, Split.DEV: 200, Split.TEST: 500}


def test_split_boundary_and_determinism():
    assert {p.split for p in split_dataset(_groups(50), (1, 0, 0), 3)} == {Split.TRAIN}
    assert split_dataset(_groups(50), (0.3, 0.2, 0.5), 3) == split_dataset(_groups(50), (0.3, 0.2, 0.5), 3)
    with pytest.raises(EmptyDataset):
        split_dataset([], (0.3, 0.2, 0.5), 0)


def test_splits_partition_groups(corpus):
    by_cmd = {}
    for p in corpus.pairs:
        assert by_cmd.setdefault(p.command_id, p.split) is p.split
    assert set(by_cmd) == {c.id for c in corpus.commands}


def test_corpus_files_roundtrip(tmp_path, corpus):
    write_corpus(tmp_path, corpus)
    back = load_corpus(tmp_path)
    assert back.commands == corpus.commands and back.pairs == corpus.pairs
    assert back.screens == corpus.screens
    first = (tmp_path / "screens.jsonl").read_bytes()
    write_corpus(tmp_path, back)
    assert (tmp_path / "screens.jsonl").read_bytes() == first


def test_load_corpus_missing(tmp_path):
    with pytest.raises(DataError):
        load_corpus(tmp_path)


def test_corpus_accessors(corpus):
    test_cmds = corpus.commands_in(Split.TEST)
    assert test_cmds and all(corpus.split_of()[c.id] is Split.TEST for c in test_cmds)
    assert isinstance(corpus, Corpus) and len(corpus.commands_in(None)) == len(corpus.commands)
