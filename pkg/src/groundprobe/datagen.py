"""Synthetic screens and commands with verified unique referents, pair
construction and group-level splitting.

Screens place elements on distinct cells of a rows x cols lattice. Each box is
centered on its cell with a random size, so interiors never overlap and two
elements share a center coordinate exactly when they share a row or column.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from groundprobe import _io
from groundprobe.errors import (
    DanglingScreenReference,
    DataError,
    EmptyDataset,
    GridCapacityExceeded,
    NoUniqueAbsoluteReferent,
    NoUniquelyNamedElement,
    NoUniqueRelativeReferent,
    SchemaMismatch,
)
from groundprobe.geometry import (
    GRID,
    BoundingBox,
    Command,
    Horizontal,
    Reasoning,
    Screen,
    UIElement,
    Vertical,
    absolute_region,
    dump_commands,
    dump_screens,
    load_commands,
    load_screens,
)
from groundprobe.lexicon import DEFAULT_LEXICON

# RicoSCA train counts: 100,921 / 6,531 / 57,222
DEFAULT_COMMAND_MIX = (100921 / 164674, 6531 / 164674, 57222 / 164674)
MAX_RETRIES = 1000
MAX_NEGATIVES = 20

EXTRACTIVE_TEMPLATES = (
    "click on the {text} button",
    "tap {text}",
    "select the {text} option",
)
REGION_TEMPLATES = (
    "click the element at the {v} {h}",
    "tap the item in the {v} {h} corner",
    "select the {v} {h} entry",
)
SUPERLATIVE_TEMPLATES = (
    "click the {sup} element",
    "tap the {sup} item",
    "select the {sup} entry",
)
RELATIVE_TEMPLATES = (
    "click the element {rel} {anchor}",
    "tap the item {rel} {anchor}",
    "select the entry {rel} {anchor}",
)
RELATION_WORDS = {
    "left": "to the left of",
    "right": "to the right of",
    "above": "above",
    "below": "below",
}
SUPERLATIVES = ("topmost", "bottommost", "leftmost", "rightmost")


def template_vocabulary() -> set[str]:
    words = set()
    templates = EXTRACTIVE_TEMPLATES + REGION_TEMPLATES + SUPERLATIVE_TEMPLATES + RELATIVE_TEMPLATES
    for t in templates:
        words.update(w for w in t.split() if not w.startswith("{"))
    for phrase in RELATION_WORDS.values():
        words.update(phrase.split())
    words.update(SUPERLATIVES)
    words.update(["top", "bottom", "left", "right"])
    return words


class Split(str, enum.Enum):
    TRAIN = "Train"
    DEV = "Dev"
    TEST = "Test"


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    screens: int = 10000
    commands_per_screen: int = 3
    elements_per_screen: tuple[int, int] = (4, 12)
    grid: tuple[int, int] = (6, 4)
    text_lexicon: tuple[str, ...] = DEFAULT_LEXICON
    command_mix: tuple[float, float, float] = DEFAULT_COMMAND_MIX

    def __post_init__(self):
        object.__setattr__(self, "elements_per_screen", tuple(self.elements_per_screen))
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "text_lexicon", tuple(self.text_lexicon))
        object.__setattr__(self, "command_mix", tuple(float(p) for p in self.command_mix))
        lo, hi = self.elements_per_screen
        rows, cols = self.grid
        if len(self.command_mix) != 3 or any(p < 0 for p in self.command_mix):
            raise DataError(f"command_mix must be 3 nonnegative proportions: {self.command_mix}")
        if abs(sum(self.command_mix) - 1.0) > 1e-9:
            raise DataError(f"command_mix sums to {sum(self.command_mix)}, not 1")
        if not 1 <= lo <= hi:
            raise DataError(f"bad elements_per_screen range {self.elements_per_screen}")
        if rows < 1 or cols < 1:
            raise DataError(f"bad grid {self.grid}")
        if hi > rows * cols:
            raise GridCapacityExceeded(f"{hi} elements do not fit a {rows}x{cols} grid")
        if not self.text_lexicon:
            raise DataError("empty text lexicon")
        if self.screens < 0 or self.commands_per_screen < 1:
            raise DataError("screens must be >= 0 and commands_per_screen >= 1")

    @property
    def reasoning_mix(self) -> dict[Reasoning, float]:
        return dict(zip(Reasoning, self.command_mix))


@dataclass(frozen=True)
class PairInstance:
    command_id: str
    element_id: str
    label: int
    split: Split | None = None


# ---------------------------------------------------------------------------
# screens


def screen_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_screen(rng: np.random.Generator, cfg: GenConfig, screen_id: str = "s0") -> Screen:
    rows, cols = cfg.grid
    lo, hi = cfg.elements_per_screen
    if hi > rows * cols:
        raise GridCapacityExceeded(f"{hi} elements do not fit a {rows}x{cols} grid")
    n = int(rng.integers(lo, hi + 1))
    cells = rng.choice(rows * cols, size=n, replace=False)
    words = rng.choice(len(cfg.text_lexicon), size=n)
    cell_w, cell_h = GRID / cols, GRID / rows
    elements = []
    for i, (cell, w) in enumerate(zip(cells, words)):
        r, c = divmod(int(cell), cols)
        cx = int((c + 0.5) * cell_w)
        cy = int((r + 0.5) * cell_h)
        # half-extents keep the box strictly inside its cell
        hw = int(rng.integers(int(0.2 * cell_w), int(0.45 * cell_w) + 1))
        hh = int(rng.integers(int(0.2 * cell_h), int(0.45 * cell_h) + 1))
        bbox = BoundingBox(cx - hw, cx + hw, cy - hh, cy + hh)
        elements.append(UIElement(f"{screen_id}-e{i}", cfg.text_lexicon[int(w)], bbox))
    return Screen(screen_id, GRID, GRID, tuple(elements))


# ---------------------------------------------------------------------------
# commands


def unique_text_elements(screen: Screen) -> list[UIElement]:
    counts = Counter(e.text for e in screen.elements)
    return [e for e in screen.elements if e.text and counts[e.text] == 1]


def gen_extractive(screen: Screen, rng: np.random.Generator, command_id: str = "c0") -> Command:
    candidates = unique_text_elements(screen)
    if not candidates:
        raise NoUniquelyNamedElement(f"screen {screen.id}: every text is repeated")
    target = candidates[int(rng.integers(len(candidates)))]
    template = EXTRACTIVE_TEMPLATES[int(rng.integers(len(EXTRACTIVE_TEMPLATES)))]
    return Command(
        command_id, template.format(text=target.text), screen.id, target.id, Reasoning.EXTRACTIVE
    )


def _centers2(e: UIElement) -> tuple[int, int]:
    # doubled centers: exact, integer, same ordering as true centers
    return e.bbox.x0 + e.bbox.x1, e.bbox.y0 + e.bbox.y1


def absolute_descriptions(screen: Screen) -> list[tuple[str, tuple, UIElement]]:
    """All absolute descriptions with exactly one satisfier on the screen."""
    out = []
    regions = defaultdict(list)
    for e in screen.elements:
        regions[absolute_region(e.bbox)].append(e)
    for h in Horizontal:
        for v in Vertical:
            members = regions.get((h, v), [])
            if len(members) == 1:
                out.append(("region", (v.value.lower(), h.value.lower()), members[0]))
    keyed = {
        "topmost": lambda e: _centers2(e)[1],
        "bottommost": lambda e: -_centers2(e)[1],
        "leftmost": lambda e: _centers2(e)[0],
        "rightmost": lambda e: -_centers2(e)[0],
    }
    for sup in SUPERLATIVES:
        ranked = sorted(screen.elements, key=keyed[sup])
        if len(ranked) == 1 or keyed[sup](ranked[0]) < keyed[sup](ranked[1]):
            out.append(("superlative", (sup,), ranked[0]))
    return out


def gen_absolute(screen: Screen, rng: np.random.Generator, command_id: str = "c0") -> Command:
    options = absolute_descriptions(screen)
    if not options:
        raise NoUniqueAbsoluteReferent(f"screen {screen.id}: no unique absolute description")
    kind, args, target = options[int(rng.integers(len(options)))]
    if kind == "region":
        template = REGION_TEMPLATES[int(rng.integers(len(REGION_TEMPLATES)))]
        phrase = template.format(v=args[0], h=args[1])
    else:
        template = SUPERLATIVE_TEMPLATES[int(rng.integers(len(SUPERLATIVE_TEMPLATES)))]
        phrase = template.format(sup=args[0])
    return Command(command_id, phrase, screen.id, target.id, Reasoning.ABSOLUTE)


def nearest_in_direction(screen: Screen, anchor: UIElement, direction: str) -> list[UIElement]:
    """Elements tied for nearest to ``anchor`` in ``direction``.

    A candidate must lie strictly on that side (by center) and its center must
    fall within the anchor's extent on the other axis.
    """
    ax, ay = _centers2(anchor)
    b = anchor.bbox
    best, dist = [], None
    for e in screen.elements:
        if e.id == anchor.id:
            continue
        ex, ey = _centers2(e)
        if direction in ("left", "right"):
            if not 2 * b.y0 <= ey <= 2 * b.y1:
                continue
            d = ax - ex if direction == "left" else ex - ax
        else:
            if not 2 * b.x0 <= ex <= 2 * b.x1:
                continue
            d = ay - ey if direction == "above" else ey - ay
        if d <= 0:
            continue
        if dist is None or d < dist:
            best, dist = [e], d
        elif d == dist:
            best.append(e)
    return best


def relative_descriptions(screen: Screen) -> list[tuple[UIElement, str, UIElement]]:
    out = []
    for anchor in unique_text_elements(screen):
        for direction in RELATION_WORDS:
            nearest = nearest_in_direction(screen, anchor, direction)
            if len(nearest) == 1 and nearest[0].text != anchor.text:
                out.append((anchor, direction, nearest[0]))
    return out


def gen_relative(screen: Screen, rng: np.random.Generator, command_id: str = "c0") -> Command:
    options = relative_descriptions(screen)
    if not options:
        raise NoUniqueRelativeReferent(f"screen {screen.id}: no unique relative description")
    anchor, direction, target = options[int(rng.integers(len(options)))]
    template = RELATIVE_TEMPLATES[int(rng.integers(len(RELATIVE_TEMPLATES)))]
    phrase = template.format(rel=RELATION_WORDS[direction], anchor=anchor.text)
    return Command(
        command_id, phrase, screen.id, target.id, Reasoning.RELATIVE, anchor_id=anchor.id
    )


GENERATORS = {
    Reasoning.EXTRACTIVE: gen_extractive,
    Reasoning.ABSOLUTE: gen_absolute,
    Reasoning.RELATIVE: gen_relative,
}


def allocate(total: int, ratios: Sequence[float]) -> list[int]:
    """Integer counts summing to ``total``, by largest remainder."""
    raw = [total * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def generate_corpus(cfg: GenConfig) -> tuple[list[Screen], list[Command]]:
    """Screens and commands whose reasoning mix matches ``cfg.command_mix``.

    Screen ``i`` draws from its own stream seeded by ``(seed, i)``; a screen
    that cannot host its assigned command types is redrawn from that stream.
    """
    total = cfg.screens * cfg.commands_per_screen
    counts = allocate(total, cfg.command_mix)
    kinds = np.array([k for k, n in zip(Reasoning, counts) for _ in range(n)], dtype=object)
    np.random.default_rng(cfg.seed).shuffle(kinds)

    screens, commands = [], []
    k = cfg.commands_per_screen
    for i in range(cfg.screens):
        rng = screen_rng(cfg.seed, i)
        slots = kinds[i * k : (i + 1) * k]
        for _ in range(MAX_RETRIES):
            screen = generate_screen(rng, cfg, f"s{i:05d}")
            made = _commands_for(screen, slots, rng, f"c{i:05d}")
            if made is not None:
                break
        else:
            raise DataError(f"screen {i}: no layout supports {list(slots)} in {MAX_RETRIES} draws")
        screens.append(screen)
        commands.extend(made)
    return screens, commands


def _commands_for(screen, slots, rng, prefix) -> list[Command] | None:
    made, seen = [], set()
    for j, kind in enumerate(slots):
        for _ in range(10):
            try:
                cmd = GENERATORS[kind](screen, rng, f"{prefix}-{j}")
            except (NoUniquelyNamedElement, NoUniqueAbsoluteReferent, NoUniqueRelativeReferent):
                return None
            if (cmd.phrase, cmd.target_id) not in seen:
                break
        else:
            return None
        seen.add((cmd.phrase, cmd.target_id))
        made.append(cmd)
    return made


# ---------------------------------------------------------------------------
# pairs and splits


def make_pairs(
    screens: Iterable[Screen],
    commands: Iterable[Command],
    max_negatives: int = MAX_NEGATIVES,
    seed: int = 0,
) -> list[PairInstance]:
    by_id = {s.id: s for s in screens}
    rng = np.random.default_rng(seed)
    pairs = []
    for cmd in commands:
        screen = by_id.get(cmd.screen_id)
        if screen is None:
            raise DanglingScreenReference(f"command {cmd.id} refers to missing screen {cmd.screen_id}")
        cmd.validate_against(screen)
        others = [i for i, e in enumerate(screen.elements) if e.id != cmd.target_id]
        if len(others) > max_negatives:
            others = sorted(rng.choice(others, size=max_negatives, replace=False).tolist())
        keep = set(others) | {screen.position(cmd.target_id)}
        for i, e in enumerate(screen.elements):
            if i in keep:
                pairs.append(PairInstance(cmd.id, e.id, int(e.id == cmd.target_id)))
    return pairs


def split_dataset(
    pairs: Sequence[PairInstance], ratios: Sequence[float], seed: int
) -> list[PairInstance]:
    """Assign Train/Dev/Test per command group; counts follow ``ratios``."""
    if not pairs:
        raise EmptyDataset("no pairs to split")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise DataError(f"split ratios must be 3 nonnegative values summing to 1: {ratios}")
    groups = sorted({p.command_id for p in pairs})
    order = np.random.default_rng(seed).permutation(len(groups))
    n_train, n_dev, _ = allocate(len(groups), ratios)
    assignment = {}
    for rank, gi in enumerate(order):
        if rank < n_train:
            split = Split.TRAIN
        elif rank < n_train + n_dev:
            split = Split.DEV
        else:
            split = Split.TEST
        assignment[groups[gi]] = split
    return [replace(p, split=assignment[p.command_id]) for p in pairs]


# ---------------------------------------------------------------------------
# corpus files

SCREENS_FILE = "screens.jsonl"
COMMANDS_FILE = "commands.jsonl"
PAIRS_FILE = "pairs.csv"
PAIR_COLUMNS = ("command_id", "element_id", "label", "split")


@dataclass
class Corpus:
    screens: dict[str, Screen]
    commands: list[Command]
    pairs: list[PairInstance] = field(default_factory=list)

    def command(self, command_id: str) -> Command:
        return self._commands[command_id]

    def __post_init__(self):
        self._commands = {c.id: c for c in self.commands}

    def split_of(self) -> dict[str, Split]:
        return {p.command_id: p.split for p in self.pairs}

    def commands_in(self, split: Split | str | None) -> list[Command]:
        if split is None:
            return list(self.commands)
        split = Split(split)
        splits = self.split_of()
        return [c for c in self.commands if splits.get(c.id) is split]

    def pairs_in(self, split: Split | str | None) -> list[PairInstance]:
        if split is None:
            return list(self.pairs)
        split = Split(split)
        return [p for p in self.pairs if p.split is split]


def pairs_csv(pairs: Iterable[PairInstance]) -> str:
    return _io.csv_text(
        PAIR_COLUMNS,
        ((p.command_id, p.element_id, p.label, p.split.value if p.split else "") for p in pairs),
    )


def load_pairs(path: str | Path) -> list[PairInstance]:
    rows = _io.read_csv(path)
    out = []
    for row in rows:
        try:
            out.append(
                PairInstance(
                    row["command_id"],
                    row["element_id"],
                    int(row["label"]),
                    Split(row["split"]) if row["split"] else None,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaMismatch(f"{path}: bad pair row {row!r}: {exc}") from exc
    return out


def write_corpus(directory: str | Path, corpus: Corpus) -> None:
    d = Path(directory)
    _io.atomic_write(d / SCREENS_FILE, dump_screens(corpus.screens.values()))
    _io.atomic_write(d / COMMANDS_FILE, dump_commands(corpus.commands))
    _io.atomic_write(d / PAIRS_FILE, pairs_csv(corpus.pairs))


def load_corpus(
    directory: str | Path, commands_file: str = COMMANDS_FILE, pairs_file: str = PAIRS_FILE
) -> Corpus:
    d = Path(directory)
    for name in (SCREENS_FILE, commands_file, pairs_file):
        if not (d / name).exists():
            raise DataError(f"missing corpus file {d / name}")
    screens = {s.id: s for s in load_screens(d / SCREENS_FILE)}
    commands = load_commands(d / commands_file)
    for c in commands:
        if c.screen_id not in screens:
            raise DanglingScreenReference(f"command {c.id} refers to missing screen {c.screen_id}")
        c.validate_against(screens[c.screen_id])
    pairs = load_pairs(d / pairs_file)
    known = {c.id for c in commands}
    pairs = [p for p in pairs if p.command_id in known]
    return Corpus(screens, commands, pairs)


def build_corpus(cfg: GenConfig, ratios: Sequence[float], split_seed: int | None = None) -> Corpus:
    screens, commands = generate_corpus(cfg)
    pairs = make_pairs(screens, commands, seed=cfg.seed)
    pairs = split_dataset(pairs, ratios, cfg.seed if split_seed is None else split_seed)
    return Corpus({s.id: s for s in screens}, commands, pairs)


def reasoning_counts(commands: Iterable[Command]) -> dict[Reasoning, int]:
    counts = Counter(c.reasoning for c in commands)
    return {r: counts.get(r, 0) for r in Reasoning}
