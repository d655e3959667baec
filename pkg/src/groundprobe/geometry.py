"""Screens, elements, commands and the coordinate conventions shared by every
other module.

Boxes live on an integer [0, 1000] grid, stored as ``(x0, x1, y0, y1)``.
x grows rightward and y grows downward, as on a phone screen.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from groundprobe.errors import (
    CoordinateOutOfRange,
    DataError,
    NonPositiveScreenDims,
    SchemaMismatch,
)

GRID = 1000
MIDLINE = GRID // 2


class Reasoning(str, enum.Enum):
    EXTRACTIVE = "Extractive"
    ABSOLUTE = "AbsoluteSpatial"
    RELATIVE = "RelativeSpatial"


class Horizontal(str, enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"


class Vertical(str, enum.Enum):
    TOP = "Top"
    BOTTOM = "Bottom"


class VerticalRelation(str, enum.Enum):
    ABOVE = "Above"
    BELOW = "Below"


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    x1: int
    y0: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "x1", "y0", "y1"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise DataError(f"bbox {name} must be an int, got {v!r}")
        if not (0 <= self.x0 <= self.x1 <= GRID and 0 <= self.y0 <= self.y1 <= GRID):
            raise CoordinateOutOfRange(f"invalid normalized box {self.as_list()}")

    @property
    def degenerate(self) -> bool:
        """True for zero-width or zero-height boxes (still valid)."""
        return self.x0 == self.x1 or self.y0 == self.y1

    def as_list(self) -> list[int]:
        return [self.x0, self.x1, self.y0, self.y1]

    def reflect_x(self) -> BoundingBox:
        return BoundingBox(GRID - self.x1, GRID - self.x0, self.y0, self.y1)

    def reflect_y(self) -> BoundingBox:
        return BoundingBox(self.x0, self.x1, GRID - self.y1, GRID - self.y0)


@dataclass(frozen=True)
class UIElement:
    id: str
    text: str
    bbox: BoundingBox


@dataclass(frozen=True)
class Screen:
    id: str
    source_width: int
    source_height: int
    elements: tuple[UIElement, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.source_width <= 0 or self.source_height <= 0:
            raise NonPositiveScreenDims(
                f"screen {self.id}: dims {self.source_width}x{self.source_height}"
            )
        if not self.elements:
            raise DataError(f"screen {self.id} has no elements")
        index = {}
        for i, el in enumerate(self.elements):
            if el.id in index:
                raise DataError(f"screen {self.id}: duplicate element id {el.id!r}")
            index[el.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, element_id: str) -> bool:
        return element_id in self._index

    def element(self, element_id: str) -> UIElement:
        try:
            return self.elements[self._index[element_id]]
        except KeyError:
            raise DataError(f"element {element_id!r} not on screen {self.id}") from None

    def position(self, element_id: str) -> int:
        return self._index[element_id]

    def reflect_x(self) -> Screen:
        return Screen(
            self.id,
            self.source_width,
            self.source_height,
            tuple(UIElement(e.id, e.text, e.bbox.reflect_x()) for e in self.elements),
        )


@dataclass(frozen=True)
class Command:
    id: str
    phrase: str
    screen_id: str
    target_id: str
    reasoning: Reasoning
    anchor_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "reasoning", Reasoning(self.reasoning))
        has_anchor = self.anchor_id is not None
        if has_anchor != (self.reasoning is Reasoning.RELATIVE):
            raise DataError(
                f"command {self.id}: anchor must be present iff reasoning is relative"
            )
        if has_anchor and self.anchor_id == self.target_id:
            raise DataError(f"command {self.id}: anchor equals target")

    def validate_against(self, screen: Screen) -> None:
        if screen.id != self.screen_id:
            raise DataError(f"command {self.id} refers to screen {self.screen_id}")
        screen.element(self.target_id)
        if self.anchor_id is not None:
            screen.element(self.anchor_id)

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "phrase": self.phrase,
            "screen_id": self.screen_id,
            "target_id": self.target_id,
            "reasoning": self.reasoning.value,
        }
        if self.anchor_id is not None:
            out["anchor_id"] = self.anchor_id
        return out

    @classmethod
    def from_dict(cls, d: dict) -> Command:
        try:
            return cls(
                id=str(d["id"]),
                phrase=str(d["phrase"]),
                screen_id=str(d["screen_id"]),
                target_id=str(d["target_id"]),
                reasoning=Reasoning(d["reasoning"]),
                anchor_id=d.get("anchor_id"),
            )
        except (KeyError, ValueError) as exc:
            raise SchemaMismatch(f"bad command record {d!r}: {exc}") from exc


def normalize_bbox(raw: Sequence[float], screen_dims: tuple[int, int]) -> BoundingBox:
    """Map a pixel rectangle ``(x0, x1, y0, y1)`` onto the 0..1000 grid."""
    width, height = screen_dims
    if width <= 0 or height <= 0:
        raise NonPositiveScreenDims(f"screen dims {width}x{height}")
    x0, x1, y0, y1 = raw
    if not (0 <= x0 <= x1 <= width and 0 <= y0 <= y1 <= height):
        raise CoordinateOutOfRange(f"box {list(raw)} outside {width}x{height}")

    def scale(v, dim):
        return min(GRID, max(0, round(v / dim * GRID)))

    return BoundingBox(scale(x0, width), scale(x1, width), scale(y0, height), scale(y1, height))


def bbox_center(b: BoundingBox) -> tuple[int, int]:
    return (b.x0 + b.x1) // 2, (b.y0 + b.y1) // 2


def absolute_region(b: BoundingBox) -> tuple[Horizontal, Vertical]:
    # exact midline goes Right / Bottom
    cx, cy = bbox_center(b)
    horizontal = Horizontal.LEFT if cx < MIDLINE else Horizontal.RIGHT
    vertical = Vertical.TOP if cy < MIDLINE else Vertical.BOTTOM
    return horizontal, vertical


def on_midline(b: BoundingBox) -> tuple[bool, bool]:
    """Whether the box center sits exactly on the vertical / horizontal midline."""
    return b.x0 + b.x1 == GRID, b.y0 + b.y1 == GRID


def relative_position(
    probe: BoundingBox, target: BoundingBox
) -> tuple[Horizontal | None, VerticalRelation | None]:
    """Direction of ``probe`` as seen from ``target``, judged by box centers.

    Centers are compared at full precision (coordinate sums), so the result is
    exactly antisymmetric under reflection of the screen.
    """
    px, tx = probe.x0 + probe.x1, target.x0 + target.x1
    py, ty = probe.y0 + probe.y1, target.y0 + target.y1
    horizontal = None if px == tx else (Horizontal.LEFT if px < tx else Horizontal.RIGHT)
    vertical = None if py == ty else (
        VerticalRelation.ABOVE if py < ty else VerticalRelation.BELOW
    )
    return horizontal, vertical


# ---------------------------------------------------------------------------
# screen files


def screen_from_dict(d: dict) -> Screen:
    """Build a screen from the file schema; bboxes are in source pixels."""
    try:
        width, height = int(d["width"]), int(d["height"])
        if width <= 0 or height <= 0:
            raise NonPositiveScreenDims(f"screen {d.get('id')}: dims {width}x{height}")
        elements = []
        for e in d["elements"]:
            bbox = e["bbox"]
            if len(bbox) != 4:
                raise SchemaMismatch(f"bbox must have 4 values, got {bbox!r}")
            elements.append(
                UIElement(str(e["id"]), str(e.get("text") or ""), normalize_bbox(bbox, (width, height)))
            )
        return Screen(str(d["id"]), width, height, tuple(elements))
    except (KeyError, TypeError) as exc:
        raise SchemaMismatch(f"bad screen record: {exc!r}") from exc


def screen_to_dict(screen: Screen) -> dict:
    """Serialize in normalized coordinates on a 1000x1000 canvas.

    Reloading is lossless because normalization is idempotent at that size.
    """
    return {
        "id": screen.id,
        "width": GRID,
        "height": GRID,
        "elements": [
            {"id": e.id, "text": e.text, "bbox": e.bbox.as_list()} for e in screen.elements
        ],
    }


def _iter_json_docs(path: Path) -> Iterator[dict]:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if not stripped:
        return
    if stripped[0] == "[":
        yield from json.loads(stripped)
        return
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        yield doc
        return
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaMismatch(f"{path}:{lineno}: {exc}") from exc


def load_screens(path: str | Path) -> list[Screen]:
    """Read screens from a JSON-lines file, a JSON array or a single document."""
    path = Path(path)
    try:
        return [screen_from_dict(d) for d in _iter_json_docs(path)]
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc


def dump_screens(screens: Iterable[Screen]) -> str:
    return "".join(json.dumps(screen_to_dict(s), sort_keys=True) + "\n" for s in screens)


def load_commands(path: str | Path) -> list[Command]:
    path = Path(path)
    try:
        return [Command.from_dict(d) for d in _iter_json_docs(path)]
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc


def dump_commands(commands: Iterable[Command]) -> str:
    return "".join(json.dumps(c.to_dict(), sort_keys=True) + "\n" for c in commands)
