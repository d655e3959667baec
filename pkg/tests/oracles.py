"""Independent brute-force re-evaluation of generated command phrases.

Nothing here calls the generator's own geometry helpers; centers are
recomputed as floats and every element is checked against the phrase.
"""

import re

REGION = re.compile(r"^(?:click the element at the|tap the item in the|select the) (top|bottom) (left|right)(?: corner| entry)?$")
SUPER = re.compile(r"^(?:click|tap|select) the (topmost|bottommost|leftmost|rightmost) (?:element|item|entry)$")
RELATIVE = re.compile(r"^(?:click the element|tap the item|select the entry) (to the left of|to the right of|above|below) (.+)$")
EXTRACTIVE = re.compile(r"^(?:click on the (.+) button|tap (.+)|select the (.+) option)$")


def center(e):
    b = e.bbox
    return (b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2


def satisfiers(command, screen):
    """Every element that fits the command's description."""
    els = list(screen.elements)
    m = RELATIVE.match(command.phrase)
    if m:
        rel, anchor_text = m.groups()
        anchors = [e for e in els if e.text == anchor_text]
        if len(anchors) != 1:
            return []
        a = anchors[0]
        ax, ay = center(a)
        cands = []
        for e in els:
            if e is a:
                continue
            ex, ey = center(e)
            if rel in ("to the left of", "to the right of"):
                if not a.bbox.y0 <= ey <= a.bbox.y1:
                    continue
                d = ax - ex if rel == "to the left of" else ex - ax
            else:
                if not a.bbox.x0 <= ex <= a.bbox.x1:
                    continue
                d = ay - ey if rel == "above" else ey - ay
            if d > 0:
                cands.append((d, e))
        if not cands:
            return []
        best = min(d for d, _ in cands)
        return [e for d, e in cands if d == best]
    m = REGION.match(command.phrase)
    if m:
        v, h = m.groups()
        out = []
        for e in els:
            cx, cy = center(e)
            ev = "top" if cy < 500 else "bottom"
            eh = "left" if cx < 500 else "right"
            if (ev, eh) == (v, h):
                out.append(e)
        return out
    m = SUPER.match(command.phrase)
    if m:
        key = {
            "topmost": lambda e: center(e)[1],
            "bottommost": lambda e: -center(e)[1],
            "leftmost": lambda e: center(e)[0],
            "rightmost": lambda e: -center(e)[0],
        }[m.group(1)]
        best = min(key(e) for e in els)
        return [e for e in els if key(e) == best]
    m = EXTRACTIVE.match(command.phrase)
    if m:
        text = next(g for g in m.groups() if g is not None)
        return [e for e in els if e.text == text]
    raise AssertionError(f"unparseable phrase {command.phrase!r}")


def rects_overlap(a, b):
    """True when the open interiors of two boxes intersect."""
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1
