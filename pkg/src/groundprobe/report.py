"""Evaluation artifacts: grounding accuracy tables, trivial-example
filtering, and probe curves (CSV plus a self-contained SVG per task)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from groundprobe import _io
from groundprobe.datagen import Corpus, Split
from groundprobe.encoder import ModelKind, ScorerModel, ground, pair_probabilities
from groundprobe.errors import DataError, EmptySplit, WrongModelKind
from groundprobe.geometry import Command, Reasoning
from groundprobe.probing import SweepRow

REPORT_COLUMNS = (
    "model", "split", "ext_acc", "abs_acc", "rel_acc", "all_acc", "n_ext", "n_abs", "n_rel",
)
PREDICTION_COLUMNS = ("model", "split", "command_id", "reasoning", "target_id", "predicted_id", "correct")
REMOVAL_COLUMNS = ("command_id", "reasoning", "top1_prob", "removed")
CURVE_COLUMNS = (
    "model", "task", "probe_index", "param_count", "aux_test_acc", "selectivity", "failed",
)
DEFAULT_TAU = 0.99

_SHORT = {Reasoning.EXTRACTIVE: "ext", Reasoning.ABSOLUTE: "abs", Reasoning.RELATIVE: "rel"}


# ---------------------------------------------------------------------------
# grounding accuracy


@dataclass(frozen=True)
class Prediction:
    model: str
    split: str
    command_id: str
    reasoning: Reasoning
    target_id: str
    predicted_id: str

    @property
    def correct(self) -> bool:
        return self.predicted_id == self.target_id


@dataclass(frozen=True)
class ReportRow:
    model: str
    split: str
    ext_acc: float
    abs_acc: float
    rel_acc: float
    all_acc: float
    n_ext: int
    n_abs: int
    n_rel: int

    def accuracy(self, reasoning: Reasoning | str) -> float:
        return getattr(self, f"{_SHORT[Reasoning(reasoning)]}_acc")

    def count(self, reasoning: Reasoning | str) -> int:
        return getattr(self, f"n_{_SHORT[Reasoning(reasoning)]}")


@dataclass
class GroundingReport:
    rows: list[ReportRow]
    predictions: list[Prediction]

    def row(self, model: str, split: str | None = None) -> ReportRow:
        for r in self.rows:
            if r.model == model and (split is None or r.split == split):
                return r
        raise KeyError(model)


def summarize(predictions: Sequence[Prediction], model: str, split: str) -> ReportRow:
    """Accuracy by reasoning type; All is the micro-average over commands.

    A type with no commands gets NaN accuracy.
    """
    hits = {r: 0 for r in Reasoning}
    totals = {r: 0 for r in Reasoning}
    for p in predictions:
        totals[p.reasoning] += 1
        hits[p.reasoning] += p.correct
    n = sum(totals.values())
    if n == 0:
        raise EmptySplit(f"no commands for model {model} in split {split}")
    acc = {r: hits[r] / totals[r] if totals[r] else math.nan for r in Reasoning}
    return ReportRow(
        model, split,
        acc[Reasoning.EXTRACTIVE], acc[Reasoning.ABSOLUTE], acc[Reasoning.RELATIVE],
        sum(hits.values()) / n,
        totals[Reasoning.EXTRACTIVE], totals[Reasoning.ABSOLUTE], totals[Reasoning.RELATIVE],
    )


def _split_label(split: Split | str | None) -> str:
    return "All" if split is None else Split(split).value


def grounding_report(
    models: Mapping[str, ScorerModel] | Sequence[ScorerModel],
    corpus: Corpus,
    split: Split | str | None = Split.TEST,
) -> GroundingReport:
    """Run ground() on every command of ``split`` for every model.

    ``models`` is either a name -> model mapping or a sequence, in which case
    each model is named by its kind.
    """
    if not isinstance(models, Mapping):
        models = {m.kind.short: m for m in models}
    commands = corpus.commands_in(split)
    label = _split_label(split)
    if not commands:
        raise EmptySplit(f"split {label} has no commands")
    rows, preds = [], []
    for name, model in models.items():
        mine = [
            Prediction(name, label, c.id, c.reasoning, c.target_id, ground(model, corpus.screens[c.screen_id], c))
            for c in commands
        ]
        rows.append(summarize(mine, name, label))
        preds.extend(mine)
    return GroundingReport(rows, preds)


def report_csv(rows: Iterable[ReportRow]) -> str:
    return _io.csv_text(REPORT_COLUMNS, ([getattr(r, c) for c in REPORT_COLUMNS] for r in rows))


def predictions_csv(preds: Iterable[Prediction]) -> str:
    return _io.csv_text(
        PREDICTION_COLUMNS,
        ((p.model, p.split, p.command_id, p.reasoning.value, p.target_id, p.predicted_id, p.correct) for p in preds),
    )


def load_report(path: str | Path) -> list[ReportRow]:
    out = []
    for row in _io.read_csv(path):
        out.append(ReportRow(
            row["model"], row["split"],
            *(float(row[c]) for c in ("ext_acc", "abs_acc", "rel_acc", "all_acc")),
            *(int(row[c]) for c in ("n_ext", "n_abs", "n_rel")),
        ))
    return out


def load_predictions(path: str | Path) -> list[Prediction]:
    return [
        Prediction(r["model"], r["split"], r["command_id"], Reasoning(r["reasoning"]), r["target_id"], r["predicted_id"])
        for r in _io.read_csv(path)
    ]


def write_report(report: GroundingReport, directory: str | Path,
                 name: str = "grounding.csv", predictions_name: str = "predictions.csv") -> tuple[Path, Path]:
    d = Path(directory)
    a = _io.atomic_write(d / name, report_csv(report.rows))
    b = _io.atomic_write(d / predictions_name, predictions_csv(report.predictions))
    return a, b


# ---------------------------------------------------------------------------
# trivial-example filtering


@dataclass(frozen=True)
class Removal:
    command_id: str
    reasoning: Reasoning
    top1_prob: float
    removed: bool


@dataclass
class FilterResult:
    corpus: Corpus
    log: list[Removal]

    @property
    def removed(self) -> int:
        return sum(r.removed for r in self.log)


def removal_decisions(model: ScorerModel, corpus: Corpus, commands: Sequence[Command], tau: float) -> list[Removal]:
    out = []
    for c in commands:
        probs = pair_probabilities(model, corpus.screens[c.screen_id], c)
        top = ground(model, corpus.screens[c.screen_id], c)
        p_top = float(np.max(probs))
        out.append(Removal(c.id, c.reasoning, p_top, top == c.target_id and p_top > tau))
    return out


def filter_trivial(
    corpus: Corpus,
    position_blind_model: ScorerModel,
    tau: float = DEFAULT_TAU,
    split: Split | str | None = None,
) -> FilterResult:
    """Drop commands a text-only model already grounds with probability > tau.

    Only commands of ``split`` are considered (all when None); the rest of
    the corpus is kept untouched. Pairs of removed commands are dropped too.
    """
    if position_blind_model.kind is not ModelKind.TEXT:
        raise WrongModelKind("the filter model must be position-blind (text-only)")
    if not 0.5 < tau < 1.0:
        raise DataError(f"tau must lie in (0.5, 1), got {tau}")
    log = removal_decisions(position_blind_model, corpus, corpus.commands_in(split), tau)
    gone = {r.command_id for r in log if r.removed}
    kept = [c for c in corpus.commands if c.id not in gone]
    used = {c.screen_id for c in kept}
    screens = {k: s for k, s in corpus.screens.items() if k in used}
    pairs = [p for p in corpus.pairs if p.command_id not in gone]
    return FilterResult(Corpus(screens, kept, pairs), log)


def removal_csv(log: Iterable[Removal]) -> str:
    return _io.csv_text(REMOVAL_COLUMNS, ((r.command_id, r.reasoning.value, r.top1_prob, r.removed) for r in log))


def spatial_share(commands: Iterable[Command]) -> float:
    commands = list(commands)
    if not commands:
        return math.nan
    return sum(c.reasoning is not Reasoning.EXTRACTIVE for c in commands) / len(commands)


# ---------------------------------------------------------------------------
# probe curves


@dataclass(frozen=True)
class CurvePoint:
    probe_index: int
    param_count: int
    aux_test_acc: float
    selectivity: float


@dataclass
class ProbeCurve:
    model: str
    task: str
    points: list[CurvePoint]


def build_curve(model: str, task: str, rows: Sequence[SweepRow]) -> ProbeCurve:
    """Non-failed rows sorted by parameter count; the first of equal counts wins."""
    points, seen = [], set()
    for r in sorted(rows, key=lambda r: (r.param_count, r.probe_index)):
        if r.failed or r.param_count in seen:
            continue
        seen.add(r.param_count)
        points.append(CurvePoint(r.probe_index, r.param_count, r.aux_test_acc, r.selectivity))
    return ProbeCurve(model, task, points)


def curves_csv(sweeps: Mapping[tuple[str, str], Sequence[SweepRow]]) -> str:
    rows = []
    for (model, task), runs in sorted(sweeps.items()):
        for r in sorted(runs, key=lambda r: (r.param_count, r.probe_index)):
            rows.append((model, task, r.probe_index, r.param_count, r.aux_test_acc, r.selectivity, r.failed))
    return _io.csv_text(CURVE_COLUMNS, rows)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 420, 260, 48


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _panel(curves: Sequence[ProbeCurve], field: str, title: str, x_off: int) -> list[str]:
    pts = [p for c in curves for p in c.points]
    out = [f'<g transform="translate({x_off},0)">']
    out.append(f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    left, right, top, bottom = _PAD, _W - 12, 32, _H - _PAD
    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="#444"/>')
    if pts:
        lx = [math.log10(p.param_count) for p in pts]
        ys = [getattr(p, field) for p in pts]
        x0, x1 = min(lx), max(lx)
        y0, y1 = min(ys), max(ys)
        if field == "aux_test_acc":
            y0, y1 = min(y0, 0.5), max(y1, 1.0)
        if x1 == x0:
            x1 = x0 + 1
        if y1 == y0:
            y1 = y0 + 1

        def sx(v):
            return left + (math.log10(v) - x0) / (x1 - x0) * (right - left)

        def sy(v):
            return bottom - (v - y0) / (y1 - y0) * (bottom - top)

        for e in range(math.ceil(x0), math.floor(x1) + 1):
            x = sx(10**e)
            out.append(f'<line x1="{_fmt(x)}" y1="{bottom}" x2="{_fmt(x)}" y2="{bottom + 4}" stroke="#444"/>')
            out.append(f'<text x="{_fmt(x)}" y="{bottom + 16}" text-anchor="middle" font-size="10">1e{e}</text>')
        for v in (y0, (y0 + y1) / 2, y1):
            out.append(f'<text x="{left - 4}" y="{_fmt(sy(v) + 3)}" text-anchor="end" font-size="10">{v:.2f}</text>')
        out.append(f'<text x="{(left + right) / 2:.0f}" y="{_H - 10}" text-anchor="middle" font-size="11">'
                   "probe parameters (log scale)</text>")
        for i, c in enumerate(curves):
            if not c.points:
                continue
            color = _PALETTE[i % len(_PALETTE)]
            line = " ".join(f"{_fmt(sx(p.param_count))},{_fmt(sy(getattr(p, field)))}" for p in c.points)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{line}"/>')
            for p in c.points:
                out.append(f'<circle cx="{_fmt(sx(p.param_count))}" cy="{_fmt(sy(getattr(p, field)))}" r="2" fill="{color}"/>')
    out.append("</g>")
    return out


def curve_svg(task: str, curves: Sequence[ProbeCurve]) -> str:
    width = 2 * _W
    legend_h = 18 * len(curves) + 8
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{_H + legend_h}" '
        f'viewBox="0 0 {width} {_H + legend_h}" font-family="sans-serif">',
        f"<title>{escape(task)} probe sweep</title>",
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    lines += _panel(curves, "aux_test_acc", f"{task} accuracy", 0)
    lines += _panel(curves, "selectivity", f"{task} selectivity", _W)
    for i, c in enumerate(curves):
        y = _H + 14 + 18 * i
        color = _PALETTE[i % len(_PALETTE)]
        lines.append(f'<rect x="{_PAD}" y="{y - 9}" width="12" height="10" fill="{color}"/>')
        lines.append(f'<text x="{_PAD + 18}" y="{y}" font-size="11">{escape(c.model)} ({len(c.points)} probes)</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_curves(
    sweeps: Mapping[tuple[str, str], Sequence[SweepRow]], directory: str | Path
) -> tuple[list[ProbeCurve], list[Path]]:
    """Write ``curves.csv`` and one ``curves_<task>.svg`` per task.

    ``sweeps`` maps (model, task) to that sweep's rows. Failed probes stay in
    the CSV with their flag set but are not plotted.
    """
    d = Path(directory)
    curves = [build_curve(m, t, rows) for (m, t), rows in sorted(sweeps.items())]
    written = [_io.atomic_write(d / "curves.csv", curves_csv(sweeps))]
    for task in sorted({c.task for c in curves}):
        mine = [c for c in curves if c.task == task]
        written.append(_io.atomic_write(d / f"curves_{task}.svg", curve_svg(task, mine)))
    return curves, written
