"""Spatial probing of pair representations.

Four binary auxiliary tasks are derived from geometry: screen half (AT1
top/bottom, AT2 left/right) and side of the command's target (AT3
above/below, AT4 left/right). A sweep of feed-forward probes of increasing
size is trained on each task and on a matched control task whose labels are
fixed random functions of the input vector. Selectivity is control train
cross-entropy minus auxiliary test cross-entropy, so higher means the probe
reads the feature from the representation rather than memorizing.
"""

from __future__ import annotations

import enum
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from groundprobe import _io, nn
from groundprobe.datagen import Corpus, PairInstance, allocate
from groundprobe.encoder import (
    BBOX_COLUMNS,
    ID_COLUMNS,
    TARGET_COLUMNS,
    ScorerModel,
    pair_batch,
    representations,
)
from groundprobe.errors import (
    DataError,
    EmptyDataset,
    InconsistentDimension,
    NonFiniteLoss,
    SchemaMismatch,
    SingleClassDataset,
)
from groundprobe.geometry import (
    BoundingBox,
    Horizontal,
    Vertical,
    VerticalRelation,
    absolute_region,
    on_midline,
    relative_position,
)

PROBE_SPLIT = (0.3, 0.2, 0.5)
# keeps the control training split above 2000 records while bounding sweep time
MAX_RECORDS = 7000
TRAIN, DEV, TEST = 0, 1, 2
SPLIT_NAMES = ("Train", "Dev", "Test")


class AuxTask(str, enum.Enum):
    AT1 = "AT1"  # element in top / bottom half of the screen
    AT2 = "AT2"  # element in left / right half of the screen
    AT3 = "AT3"  # element above / below the command's target
    AT4 = "AT4"  # element left / right of the command's target


@dataclass
class RepresentationTable:
    """Pair representations with the geometry needed for auxiliary labels."""

    command_ids: list[str]
    element_ids: list[str]
    target_ids: list[str]
    boxes: np.ndarray  # (n, 4) element bbox, x0 x1 y0 y1
    target_boxes: np.ndarray  # (n, 4)
    vectors: np.ndarray  # (n, d) float32
    source: str = ""

    def __len__(self) -> int:
        return len(self.command_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_model(
        cls, model: ScorerModel, corpus: Corpus, pairs: Sequence[PairInstance], batch_size: int = 4096
    ) -> RepresentationTable:
        vecs, boxes, tboxes, cids, eids, tids = [], [], [], [], [], []
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            vecs.append(representations(model, pair_batch(model, corpus, chunk)).astype(np.float32))
            for p in chunk:
                cmd = corpus.command(p.command_id)
                screen = corpus.screens[cmd.screen_id]
                cids.append(p.command_id)
                eids.append(p.element_id)
                tids.append(cmd.target_id)
                boxes.append(screen.element(p.element_id).bbox.as_list())
                tboxes.append(screen.element(cmd.target_id).bbox.as_list())
        return cls(
            cids,
            eids,
            tids,
            np.array(boxes, dtype=np.int64).reshape(-1, 4),
            np.array(tboxes, dtype=np.int64).reshape(-1, 4),
            np.concatenate(vecs) if vecs else np.zeros((0, model.dim), np.float32),
            source=model.kind.short,
        )

    def reflect_x(self) -> RepresentationTable:
        def flip(b):
            return np.stack([1000 - b[:, 1], 1000 - b[:, 0], b[:, 2], b[:, 3]], axis=1)

        return RepresentationTable(
            self.command_ids, self.element_ids, self.target_ids,
            flip(self.boxes), flip(self.target_boxes), self.vectors, self.source,
        )


def import_representations(path: str | Path) -> RepresentationTable:
    """Read a representation CSV (as written by the encoder's exporter)."""
    path = Path(path)
    rows = _io.read_csv(path)
    if not rows:
        raise EmptyDataset(f"{path}: no records")
    header = list(rows[0].keys())
    required = [*ID_COLUMNS, *BBOX_COLUMNS, *TARGET_COLUMNS]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns {missing}")
    vcols = sorted((c for c in header if c.startswith("v") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    if not vcols:
        raise SchemaMismatch(f"{path}: no vector columns v0..")
    if [int(c[1:]) for c in vcols] != list(range(len(vcols))):
        raise SchemaMismatch(f"{path}: vector columns are not v0..v{len(vcols) - 1}")
    vectors = np.zeros((len(rows), len(vcols)), dtype=np.float32)
    boxes = np.zeros((len(rows), 4), dtype=np.int64)
    tboxes = np.zeros((len(rows), 4), dtype=np.int64)
    for i, row in enumerate(rows):
        present = [c for c in vcols if row.get(c) not in (None, "")]
        if len(present) != len(vcols) or None in row:
            raise InconsistentDimension(
                f"{path}: record {i} has {len(present) + len(row.get(None) or [])} values, expected {len(vcols)}"
            )
        try:
            vectors[i] = [float(row[c]) for c in vcols]
            boxes[i] = [int(row[c]) for c in BBOX_COLUMNS]
            tboxes[i] = [int(row[c]) for c in TARGET_COLUMNS]
        except ValueError as exc:
            raise SchemaMismatch(f"{path}: record {i}: {exc}") from exc
    for arr in (boxes, tboxes):
        bad = (arr < 0) | (arr > 1000)
        if bad.any() or (arr[:, 0] > arr[:, 1]).any() or (arr[:, 2] > arr[:, 3]).any():
            raise SchemaMismatch(f"{path}: boxes must be normalized [x0, x1, y0, y1] on 0..1000")
    return RepresentationTable(
        [r["command_id"] for r in rows],
        [r["element_id"] for r in rows],
        [r["target_id"] for r in rows],
        boxes,
        tboxes,
        vectors,
        source=path.stem,
    )


# ---------------------------------------------------------------------------
# auxiliary datasets


def aux_label(task: AuxTask, box, target_box, element_is_target: bool = False,
              exclude_ties: bool = True) -> int | None:
    """Binary label for one record, or None when the record is excluded.

    AT1: 0 Top / 1 Bottom. AT2: 0 Left / 1 Right. AT3: 0 Above / 1 Below the
    target. AT4: 0 Left / 1 Right of the target.
    """
    b = box if isinstance(box, BoundingBox) else BoundingBox(*map(int, box))
    task = AuxTask(task)
    if task in (AuxTask.AT1, AuxTask.AT2):
        horizontal, vertical = absolute_region(b)
        tie_x, tie_y = on_midline(b)
        if task is AuxTask.AT1:
            return None if exclude_ties and tie_y else int(vertical is Vertical.BOTTOM)
        return None if exclude_ties and tie_x else int(horizontal is Horizontal.RIGHT)
    if element_is_target:
        return None
    t = target_box if isinstance(target_box, BoundingBox) else BoundingBox(*map(int, target_box))
    horizontal, vertical = relative_position(b, t)
    if task is AuxTask.AT3:
        return None if vertical is None else int(vertical is VerticalRelation.BELOW)
    return None if horizontal is None else int(horizontal is Horizontal.RIGHT)


@dataclass
class AuxDataset:
    task: AuxTask
    vectors: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) 0/1
    split: np.ndarray  # (n,) TRAIN / DEV / TEST
    records: np.ndarray  # (n,) row index into the source table
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def part(self, which: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.split == which
        return self.vectors[m], self.labels[m]


def assign_splits(n: int, ratios: Sequence[float], seed: int) -> np.ndarray:
    counts = allocate(n, ratios)
    split = np.empty(n, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(n)
    split[order[: counts[0]]] = TRAIN
    split[order[counts[0] : counts[0] + counts[1]]] = DEV
    split[order[counts[0] + counts[1] :]] = TEST
    return split


def build_aux_dataset(
    reps: RepresentationTable,
    task: AuxTask | str,
    seed: int = 0,
    max_records: int | None = None,
    exclude_ties: bool = True,
    ratios: Sequence[float] = PROBE_SPLIT,
) -> AuxDataset:
    """Label every usable record, optionally subsample, then split 30-20-50."""
    task = AuxTask(task)
    keep, labels = [], []
    for i in range(len(reps)):
        y = aux_label(
            task, reps.boxes[i], reps.target_boxes[i],
            reps.element_ids[i] == reps.target_ids[i], exclude_ties,
        )
        if y is not None:
            keep.append(i)
            labels.append(y)
    if not keep:
        raise EmptyDataset(f"{task.value}: no usable records")
    keep = np.array(keep)
    labels = np.array(labels, dtype=np.int64)
    if max_records is not None and len(keep) > max_records:
        pick = np.sort(np.random.default_rng([seed, 1]).choice(len(keep), max_records, replace=False))
        keep, labels = keep[pick], labels[pick]
    split = assign_splits(len(keep), ratios, seed)
    for s in (TRAIN, DEV, TEST):
        present = set(labels[split == s].tolist())
        if present != {0, 1}:
            raise SingleClassDataset(f"{task.value}: {SPLIT_NAMES[s]} split has classes {sorted(present)}")
    return AuxDataset(task, reps.vectors[keep], labels, split, keep, provenance=reps.source)


def control_label(vector: np.ndarray, seed: int) -> int:
    """Fixed random label: a hash of the vector bytes and the seed."""
    h = hashlib.blake2b(np.ascontiguousarray(vector, dtype=np.float32).tobytes(), digest_size=8,
                        key=int(seed).to_bytes(8, "little", signed=True))
    return h.digest()[0] & 1


def make_control(aux: AuxDataset, seed: int = 0) -> AuxDataset:
    if len(aux) == 0:
        raise EmptyDataset("empty auxiliary dataset")
    labels = np.array([control_label(v, seed) for v in aux.vectors], dtype=np.int64)
    return AuxDataset(aux.task, aux.vectors, labels, aux.split, aux.records, provenance=f"{aux.provenance}:control")


# ---------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class ProbeSpec:
    hidden: tuple[int, ...]
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def param_count(self, dim: int) -> int:
        return nn.mlp_param_count(dim, self.hidden, 2)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


@dataclass(frozen=True)
class ProbeFamily:
    n_probes: int = 50
    max_width: int = 256
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0


def sweep_specs(dim: int, family: ProbeFamily = ProbeFamily()) -> list[ProbeSpec]:
    """Probe shapes log-spaced in parameter count.

    The first is linear (2d + 2 params), the last has two hidden layers of
    ``max_width``. One hidden layer is used while it can reach the target
    count; widths never repeat within a depth so counts strictly increase.
    """
    n = family.n_probes
    lo = nn.mlp_param_count(dim, ())
    hi = nn.mlp_param_count(dim, (family.max_width, family.max_width))
    one_max = nn.mlp_param_count(dim, (family.max_width,))
    targets = np.geomspace(lo, hi, n)
    shapes: list[tuple[int, ...]] = [()]
    for t in targets[1:-1]:
        prev = shapes[-1]
        if t <= one_max:
            w = max(1, round((t - 2) / (dim + 3)))
            if len(prev) == 1:
                w = max(w, prev[0] + 1)
            shapes.append((min(w, family.max_width),))
        else:
            # w(d+1) + w(w+1) + 2w + 2 = t
            a, b, c = 1.0, dim + 4.0, 2.0 - t
            w = int(round((-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)))
            if len(prev) == 2:
                w = max(w, prev[0] + 1)
            shapes.append((min(w, family.max_width),) * 2)
    shapes.append((family.max_width, family.max_width))
    specs = []
    for shape in shapes:
        specs.append(ProbeSpec(shape, family.epochs, family.learning_rate, family.batch_size, family.seed))
    specs.sort(key=lambda s: s.param_count(dim))
    return specs


def _standardizer(x: np.ndarray):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-8, sd, 1.0)
    return lambda v: (v - mu) / sd


def probe_loss_and_grads(params: nn.Params, x: np.ndarray, y: np.ndarray, n_layers: int):
    logits, acts = nn.mlp_forward(params, x, n_layers)
    loss, dlogits = nn.cross_entropy(logits, y)
    grads, _ = nn.mlp_backward(params, acts, dlogits, n_layers)
    return loss, grads


def evaluate_probe(params: nn.Params, x: np.ndarray, y: np.ndarray, n_layers: int) -> tuple[float, float]:
    """(accuracy, mean cross-entropy)."""
    logits, _ = nn.mlp_forward(params, x, n_layers)
    logp = nn.log_softmax(logits.astype(np.float64))
    ce = float(-logp[np.arange(len(y)), y].mean())
    acc = float((logits.argmax(axis=1) == y).mean())
    return acc, ce


def train_probe(
    spec: ProbeSpec,
    x: np.ndarray,
    y: np.ndarray,
    x_dev: np.ndarray | None = None,
    y_dev: np.ndarray | None = None,
) -> nn.Params:
    """Adam on cross-entropy. With a dev set, keep the epoch with best dev accuracy."""
    rng = np.random.default_rng([spec.seed, *spec.hidden, len(spec.hidden)])
    params = nn.init_mlp(rng, x.shape[1], spec.hidden, 2, dtype=np.float32)
    x = x.astype(np.float32)
    if x_dev is not None:
        x_dev = x_dev.astype(np.float32)
    opt = nn.Adam(spec.learning_rate)
    best, best_acc = None, -1.0
    for epoch in range(spec.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(order), spec.batch_size):
            idx = order[start : start + spec.batch_size]
            loss, grads = probe_loss_and_grads(params, x[idx], y[idx], spec.n_layers)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"probe {spec.hidden} diverged in epoch {epoch + 1}")
            opt.step(params, grads)
        if x_dev is not None:
            acc, _ = evaluate_probe(params, x_dev, y_dev, spec.n_layers)
            if acc > best_acc:
                best_acc = acc
                best = {k: v.copy() for k, v in params.items()}
    return best if best is not None else params


@dataclass
class ProbeRun:
    spec: ProbeSpec
    param_count: int
    aux_test_acc: float = float("nan")
    aux_test_ce: float = float("nan")
    control_train_acc: float = float("nan")
    control_train_ce: float = float("nan")
    failed: bool = False
    index: int = 0
    task: str = ""

    @property
    def selectivity(self) -> float:
        return selectivity(self)


def selectivity(run: ProbeRun) -> float:
    return run.control_train_ce - run.aux_test_ce


def run_probe(spec: ProbeSpec, aux: AuxDataset, control: AuxDataset) -> ProbeRun:
    run = ProbeRun(spec, spec.param_count(aux.dim), task=aux.task.value)
    x_tr, y_tr = aux.part(TRAIN)
    scale = _standardizer(x_tr)
    x_dev, y_dev = aux.part(DEV)
    x_te, y_te = aux.part(TEST)
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            params = train_probe(spec, scale(x_tr), y_tr, scale(x_dev), y_dev)
            run.aux_test_acc, run.aux_test_ce = evaluate_probe(params, scale(x_te), y_te, spec.n_layers)
            cx, cy = control.part(TRAIN)
            cparams = train_probe(spec, scale(cx), cy)
            run.control_train_acc, run.control_train_ce = evaluate_probe(cparams, scale(cx), cy, spec.n_layers)
        except NonFiniteLoss:
            run.failed = True
    if not all(map(math.isfinite, (run.aux_test_ce, run.control_train_ce))):
        run.failed = True
    return run


def _run_indexed(args):
    i, spec, aux, control = args
    run = run_probe(spec, aux, control)
    run.index = i
    return run


def probe_sweep(
    aux: AuxDataset,
    family: ProbeFamily = ProbeFamily(),
    control_seed: int = 0,
    jobs: int = 1,
) -> list[ProbeRun]:
    """Train every probe of the family on ``aux`` and on its control task."""
    specs = sweep_specs(aux.dim, family)
    control = make_control(aux, control_seed)
    work = [(i, s, aux, control) for i, s in enumerate(specs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_indexed, work))
    else:
        runs = [_run_indexed(w) for w in work]
    runs.sort(key=lambda r: (r.param_count, r.index))
    return runs


def probe_grad_check(spec: ProbeSpec, dim: int, n: int = 16, epsilon: float = 1e-5,
                     n_samples: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    params = nn.init_mlp(rng, dim, spec.hidden, 2)
    for k in params:
        if k.startswith("b"):
            params[k] = rng.standard_normal(params[k].shape) * 0.1
    x = rng.standard_normal((n, dim))
    y = rng.integers(0, 2, n)
    return nn.check_gradients(params, lambda p: probe_loss_and_grads(p, x, y, spec.n_layers),
                              epsilon, n_samples, seed)


# ---------------------------------------------------------------------------
# sweep files

SWEEP_COLUMNS = (
    "task", "probe_index", "param_count", "aux_test_acc", "aux_test_ce",
    "control_train_acc", "control_train_ce", "selectivity", "failed",
)


@dataclass
class SweepRow:
    task: str
    probe_index: int
    param_count: int
    aux_test_acc: float
    aux_test_ce: float
    control_train_acc: float
    control_train_ce: float
    selectivity: float
    failed: bool
    model: str = field(default="", compare=False)

    @classmethod
    def from_run(cls, run: ProbeRun, probe_index: int) -> SweepRow:
        return cls(run.task, probe_index, run.param_count, run.aux_test_acc, run.aux_test_ce,
                   run.control_train_acc, run.control_train_ce, run.selectivity, run.failed)


def sweep_rows(runs: Sequence[ProbeRun]) -> list[SweepRow]:
    return [SweepRow.from_run(r, i) for i, r in enumerate(runs)]


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    return _io.csv_text(SWEEP_COLUMNS, ([getattr(r, c) for c in SWEEP_COLUMNS] for r in rows))


def load_sweep(path: str | Path, model: str = "") -> list[SweepRow]:
    out = []
    for row in _io.read_csv(path):
        try:
            out.append(SweepRow(
                row["task"], int(row["probe_index"]), int(row["param_count"]),
                float(row["aux_test_acc"]), float(row["aux_test_ce"]),
                float(row["control_train_acc"]), float(row["control_train_ce"]),
                float(row["selectivity"]), row["failed"] in ("1", "True", "true"), model,
            ))
        except (KeyError, ValueError) as exc:
            raise SchemaMismatch(f"{path}: bad sweep row {row!r}: {exc}") from exc
    return out


def best_accuracy(rows: Sequence[SweepRow]) -> float:
    ok = [r.aux_test_acc for r in rows if not r.failed]
    if not ok:
        raise DataError("every probe in the sweep failed")
    return max(ok)
