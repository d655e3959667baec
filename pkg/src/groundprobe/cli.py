"""Command-line pipeline: gen, train, eval, probe, report, filter, demo.

Settings come from a JSON config (``--config`` or the GROUNDPROBE_CONFIG
environment variable) and command-line flags override file values. Exit
codes: 0 success, 2 usage error, 3 data or schema error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from groundprobe import __version__, _io, datagen, encoder, probing, report
from groundprobe.datagen import Corpus, GenConfig, Split
from groundprobe.encoder import ModelKind, ScorerModel, TrainConfig
from groundprobe.errors import DataError, GroundProbeError
from groundprobe.geometry import Reasoning
from groundprobe.probing import AuxTask, ProbeFamily

CONFIG_ENV = "GROUNDPROBE_CONFIG"
KINDS = ("text", "layout")
log = logging.getLogger("groundprobe")


class UsageError(Exception):
    """Bad invocation or config file; maps to exit code 2."""


@dataclass
class Paths:
    corpus: str = "run/corpus"
    models: str = "run/models"
    reports: str = "run/reports"


@dataclass
class ModelConfig:
    dim: int = 64
    buckets: int = 50
    embed_scale: float = 0.3
    coord_scale: float = 0.6
    seed: int = 0


@dataclass
class ProbeConfig:
    family: ProbeFamily = field(default_factory=ProbeFamily)
    max_records: int = probing.MAX_RECORDS
    split: str = "Test"
    data_seed: int = 0
    control_seed: int = 0


def _tuned_training() -> dict[str, TrainConfig]:
    return {k: TrainConfig(learning_rate=0.2, batch_size=64, epochs=30, seed=0) for k in KINDS}


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    gen: GenConfig = field(default_factory=GenConfig)
    split_ratios: tuple[float, float, float] = (0.5, 0.2, 0.3)
    train: dict[str, TrainConfig] = field(default_factory=_tuned_training)
    model: ModelConfig = field(default_factory=ModelConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval_splits: tuple[str, ...] = ("Dev", "Test")
    tau: float = report.DEFAULT_TAU

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gen"].pop("text_lexicon")
        return d


def _build(cls, data: Any, where: str):
    """Instantiate dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise UsageError(f"config section {where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise UsageError(f"unknown config keys in {where}: {', '.join(unknown)}")
    return data


def config_from_dict(data: dict) -> RunConfig:
    _build(RunConfig, data, "root")
    base = RunConfig()
    kw: dict[str, Any] = {}
    if "paths" in data:
        kw["paths"] = Paths(**{**dataclasses.asdict(base.paths), **_build(Paths, data["paths"], "paths")})
    if "gen" in data:
        kw["gen"] = GenConfig(**_build(GenConfig, data["gen"], "gen"))
    if "split_ratios" in data:
        kw["split_ratios"] = tuple(data["split_ratios"])
    if "train" in data:
        section = data["train"]
        if not isinstance(section, dict) or set(section) - set(KINDS):
            raise UsageError(f"config section train takes keys {KINDS}")
        train = dict(base.train)
        for k, v in section.items():
            train[k] = TrainConfig(**{**dataclasses.asdict(train[k]), **_build(TrainConfig, v, f"train.{k}")})
        kw["train"] = train
    if "model" in data:
        kw["model"] = ModelConfig(**_build(ModelConfig, data["model"], "model"))
    if "probe" in data:
        section = dict(_build(ProbeConfig, data["probe"], "probe"))
        if "family" in section:
            section["family"] = ProbeFamily(**_build(ProbeFamily, section["family"], "probe.family"))
        kw["probe"] = ProbeConfig(**section)
    if "eval_splits" in data:
        kw["eval_splits"] = tuple(data["eval_splits"])
    if "tau" in data:
        kw["tau"] = float(data["tau"])
    try:
        return RunConfig(**kw)
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    path = path or os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Flags win over file values."""
    if getattr(args, "out", None):
        root = Path(args.out)
        cfg.paths = Paths(str(root / "corpus"), str(root / "models"), str(root / "reports"))
    for name in ("corpus", "models", "reports"):
        v = getattr(args, f"{name}_dir", None)
        if v:
            setattr(cfg.paths, name, v)
    gen = {}
    if getattr(args, "seed", None) is not None:
        gen["seed"] = args.seed
    if getattr(args, "screens", None) is not None:
        gen["screens"] = args.screens
    if getattr(args, "commands_per_screen", None) is not None:
        gen["commands_per_screen"] = args.commands_per_screen
    if gen:
        cfg.gen = dataclasses.replace(cfg.gen, **gen)
    train = {}
    if getattr(args, "epochs", None) is not None:
        train["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        train["learning_rate"] = args.lr
    if train:
        cfg.train = {k: dataclasses.replace(v, **train) for k, v in cfg.train.items()}
    fam = {}
    if getattr(args, "n_probes", None) is not None:
        fam["n_probes"] = args.n_probes
    if getattr(args, "probe_epochs", None) is not None:
        fam["epochs"] = args.probe_epochs
    if fam:
        cfg.probe.family = dataclasses.replace(cfg.probe.family, **fam)
    if getattr(args, "max_records", None) is not None:
        cfg.probe.max_records = args.max_records
    if getattr(args, "tau", None) is not None:
        cfg.tau = args.tau
    return cfg


# ---------------------------------------------------------------------------
# artifacts


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"missing prerequisite {what}: {path}")
    return path


def _corpus(cfg: RunConfig) -> Corpus:
    d = Path(cfg.paths.corpus)
    _require(d / datagen.SCREENS_FILE, "corpus (run gen first)")
    return datagen.load_corpus(d)


def checkpoint_path(cfg: RunConfig, kind: str) -> Path:
    return Path(cfg.paths.models) / f"{kind}.json"


def _model(cfg: RunConfig, kind: str) -> ScorerModel:
    return encoder.load_checkpoint(_require(checkpoint_path(cfg, kind), f"{kind} checkpoint (run train --kind {kind})"))


def summary_table(corpus: Corpus) -> str:
    """Command counts per reasoning type and split, laid out like a dataset table."""
    splits = [s for s in Split]
    header = f"{'reasoning':<16}" + "".join(f"{s.value:>8}" for s in splits) + f"{'total':>8}"
    lines = [header]
    by_split = {s: datagen.reasoning_counts(corpus.commands_in(s)) for s in splits}
    for r in Reasoning:
        counts = [by_split[s][r] for s in splits]
        lines.append(f"{r.value:<16}" + "".join(f"{c:>8}" for c in counts) + f"{sum(counts):>8}")
    totals = [sum(by_split[s].values()) for s in splits]
    lines.append(f"{'total':<16}" + "".join(f"{c:>8}" for c in totals) + f"{sum(totals):>8}")
    return "\n".join(lines)


def cmd_gen(cfg: RunConfig, args) -> int:
    corpus = datagen.build_corpus(cfg.gen, cfg.split_ratios)
    datagen.write_corpus(cfg.paths.corpus, corpus)
    print(f"wrote corpus to {cfg.paths.corpus}: {len(corpus.screens)} screens, "
          f"{len(corpus.commands)} commands, {len(corpus.pairs)} pairs")
    print(summary_table(corpus))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    corpus = _corpus(cfg)
    kinds = [args.kind] if args.kind else list(KINDS)
    vocab = encoder.corpus_vocab(corpus)
    train_pairs = corpus.pairs_in(Split.TRAIN)
    for kind in kinds:
        m = cfg.model
        model = ScorerModel.init(kind, vocab, m.dim, m.buckets, m.seed, m.embed_scale, m.coord_scale)
        result = encoder.train(
            model, train_pairs, cfg.train[kind], corpus,
            on_epoch=lambda e, loss, kind=kind: log.info("%s epoch %d loss %.6f", kind, e, loss),
        )
        path = encoder.save_checkpoint(model, checkpoint_path(cfg, kind))
        _io.atomic_write(
            Path(cfg.paths.models) / f"{kind}_loss.csv",
            _io.csv_text(("epoch", "loss"), enumerate(result.losses, 1)),
        )
        print(f"{kind}: final loss {result.losses[-1]:.6f}, checkpoint {path}")
    return 0


def _format_row(r: report.ReportRow) -> str:
    return (f"{r.model:<10}{r.split:<7}{r.ext_acc:>8.4f}{r.abs_acc:>8.4f}{r.rel_acc:>8.4f}{r.all_acc:>8.4f}"
            f"{r.n_ext:>7}{r.n_abs:>7}{r.n_rel:>7}")


def cmd_eval(cfg: RunConfig, args) -> int:
    corpus = _corpus(cfg)
    models = {k: _model(cfg, k) for k in KINDS}
    rows, preds = [], []
    for split in cfg.eval_splits:
        rep = report.grounding_report(models, corpus, split)
        rows += rep.rows
        preds += rep.predictions
    out = report.write_report(report.GroundingReport(rows, preds), cfg.paths.reports)
    print(f"{'model':<10}{'split':<7}{'ext':>8}{'abs':>8}{'rel':>8}{'all':>8}{'n_ext':>7}{'n_abs':>7}{'n_rel':>7}")
    for r in rows:
        print(_format_row(r))
    print(f"wrote {out[0]} and {out[1]}")
    return 0


def sweep_path(cfg: RunConfig, model: str, task: str) -> Path:
    return Path(cfg.paths.reports) / f"sweep_{model}_{task}.csv"


def _run_sweeps(cfg: RunConfig, name: str, reps: probing.RepresentationTable, tasks, jobs: int) -> None:
    for task in tasks:
        aux = probing.build_aux_dataset(reps, task, seed=cfg.probe.data_seed, max_records=cfg.probe.max_records)
        runs = probing.probe_sweep(aux, cfg.probe.family, cfg.probe.control_seed, jobs)
        rows = probing.sweep_rows(runs)
        path = _io.atomic_write(sweep_path(cfg, name, task.value), probing.sweep_csv(rows))
        ok = [r for r in rows if not r.failed]
        best = max((r.aux_test_acc for r in ok), default=float("nan"))
        print(f"{name} {task.value}: {len(aux)} records, best accuracy {best:.4f}, "
              f"{len(rows) - len(ok)} failed probes, {path}")


def cmd_probe(cfg: RunConfig, args) -> int:
    tasks = [AuxTask(args.task)] if args.task else list(AuxTask)
    if args.import_path:
        reps = probing.import_representations(args.import_path)
        _run_sweeps(cfg, args.name or Path(args.import_path).stem, reps, tasks, args.jobs)
        return 0
    corpus = _corpus(cfg)
    pairs = corpus.pairs_in(cfg.probe.split)
    if not pairs:
        raise DataError(f"no pairs in probe split {cfg.probe.split}")
    for kind in [args.kind] if args.kind else list(KINDS):
        reps = probing.RepresentationTable.from_model(_model(cfg, kind), corpus, pairs)
        _run_sweeps(cfg, kind, reps, tasks, args.jobs)
    return 0


def collect_sweeps(directory: str | Path) -> dict[tuple[str, str], list[probing.SweepRow]]:
    out = {}
    for path in sorted(Path(directory).glob("sweep_*_AT*.csv")):
        model, task = path.stem[len("sweep_"):].rsplit("_", 1)
        out[(model, task)] = probing.load_sweep(path, model)
    return out


def cmd_report(cfg: RunConfig, args) -> int:
    sweeps = collect_sweeps(cfg.paths.reports)
    if not sweeps:
        raise DataError(f"missing prerequisite sweep files (run probe first) in {cfg.paths.reports}")
    curves, written = report.emit_curves(sweeps, cfg.paths.reports)
    for c in curves:
        best = max((p.aux_test_acc for p in c.points), default=float("nan"))
        print(f"{c.model:<10}{c.task:<5}{len(c.points):>4} probes  best accuracy {best:.4f}")
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_filter(cfg: RunConfig, args) -> int:
    corpus = _corpus(cfg)
    model = _model(cfg, "text")
    result = report.filter_trivial(corpus, model, cfg.tau)
    d = Path(cfg.paths.corpus)
    _io.atomic_write(d / "commands.filtered.jsonl", datagen.dump_commands(result.corpus.commands))
    _io.atomic_write(d / "pairs.filtered.csv", datagen.pairs_csv(result.corpus.pairs))
    log_path = _io.atomic_write(Path(cfg.paths.reports) / "removal_log.csv", report.removal_csv(result.log))
    before = report.spatial_share(corpus.commands)
    after = report.spatial_share(result.corpus.commands)
    print(f"tau {cfg.tau}: removed {result.removed} of {len(corpus.commands)} commands")
    print(f"spatial share {before:.4f} -> {after:.4f}")
    print(f"wrote filtered corpus to {d} and removal log {log_path}")
    return 0


DEMO = {
    "gen": {"screens": 4000, "commands_per_screen": 3, "seed": 0},
    "train": {k: {"epochs": 30} for k in KINDS},
    "probe": {"family": {"n_probes": 8, "epochs": 15}, "max_records": 2500},
}


def demo_config(out: str) -> RunConfig:
    cfg = config_from_dict(DEMO)
    root = Path(out)
    cfg.paths = Paths(str(root / "corpus"), str(root / "models"), str(root / "reports"))
    return cfg


def cmd_demo(cfg: RunConfig, args) -> int:
    """Whole pipeline on a small corpus. Uses the built-in demo settings unless a config is given."""
    if not (args.config or os.environ.get(CONFIG_ENV)):
        cfg = demo_config(args.out or "demo_run")
        cfg = apply_overrides(cfg, args)
    args.kind = None
    args.task = None
    args.import_path = None
    for step in (cmd_gen, cmd_train, cmd_eval, cmd_probe, cmd_report, cmd_filter):
        print(f"== {step.__name__[4:]}")
        step(cfg, args)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    common.add_argument("--out", help="root directory for corpus/, models/ and reports/")
    common.add_argument("--corpus-dir")
    common.add_argument("--models-dir")
    common.add_argument("--reports-dir")
    common.add_argument("--jobs", type=int, default=1, help="parallel probe workers; 1 is bitwise deterministic")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    p = argparse.ArgumentParser(prog="groundprobe", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def gen_flags(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--screens", type=int)
        sp.add_argument("--commands-per-screen", type=int)

    def train_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)

    def probe_flags(sp):
        sp.add_argument("--n-probes", type=int)
        sp.add_argument("--probe-epochs", type=int)
        sp.add_argument("--max-records", type=int)

    gen_flags(add("gen", cmd_gen, "generate a synthetic corpus"))
    sp = add("train", cmd_train, "train a scorer")
    sp.add_argument("--kind", choices=KINDS, help="model kind (default: both)")
    train_flags(sp)
    add("eval", cmd_eval, "grounding accuracy for both models")
    sp = add("probe", cmd_probe, "probe sweeps on model or imported representations")
    sp.add_argument("--task", choices=[t.value for t in AuxTask], help="auxiliary task (default: all)")
    sp.add_argument("--kind", choices=KINDS, help="model kind (default: both)")
    sp.add_argument("--import", dest="import_path", metavar="FILE", help="representation CSV to probe")
    sp.add_argument("--name", help="model name for imported representations (default: file stem)")
    probe_flags(sp)
    add("report", cmd_report, "probe curves as CSV and SVG")
    sp = add("filter", cmd_filter, "remove commands a text-only model finds trivial")
    sp.add_argument("--tau", type=float)
    sp = add("demo", cmd_demo, "run the whole pipeline on a small corpus")
    gen_flags(sp)
    train_flags(sp)
    probe_flags(sp)
    sp.add_argument("--tau", type=float)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        return args.fn(cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"groundprobe: error: {exc}", file=sys.stderr)
        return 2
    except GroundProbeError as exc:
        print(f"groundprobe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
