"""Pairwise relevance scorers.

Both kinds mean-pool token embeddings over ``[command] SEP [element text]``
and feed the pooled vector to a two-layer head that emits two logits
(irrelevant, relevant). The layout-aware kind adds four coordinate-bucket
embeddings (x0, x1, y0, y1) to every token of the element segment; the text
segment of the command carries no coordinate term, which is the reserved
zero-coordinate bucket.

The representation handed to probes is the head's hidden activation.
"""

from __future__ import annotations

import base64
import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from groundprobe import _io, nn
from groundprobe.datagen import Corpus, PairInstance
from groundprobe.errors import (
    DataError,
    DimensionMismatch,
    EmptyCommand,
    EmptyDataset,
    EmptyScreen,
    NonFiniteLoss,
    SchemaMismatch,
)
from groundprobe.geometry import GRID, Command, Screen, UIElement

PAD, UNK, SEP = "<pad>", "<unk>", "<sep>"
MAX_TOKENS = 32
CHECKPOINT_FORMAT = "groundprobe-scorer/1"
COORDS = ("x0", "x1", "y0", "y1")

_TOKEN_RE = re.compile(r"[^\W_]+")


class ModelKind(str, enum.Enum):
    TEXT = "TextOnly"
    LAYOUT = "LayoutAware"

    @classmethod
    def parse(cls, value: str | ModelKind) -> ModelKind:
        if isinstance(value, ModelKind):
            return value
        aliases = {"text": cls.TEXT, "textonly": cls.TEXT, "layout": cls.LAYOUT, "layoutaware": cls.LAYOUT}
        try:
            return aliases[value.lower()]
        except KeyError:
            raise DataError(f"unknown model kind {value!r}") from None

    @property
    def short(self) -> str:
        return "text" if self is ModelKind.TEXT else "layout"


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = [PAD, UNK, SEP] + [t for t in tokens if t not in (PAD, UNK, SEP)]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")

    pad, unk, sep = 0, 1, 2

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, texts: Iterable[str]) -> Vocab:
        seen = set()
        for t in texts:
            seen.update(split_words(t))
        return cls(sorted(seen))


def corpus_vocab(corpus: Corpus) -> Vocab:
    """Vocabulary over every command phrase and element text of a corpus."""
    texts = [c.phrase for c in corpus.commands]
    texts.extend(e.text for s in corpus.screens.values() for e in s.elements)
    return Vocab.build(texts)


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocab, max_len: int = MAX_TOKENS) -> list[int]:
    return [vocab.index.get(w, vocab.unk) for w in split_words(text)[:max_len]]


def coord_bucket(v: int, buckets: int) -> int:
    return min(v * buckets // GRID, buckets - 1)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DataError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ScorerModel:
    kind: ModelKind
    vocab: Vocab
    params: nn.Params
    dim: int = 64
    buckets: int = 50
    seed: int = 0

    @classmethod
    def init(
        cls,
        kind: ModelKind | str,
        vocab: Vocab,
        dim: int = 64,
        buckets: int = 50,
        seed: int = 0,
        embed_scale: float = 0.3,
        coord_scale: float = 0.6,
    ) -> ScorerModel:
        kind = ModelKind.parse(kind)
        rng = np.random.default_rng(seed)
        params = {"tok": rng.standard_normal((len(vocab), dim)) * embed_scale}
        params["tok"][vocab.pad] = 0.0
        if kind is ModelKind.LAYOUT:
            params.update(_coordinate_tables(rng, buckets, dim, coord_scale))
        params.update(nn.init_mlp(rng, dim, [dim], 2, prefix="head.", out_scale=0.01))
        params = {k: v.astype(np.float32) for k, v in params.items()}
        return cls(kind, vocab, params, dim, buckets, seed)

    @property
    def layout(self) -> bool:
        return self.kind is ModelKind.LAYOUT

    def copy(self, dtype=None) -> ScorerModel:
        params = {k: v.astype(dtype or v.dtype, copy=True) for k, v in self.params.items()}
        return ScorerModel(self.kind, self.vocab, params, self.dim, self.buckets, self.seed)


def _coordinate_tables(rng: np.random.Generator, buckets: int, dim: int, scale: float) -> nn.Params:
    """Smooth initial coordinate embeddings.

    Each bucket center is encoded with sinusoids whose wavelengths run from
    twice the screen down to a few buckets, so neighbouring buckets start out
    similar. Each axis gets its own random rotation, keeping x and y apart;
    the two coordinates of one axis share it.
    """
    pos = (np.arange(buckets) + 0.5) / buckets
    half = dim // 2
    freqs = 0.5 * (buckets / 4) ** (np.arange(half) / max(1, half - 1))
    angles = 2 * np.pi * pos[:, None] * freqs[None, :]
    enc = np.zeros((buckets, dim))
    enc[:, 0:2 * half:2] = np.sin(angles)
    enc[:, 1:2 * half:2] = np.cos(angles)
    tables = {}
    for axis in ("x", "y"):
        rot, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        for c in (f"{axis}0", f"{axis}1"):
            tables[c] = enc @ rot * scale
    return tables


# ---------------------------------------------------------------------------
# batching


@dataclass
class PairBatch:
    tokens: np.ndarray  # (n, L) int, PAD-filled
    mask: np.ndarray  # (n, L) float, 1 on real tokens
    length: np.ndarray  # (n,) total real tokens
    n_elem: np.ndarray  # (n,) tokens in the element segment (SEP + text)
    bucket: np.ndarray  # (n, 4) coordinate buckets
    labels: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def take(self, idx: np.ndarray) -> PairBatch:
        return PairBatch(
            self.tokens[idx],
            self.mask[idx],
            self.length[idx],
            self.n_elem[idx],
            self.bucket[idx],
            None if self.labels is None else self.labels[idx],
        )


def encode_inputs(
    model: ScorerModel,
    phrases: Sequence[str],
    elements: Sequence[UIElement],
    labels: Sequence[int] | None = None,
) -> PairBatch:
    """Token ids and coordinate buckets for a list of (command, element) pairs.

    The SEP token belongs to the element segment, so an element with empty
    text still contributes its position to a layout-aware model.
    """
    cache: dict[str, list[int]] = {}
    seqs, n_elem = [], []
    for phrase, el in zip(phrases, elements):
        if phrase not in cache:
            cache[phrase] = tokenize(phrase, model.vocab)
        cmd = cache[phrase]
        if not cmd:
            raise EmptyCommand(f"command {phrase!r} has no tokens")
        el_tokens = tokenize(el.text, model.vocab)
        seqs.append(cmd + [model.vocab.sep] + el_tokens)
        n_elem.append(1 + len(el_tokens))
    n = len(seqs)
    width = max((len(s) for s in seqs), default=1)
    tokens = np.zeros((n, width), dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
    lengths = np.array([len(s) for s in seqs], dtype=np.float64)
    mask = (np.arange(width)[None, :] < lengths[:, None]).astype(np.float64)
    bucket = np.array(
        [[coord_bucket(v, model.buckets) for v in el.bbox.as_list()] for el in elements],
        dtype=np.int64,
    ).reshape(n, 4)
    return PairBatch(
        tokens,
        mask,
        lengths,
        np.array(n_elem, dtype=np.float64),
        bucket,
        None if labels is None else np.asarray(labels, dtype=np.int64),
    )


def _token_counts(batch: PairBatch, vocab_size: int) -> np.ndarray:
    """(n, V) matrix of token occurrence counts, PAD excluded."""
    n, width = batch.tokens.shape
    flat = (np.arange(n)[:, None] * vocab_size + batch.tokens).ravel()
    counts = np.bincount(flat, weights=batch.mask.ravel(), minlength=n * vocab_size)
    counts = counts.reshape(n, vocab_size)
    counts[:, 0] = 0.0
    return counts


def _one_hot(idx: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((idx.shape[0], size))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def _pool(params: nn.Params, batch: PairBatch, layout: bool):
    counts = _token_counts(batch, params["tok"].shape[0])
    pooled = counts @ params["tok"]
    hots = None
    if layout:
        buckets = params["x0"].shape[0]
        hots = [_one_hot(batch.bucket[:, k], buckets) for k in range(4)]
        coord = sum(h @ params[c] for h, c in zip(hots, COORDS))
        pooled = pooled + batch.n_elem[:, None] * coord
    return pooled / batch.length[:, None], counts, hots


def _forward(params: nn.Params, batch: PairBatch, layout: bool):
    x, counts, hots = _pool(params, batch, layout)
    logits, acts = nn.mlp_forward(params, x, 2, prefix="head.")
    return logits, acts, counts, hots


def loss_and_grads(
    params: nn.Params, batch: PairBatch, layout: bool
) -> tuple[float, nn.Params]:
    logits, acts, counts, hots = _forward(params, batch, layout)
    loss, dlogits = nn.cross_entropy(logits, batch.labels)
    grads, dx = nn.mlp_backward(params, acts, dlogits, 2, prefix="head.")
    dx = dx / batch.length[:, None]
    grads["tok"] = (counts.T @ dx).astype(params["tok"].dtype)
    if layout:
        dcoord = dx * batch.n_elem[:, None]
        for h, c in zip(hots, COORDS):
            grads[c] = (h.T @ dcoord).astype(params[c].dtype)
    return loss, grads


def representations(model: ScorerModel, batch: PairBatch) -> np.ndarray:
    """Hidden activations of the pair head, one row per pair."""
    _, acts, _, _ = _forward(model.params, batch, model.layout)
    return acts[1]


def encode_pair(model: ScorerModel, command_phrase: str, element: UIElement) -> np.ndarray:
    return representations(model, encode_inputs(model, [command_phrase], [element]))[0]


@dataclass(frozen=True)
class Score:
    logits: np.ndarray
    probability: float  # p(relevant)
    relevance: float  # logit(relevant) - logit(irrelevant)


def score(model: ScorerModel, representation: np.ndarray) -> Score:
    rep = np.asarray(representation)
    if rep.shape[-1] != model.dim:
        raise DimensionMismatch(f"representation has dim {rep.shape[-1]}, model expects {model.dim}")
    logits = rep @ model.params["head.W1"] + model.params["head.b1"]
    prob = nn.softmax(logits.astype(np.float64))
    return Score(logits, float(prob[..., 1]), float(logits[..., 1] - logits[..., 0]))


def relevance_scores(model: ScorerModel, phrase: str, elements: Sequence[UIElement]) -> np.ndarray:
    batch = encode_inputs(model, [phrase] * len(elements), elements)
    logits = _forward(model.params, batch, model.layout)[0]
    return logits[:, 1] - logits[:, 0]


def ground(model: ScorerModel, screen: Screen, command: Command) -> str:
    """Element id with the highest relevance score; ties go to the lowest index."""
    if len(screen.elements) == 0:
        raise EmptyScreen(f"screen {screen.id} has no elements")
    if len(screen.elements) == 1:
        return screen.elements[0].id
    s = relevance_scores(model, command.phrase, screen.elements)
    return screen.elements[int(np.argmax(s))].id


def pair_probabilities(model: ScorerModel, screen: Screen, command: Command) -> np.ndarray:
    batch = encode_inputs(model, [command.phrase] * len(screen.elements), screen.elements)
    logits = _forward(model.params, batch, model.layout)[0]
    return nn.softmax(logits.astype(np.float64))[:, 1]


# ---------------------------------------------------------------------------
# training


def pair_batch(model: ScorerModel, corpus: Corpus, pairs: Sequence[PairInstance]) -> PairBatch:
    phrases, elements, labels = [], [], []
    for p in pairs:
        cmd = corpus.command(p.command_id)
        screen = corpus.screens[cmd.screen_id]
        phrases.append(cmd.phrase)
        elements.append(screen.element(p.element_id))
        labels.append(p.label)
    return encode_inputs(model, phrases, elements, labels)


@dataclass
class TrainResult:
    model: ScorerModel
    losses: list[float]


def train(
    model: ScorerModel,
    pairs: Sequence[PairInstance],
    cfg: TrainConfig,
    corpus: Corpus,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Mini-batch SGD on pair cross-entropy. Returns per-epoch mean loss.

    ``on_epoch(epoch, loss)`` is called after each epoch, 1-based.
    """
    if not pairs:
        raise EmptyDataset("no training pairs")
    data = pair_batch(model, corpus, pairs)
    rng = np.random.default_rng(cfg.seed)
    opt = nn.SGD(cfg.learning_rate)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = data.take(order[start : start + cfg.batch_size])
            # divergence is reported as NonFiniteLoss below, not as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(model.params, batch, model.layout)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(f"loss became {loss} in epoch {epoch + 1}")
                opt.step(model.params, grads)
            total += loss * len(batch)
            count += len(batch)
        losses.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch + 1, losses[-1])
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise NonFiniteLoss(f"parameter {name} is not finite after training")
    return TrainResult(model, losses)


def mean_loss(model: ScorerModel, batch: PairBatch) -> float:
    loss, _ = loss_and_grads(model.params, batch, model.layout)
    return loss


def grad_check(
    model: ScorerModel,
    pair_batch: PairBatch,
    epsilon: float = 1e-5,
    n_samples: int = 100,
    seed: int = 0,
    grad_fn=None,
) -> float:
    """Max relative error of analytic vs. central-difference gradients.

    Runs on a float64 copy. Embedding rows the batch never touches have zero
    gradient both ways, so sampling is restricted to rows that are used.
    ``grad_fn`` swaps in another gradient routine (used to test the checker).
    """
    work = model.copy(np.float64)
    layout = work.layout
    fn = grad_fn or loss_and_grads

    def closure(params):
        return fn(params, pair_batch, layout)

    d = work.dim
    used = np.unique(pair_batch.tokens[pair_batch.mask > 0])
    candidates = {"tok": (used[:, None] * d + np.arange(d)[None, :]).ravel()}
    if layout:
        for k, c in enumerate(COORDS):
            rows = np.unique(pair_batch.bucket[:, k])
            candidates[c] = (rows[:, None] * d + np.arange(d)[None, :]).ravel()
    return nn.check_gradients(work.params, closure, epsilon, n_samples, seed, candidates)


# ---------------------------------------------------------------------------
# checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a32 = np.ascontiguousarray(a, dtype="<f4")
    return {"shape": list(a32.shape), "dtype": "float32", "data": base64.b64encode(a32.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "float32":
        raise SchemaMismatch(f"unsupported dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f4").reshape(d["shape"]).astype(np.float32)


def checkpoint_json(model: ScorerModel) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind.value,
        "dim": model.dim,
        "buckets": model.buckets,
        "seed": model.seed,
        "max_tokens": MAX_TOKENS,
        "vocab": model.vocab.tokens,
        "params": {k: _encode_array(v) for k, v in sorted(model.params.items())},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(model: ScorerModel, path: str | Path) -> Path:
    return _io.atomic_write(path, checkpoint_json(model))


def load_checkpoint(path: str | Path) -> ScorerModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise SchemaMismatch(f"{path}: not a scorer checkpoint")
        vocab = Vocab(doc["vocab"][3:])
        params = {k: _decode_array(v) for k, v in doc["params"].items()}
        return ScorerModel(
            ModelKind(doc["kind"]), vocab, params, int(doc["dim"]), int(doc["buckets"]), int(doc["seed"])
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaMismatch(f"{path}: bad checkpoint: {exc}") from exc


# ---------------------------------------------------------------------------
# representation files

BBOX_COLUMNS = ("x0", "x1", "y0", "y1")
TARGET_COLUMNS = ("target_x0", "target_x1", "target_y0", "target_y1")
ID_COLUMNS = ("command_id", "element_id", "target_id")
EXTRA_COLUMNS = ("reasoning", "label", "split")


def representation_header(dim: int) -> list[str]:
    return [*ID_COLUMNS, *EXTRA_COLUMNS, *BBOX_COLUMNS, *TARGET_COLUMNS, *(f"v{i}" for i in range(dim))]


def export_representations(
    model: ScorerModel,
    corpus: Corpus,
    pairs: Sequence[PairInstance],
    path: str | Path,
    batch_size: int = 2048,
) -> int:
    """Write one CSV row per pair: ids, geometry and the d-dim representation."""
    rows = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        reps = representations(model, pair_batch(model, corpus, chunk))
        for p, v in zip(chunk, reps):
            cmd = corpus.command(p.command_id)
            screen = corpus.screens[cmd.screen_id]
            el = screen.element(p.element_id)
            target = screen.element(cmd.target_id)
            rows.append(
                [
                    p.command_id,
                    p.element_id,
                    cmd.target_id,
                    cmd.reasoning.value,
                    p.label,
                    p.split.value if p.split else "",
                    *el.bbox.as_list(),
                    *target.bbox.as_list(),
                    *(float(x) for x in np.asarray(v, dtype=np.float32)),
                ]
            )
    _io.atomic_write(path, _io.csv_text(representation_header(model.dim), rows))
    return len(rows)
