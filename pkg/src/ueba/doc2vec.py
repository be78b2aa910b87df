"""Paragraph vectors trained with the distributed bag-of-words objective.

Each document owns a vector ``d``; every word owns an output vector ``w``.
One update round on a document samples, for every anchor position, up to
``window`` target tokens uniformly from the document, and for each target
draws ``negative`` noise tokens from the unigram^0.75 distribution. The
logistic loss

    -log sigmoid(d . w_target) - sum_neg log sigmoid(-d . w_neg)

is reduced by one SGD step on ``d`` and on the touched ``w`` rows. All
targets of a round share the same ``d`` (a batched round), so a round is a
handful of numpy ops rather than a Python loop over tokens.

Unseen documents are embedded by :func:`infer_vector`: the same rounds with
the word vectors frozen, starting from a vector seeded by the token content.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NonFiniteError
from .seeds import child_seed

log = logging.getLogger(__name__)

MIN_ALPHA_RATIO = 1e-4
INFER_CHUNK = 256


@dataclass(frozen=True)
class Doc2VecParams:
    dim: int = 64
    window: int = 5
    epochs: int = 20
    negative: int = 5
    alpha: float = 0.025
    min_count: int = 1
    infer_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 1 or self.negative < 1 or self.window < 1:
            raise ConfigError("dim, epochs, negative and window must all be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: np.ndarray
    index: dict[str, int] = field(init=False)
    noise_cdf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        weights = self.counts.astype(np.float64) ** 0.75
        self.noise_cdf = np.cumsum(weights / weights.sum())
        self.noise_cdf[-1] = 1.0

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def noise_distribution(self) -> np.ndarray:
        return np.diff(self.noise_cdf, prepend=0.0)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index[t] for t in tokens if t in self.index], dtype=np.int64)

    def sample_noise(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.searchsorted(self.noise_cdf, rng.random(size), side="right").clip(0, len(self) - 1)

    def dumps(self) -> str:
        return "".join(f"{t}\t{int(c)}\t{i}\n" for i, (t, c) in enumerate(zip(self.tokens, self.counts)))

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        rows = [line.split("\t") for line in text.splitlines() if line]
        rows.sort(key=lambda r: int(r[2]))
        return cls([r[0] for r in rows], np.array([int(r[1]) for r in rows], dtype=np.int64))


def build_vocab(corpus: Sequence[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Count tokens; index order is descending count, ties broken lexicographically."""
    if not corpus:
        raise ValueError("corpus is empty")
    counts = Counter(t for doc in corpus for t in doc)
    kept = sorted(((t, c) for t, c in counts.items() if c >= min_count), key=lambda tc: (-tc[1], tc[0]))
    if not kept:
        raise ValueError(f"no token reaches min_count={min_count}")
    return Vocabulary([t for t, _ in kept], np.array([c for _, c in kept], dtype=np.int64))


@dataclass
class Doc2VecHistory:
    epoch_loss: list[float] = field(default_factory=list)
    skipped_docs: int = 0


@dataclass
class Doc2VecModel:
    doc_vectors: np.ndarray
    word_vectors: np.ndarray  # output (context) vectors, one row per vocabulary entry
    vocab: Vocabulary
    params: Doc2VecParams
    history: Doc2VecHistory = field(default_factory=Doc2VecHistory)

    @property
    def dim(self) -> int:
        return self.params.dim


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _draw_round(rng: np.random.Generator, n_tokens: int, window: int, negative: int, vocab: Vocabulary):
    """Target positions (T,) and negative word ids (T, k) for one update round."""
    per_anchor = min(window, n_tokens)
    targets = rng.integers(0, n_tokens, size=n_tokens * per_anchor)
    negs = vocab.sample_noise(rng, (targets.size, negative))
    return targets, negs


def _init_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    return (rng.random(dim) - 0.5) / dim


def dbow_round(d: np.ndarray, words: np.ndarray, targets: np.ndarray, negatives: np.ndarray, alpha: float):
    """One batched negative-sampling step.

    ``targets`` holds T word ids and ``negatives`` a (T, k) array of noise
    ids. ``words`` is updated in place; returns ``(loss_before, new_d)``
    where the loss is summed over the T targets.
    """
    d = np.array(d, dtype=np.float64)
    w_pos = words[targets]
    w_neg = words[negatives]
    s_pos = w_pos @ d
    s_neg = w_neg @ d
    # a noise draw equal to its own target carries no signal
    mask = negatives != targets[:, None]
    loss = -float(_log_sigmoid(s_pos).sum() + (_log_sigmoid(-s_neg) * mask).sum())
    g_pos = alpha * (1.0 - _sigmoid(s_pos))
    g_neg = -alpha * _sigmoid(s_neg) * mask
    new_d = d + g_pos @ w_pos + np.einsum("tk,tkd->d", g_neg, w_neg)
    np.add.at(words, targets, g_pos[:, None] * d)
    np.add.at(words, negatives.ravel(), g_neg.ravel()[:, None] * d)
    return loss, new_d


def train_dbow(corpus: Sequence[Sequence[str]], params: Doc2VecParams = Doc2VecParams()) -> Doc2VecModel:
    """Train document and word-output vectors on ``corpus`` (one token list per document)."""
    vocab = build_vocab(corpus, params.min_count)
    rng = np.random.default_rng(child_seed(params.seed, "dbow-train"))
    dim = params.dim
    docs = [vocab.encode(doc) for doc in corpus]
    doc_vecs = np.stack([_init_vector(rng, dim) for _ in docs]) if docs else np.zeros((0, dim))
    words = np.zeros((len(vocab), dim))
    history = Doc2VecHistory(skipped_docs=sum(1 for d in docs if d.size == 0))
    if history.skipped_docs:
        log.info("skipping %d empty documents", history.skipped_docs)
    live = [i for i, d in enumerate(docs) if d.size]
    for i in set(range(len(docs))) - set(live):
        doc_vecs[i] = 0.0

    total = params.epochs * max(len(live), 1)
    step = 0
    for epoch in range(params.epochs):
        losses, n_terms = 0.0, 0
        for i in live:
            alpha = params.alpha * (1.0 - (1.0 - MIN_ALPHA_RATIO) * step / total)
            step += 1
            ids = docs[i]
            pos, negs = _draw_round(rng, ids.size, params.window, params.negative, vocab)
            loss, doc_vecs[i] = dbow_round(doc_vecs[i], words, ids[pos], negs, alpha)
            losses += loss
            n_terms += pos.size
        history.epoch_loss.append(losses / max(n_terms, 1))
        if not (np.all(np.isfinite(doc_vecs)) and np.all(np.isfinite(words))):
            raise NonFiniteError("doc2vec training diverged", epoch=epoch)
    return Doc2VecModel(doc_vecs, words, vocab, params, history)


def _inference_draws(model: Doc2VecModel, tokens: Sequence[str], steps: int):
    p = model.params
    rng = np.random.default_rng(child_seed(p.seed, "dbow-infer", "\x1f".join(tokens)))
    init = _init_vector(rng, p.dim)
    ids = model.vocab.encode(tokens)
    rounds = [_draw_round(rng, ids.size, p.window, p.negative, model.vocab) for _ in range(steps)] if ids.size else []
    return init, ids, rounds


def infer_vectors(model: Doc2VecModel, docs: Sequence[Sequence[str]], steps: int | None = None):
    """Embed documents with the word vectors frozen.

    Returns ``(vectors, degenerate)``: a ``(len(docs), dim)`` matrix and a
    boolean mask marking documents with no in-vocabulary token (their
    vector is zero). Each document's randomness is seeded by the model seed
    and its own tokens, so the result for a document does not depend on
    which other documents are in the batch.
    """
    steps = model.params.infer_steps if steps is None else steps
    if steps < 0:
        raise ValueError("steps must be >= 0")
    p = model.params
    out = np.zeros((len(docs), p.dim))
    degenerate = np.zeros(len(docs), dtype=bool)
    cache: dict[tuple, int] = {}
    groups: dict[int, list[int]] = {}
    draws = {}
    for i, doc in enumerate(docs):
        key = tuple(doc)
        if key in cache:
            continue
        cache[key] = i
        init, ids, rounds = _inference_draws(model, key, steps)
        if ids.size == 0:
            degenerate[i] = True
            continue
        draws[i] = (init, ids, rounds)
        groups.setdefault(ids.size, []).append(i)

    alphas = [p.alpha * (1.0 - (1.0 - MIN_ALPHA_RATIO) * s / steps) for s in range(steps)]
    for length, members in groups.items():
        for lo in range(0, len(members), INFER_CHUNK):
            chunk = members[lo : lo + INFER_CHUNK]
            d = np.stack([draws[i][0] for i in chunk])
            for s in range(steps):
                tgt = np.stack([draws[i][1][draws[i][2][s][0]] for i in chunk])  # (B, T)
                negs = np.stack([draws[i][2][s][1] for i in chunk])  # (B, T, k)
                w_pos = model.word_vectors[tgt]
                w_neg = model.word_vectors[negs]
                s_pos = np.einsum("btd,bd->bt", w_pos, d)
                s_neg = np.einsum("btkd,bd->btk", w_neg, d)
                mask = negs != tgt[..., None]
                g_pos = alphas[s] * (1.0 - _sigmoid(s_pos))
                g_neg = -alphas[s] * _sigmoid(s_neg) * mask
                d = d + np.einsum("bt,btd->bd", g_pos, w_pos) + np.einsum("btk,btkd->bd", g_neg, w_neg)
            out[chunk] = d
    for i, doc in enumerate(docs):
        src = cache[tuple(doc)]
        if src != i:
            out[i] = out[src]
            degenerate[i] = degenerate[src]
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("doc2vec inference diverged")
    return out, degenerate


def infer_vector(model: Doc2VecModel, tokens: Sequence[str], steps: int | None = None):
    """Single-document form of :func:`infer_vectors`; returns ``(vector, degenerate)``."""
    vecs, degenerate = infer_vectors(model, [tuple(tokens)], steps)
    return vecs[0], bool(degenerate[0])


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"cosine of vectors with shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


# ---------------------------------------------------------------------------
# persistence: manifest JSON + two little-endian float64 matrices + vocabulary text


def save_model(model: Doc2VecModel, directory, prefix: str = "doc2vec") -> list[Path]:
    directory = Path(directory)
    manifest = {
        "params": model.params.__dict__,
        "doc_shape": list(model.doc_vectors.shape),
        "word_shape": list(model.word_vectors.shape),
        "epoch_loss": model.history.epoch_loss,
        "skipped_docs": model.history.skipped_docs,
    }
    paths = {
        "json": directory / f"{prefix}.json",
        "docs": directory / f"{prefix}_docs.bin",
        "words": directory / f"{prefix}_words.bin",
        "vocab": directory / f"{prefix}_vocab.txt",
    }
    paths["json"].write_text(json.dumps(manifest, sort_keys=True, indent=1))
    paths["docs"].write_bytes(model.doc_vectors.astype("<f8").tobytes())
    paths["words"].write_bytes(model.word_vectors.astype("<f8").tobytes())
    paths["vocab"].write_text(model.vocab.dumps(), encoding="utf-8")
    return list(paths.values())


def load_model(directory, prefix: str = "doc2vec") -> Doc2VecModel:
    directory = Path(directory)
    manifest = json.loads((directory / f"{prefix}.json").read_text())
    docs = np.frombuffer((directory / f"{prefix}_docs.bin").read_bytes(), "<f8").reshape(manifest["doc_shape"])
    words = np.frombuffer((directory / f"{prefix}_words.bin").read_bytes(), "<f8").reshape(manifest["word_shape"])
    vocab = Vocabulary.loads((directory / f"{prefix}_vocab.txt").read_text(encoding="utf-8"))
    return Doc2VecModel(
        docs.astype(np.float64),
        words.astype(np.float64),
        vocab,
        Doc2VecParams(**manifest["params"]),
        Doc2VecHistory(manifest["epoch_loss"], manifest["skipped_docs"]),
    )
