"""Dual-CNN matcher for ⟨question ⊕ clarifying question, answer⟩ pairs.

Each side is embedded into a ``d × L`` sentence matrix, convolved with filter
banks of several widths, passed through ReLU and max-pooled over time. The
pooled features of both sides are concatenated and fed to a fully connected
ReLU layer and a softmax over the label classes. Candidate answers are ranked
by a weighted combination of the class probabilities.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Protocol

import numpy as np
from tqdm import tqdm

from .labeling import Label, LabeledQAPair
from .neural import (
    NonFiniteError,
    Params,
    affine_backward,
    affine_forward,
    check_finite,
    clip_grad_norm,
    conv_bank_backward,
    conv_bank_forward,
    init_uniform,
    load_checkpoint,
    max_pool_backward,
    max_pool_forward,
    relu_backward,
    relu_forward,
    save_checkpoint,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    zeros_like_params,
)
from .retrieval import PAD_ID, EmbeddingMatrix, Vocabulary
from .training_log import TrainingRecorder
from .util import atomic_write_text, dumps_record

__all__ = [
    "ClassDistribution",
    "RankerBatch",
    "RankerHyperparams",
    "RankerParams",
    "ScoreWeights",
    "TrainingExample",
    "ablate",
    "accuracy",
    "class_histogram",
    "distributions",
    "encode_examples",
    "forward",
    "loss_and_grads",
    "match_score",
    "rank_by_scores",
    "rank_candidates",
    "sentence_matrix",
    "train",
    "training_examples",
    "tune_weights",
    "tune_weights_from_distributions",
    "weight_grid",
]

logger = logging.getLogger(__name__)

MODEL_NAME = "ranker"
BRANCHES = ("q", "a")


def _he_scale(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


@dataclass(frozen=True)
class RankerHyperparams:
    dim: int = 100
    maps: int = 100
    widths: tuple[int, ...] = (3, 4, 5)
    q_max_len: int = 40
    a_max_len: int = 100
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.01
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 0
    shared_branches: bool = False
    drop_cq: bool = False
    drop_labeling: bool = False

    def __post_init__(self):
        if min(self.q_max_len, self.a_max_len) < max(self.widths):
            raise ValueError(
                f"Maximum lengths ({self.q_max_len}, {self.a_max_len}) must be at least the "
                f"largest filter width {max(self.widths)}"
            )

    @property
    def n_classes(self) -> int:
        return 2 if self.drop_labeling else len(Label)

    @property
    def features(self) -> int:
        return len(BRANCHES) * len(self.widths) * self.maps

    def prefix(self, branch: str) -> str:
        return "q" if self.shared_branches else branch

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> RankerHyperparams:
        known = {k: v for k, v in record.items() if k in cls.__dataclass_fields__}
        known["widths"] = tuple(known.get("widths", (3, 4, 5)))
        return cls(**known)


@dataclass(frozen=True)
class RankerParams:
    """Ranker weights.

    ``tensors`` holds ``embed``; ``{q,a}_conv{m}_w`` ``(maps, d, m)`` and
    ``{q,a}_conv{m}_b`` per filter width (only the ``q`` bank when branches are
    shared); ``fc_w``/``fc_b``; and the output layer ``out_w``/``out_b``.
    """

    vocab: Vocabulary
    tensors: Params
    hyperparams: RankerHyperparams = field(default_factory=RankerHyperparams)

    @classmethod
    def init(
        cls,
        vocab: Vocabulary,
        hyperparams: RankerHyperparams,
        rng: np.random.Generator,
        embeddings: EmbeddingMatrix | None = None,
    ) -> RankerParams:
        hp = hyperparams
        tensors: Params = {"embed": init_uniform(rng, (len(vocab), hp.dim))}
        if embeddings is not None and embeddings.dim == hp.dim:
            tensors["embed"] = embeddings.vectors.astype(np.float32).copy()
        tensors["embed"][PAD_ID] = 0.0
        # He-uniform for the ReLU layers; embeddings and the output layer keep the default scale.
        for branch in dict.fromkeys(hp.prefix(b) for b in BRANCHES):
            for m in hp.widths:
                tensors[f"{branch}_conv{m}_w"] = init_uniform(rng, (hp.maps, hp.dim, m), _he_scale(hp.dim * m))
                tensors[f"{branch}_conv{m}_b"] = np.zeros(hp.maps, dtype=np.float32)
        tensors["fc_w"] = init_uniform(rng, (hp.features, hp.features), _he_scale(hp.features))
        tensors["fc_b"] = np.zeros(hp.features, dtype=np.float32)
        tensors["out_w"] = init_uniform(rng, (hp.n_classes, hp.features))
        tensors["out_b"] = np.zeros(hp.n_classes, dtype=np.float32)
        return cls(vocab, tensors, hp)

    def copy(self) -> RankerParams:
        return RankerParams(self.vocab, {k: v.copy() for k, v in self.tensors.items()}, self.hyperparams)

    def save(self, path: Path | str) -> Path:
        meta = asdict(self.hyperparams)
        meta["vocab_size"] = len(self.vocab)
        return save_checkpoint(path, MODEL_NAME, meta, self.tensors)

    @classmethod
    def load(cls, path: Path | str, vocab: Vocabulary) -> RankerParams:
        meta, tensors = load_checkpoint(path, MODEL_NAME)
        if meta["vocab_size"] != len(vocab):
            raise ValueError(f"{path} was trained with {meta['vocab_size']} tokens, vocabulary has {len(vocab)}")
        return cls(vocab, tensors, RankerHyperparams.from_record(meta))


@dataclass(frozen=True)
class ScoreWeights:
    """Weights of the matching score: positive classes add, negative classes subtract."""

    pos: float = 1.0
    neu_plus: float = 1.0
    neu_minus: float = 1.0
    neg: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not 0.0 <= value <= 10.0:
                raise ValueError(f"Score weight {name}={value} outside [0, 10]")

    def signed(self) -> np.ndarray:
        return np.array([self.pos, self.neu_plus, -self.neu_minus, -self.neg])

    def to_record(self) -> dict[str, float]:
        return asdict(self)

    def save(self, path: Path | str) -> Path:
        return atomic_write_text(path, dumps_record(self.to_record()) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> ScoreWeights:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ClassDistribution:
    """``(p_pos, p_neu_plus, p_neu_minus, p_neg)``; a binary head fills only the outer two."""

    p_pos: float
    p_neu_plus: float
    p_neu_minus: float
    p_neg: float

    def __post_init__(self):
        values = self.as_array()
        if np.any(values < 0) or abs(values.sum() - 1.0) > 1e-6:
            raise ValueError(f"Not a probability distribution: {values.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_pos, self.p_neu_plus, self.p_neu_minus, self.p_neg])

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> ClassDistribution:
        probs = [float(p) for p in probs]
        if len(probs) == 2:
            probs = [probs[0], 0.0, 0.0, probs[1]]
        return cls(*probs)


def match_score(dist: ClassDistribution, w: ScoreWeights) -> float:
    return float(dist.as_array() @ w.signed())


# --------------------------------------------------------------------------- model


def _ids(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> np.ndarray:
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    encoded = vocab.encode(tokens[:max_len])
    ids[: len(encoded)] = encoded
    return ids


def _embed(embed: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """``(B, L)`` ids to ``(B, d, L)`` sentence matrices with all-zero PAD columns."""
    x = embed[ids] * (ids != PAD_ID)[..., None]
    return x.transpose(0, 2, 1)


def sentence_matrix(
    tokens: Sequence[str], embed: np.ndarray, vocab: Vocabulary, max_len: int
) -> np.ndarray:
    """``d × max_len`` matrix whose columns are the token embeddings, zero-padded or truncated."""
    if max_len < 5:
        raise ValueError(f"max_len must be at least 5, got {max_len}")
    return _embed(embed, _ids(tokens, vocab, max_len)[None])[0]


@dataclass(frozen=True)
class RankerBatch:
    q_ids: np.ndarray
    a_ids: np.ndarray
    labels: np.ndarray
    hyperparams: RankerHyperparams


def _forward(p: Params, q_ids: np.ndarray, a_ids: np.ndarray, hp: RankerHyperparams):
    pooled, caches = [], []
    for branch, ids in zip(BRANCHES, (q_ids, a_ids)):
        x = _embed(p["embed"], ids)
        prefix = hp.prefix(branch)
        for m in hp.widths:
            conv, conv_cache = conv_bank_forward(x, p[f"{prefix}_conv{m}_w"], p[f"{prefix}_conv{m}_b"])
            act, relu_mask = relu_forward(conv)
            feature, pool_cache = max_pool_forward(act)
            pooled.append(feature)
            caches.append((branch, ids, m, conv_cache, relu_mask, pool_cache))
    joined = np.concatenate(pooled, axis=1)
    hidden_pre, fc_cache = affine_forward(joined, p["fc_w"], p["fc_b"])
    hidden, hidden_mask = relu_forward(hidden_pre)
    logits, out_cache = affine_forward(hidden, p["out_w"], p["out_b"])
    check_finite(logits, "logits", "ranker forward")
    return logits, (caches, fc_cache, hidden_mask, out_cache)


def loss_and_grads(p: Params, batch: RankerBatch) -> tuple[float, Params]:
    """Mean cross-entropy of a batch and its gradient."""
    hp = batch.hyperparams
    logits, (caches, fc_cache, hidden_mask, out_cache) = _forward(p, batch.q_ids, batch.a_ids, hp)
    loss, _, dlogits = softmax_cross_entropy(logits, batch.labels)
    grads = zeros_like_params(p)
    dhidden, grads["out_w"], grads["out_b"] = affine_backward(dlogits, out_cache)
    djoined, grads["fc_w"], grads["fc_b"] = affine_backward(relu_backward(dhidden, hidden_mask), fc_cache)
    for i, (branch, ids, m, conv_cache, relu_mask, pool_cache) in enumerate(caches):
        dpool = djoined[:, i * hp.maps : (i + 1) * hp.maps]
        dconv = relu_backward(max_pool_backward(dpool, pool_cache), relu_mask)
        dx, dw, db = conv_bank_backward(dconv, conv_cache)
        prefix = hp.prefix(branch)
        grads[f"{prefix}_conv{m}_w"] += dw
        grads[f"{prefix}_conv{m}_b"] += db
        demb = dx.transpose(0, 2, 1) * (ids != PAD_ID)[..., None]
        np.add.at(grads["embed"], ids, demb)
    grads["embed"][PAD_ID] = 0.0
    return loss, grads


def _predict(params: RankerParams, q_ids: np.ndarray, a_ids: np.ndarray) -> np.ndarray:
    logits, _ = _forward(params.tensors, q_ids, a_ids, params.hyperparams)
    return softmax(logits)


def forward(q_joined: Sequence[str], a_tokens: Sequence[str], params: RankerParams) -> ClassDistribution:
    """Class distribution for one ⟨question, answer⟩ pair."""
    hp = params.hyperparams
    q_ids = _ids(q_joined, params.vocab, hp.q_max_len)[None]
    a_ids = _ids(a_tokens, params.vocab, hp.a_max_len)[None]
    return ClassDistribution.from_probs(_predict(params, q_ids, a_ids)[0])


def distributions(
    q_joined: Sequence[str], answers: Sequence[Sequence[str]], params: RankerParams
) -> np.ndarray:
    """``(len(answers), 4)`` class probabilities, each pair scored on its own."""
    return np.stack([forward(q_joined, a, params).as_array() for a in answers]) if answers else np.zeros((0, 4))


def rank_by_scores(scored: Iterable[tuple[int, float]]) -> list[tuple[int, float]]:
    """Descending by score; ties by ascending answer id."""
    return sorted(((int(aid), float(s)) for aid, s in scored), key=lambda item: (-item[1], item[0]))


def rank_candidates(
    q_joined: Sequence[str],
    candidates: Sequence[tuple[int, Sequence[str]]],
    params: RankerParams,
    w: ScoreWeights,
) -> list[tuple[int, float]]:
    dists = distributions(q_joined, [tokens for _, tokens in candidates], params)
    scores = dists @ w.signed()
    return rank_by_scores(zip((aid for aid, _ in candidates), scores))


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainingExample:
    q_tokens: list[str]
    a_tokens: list[str]
    label: int


def training_examples(pairs: Iterable[LabeledQAPair], hyperparams: RankerHyperparams) -> list[TrainingExample]:
    """Apply the ablation switches to labeled pairs.

    ``drop_cq`` uses the bare question; ``drop_labeling`` collapses every
    non-Positive class into a single negative class.
    """
    examples = []
    for pair in pairs:
        label = int(pair.label)
        if hyperparams.drop_labeling:
            label = 0 if pair.label is Label.POSITIVE else 1
        examples.append(TrainingExample(pair.question(hyperparams.drop_cq), pair.a_tokens, label))
    return examples


def class_histogram(examples: Iterable[TrainingExample]) -> dict[int, int]:
    return dict(sorted(Counter(e.label for e in examples).items()))


def ablate(
    hyperparams: RankerHyperparams, drop_cq: bool = False, drop_labeling: bool = False
) -> RankerHyperparams:
    """Training configuration for an ablation run."""
    return replace(hyperparams, drop_cq=drop_cq, drop_labeling=drop_labeling)


def encode_examples(examples: Sequence[TrainingExample], vocab: Vocabulary, hp: RankerHyperparams) -> RankerBatch:
    if not examples:
        empty = np.zeros((0, 1), dtype=np.int64)
        return RankerBatch(empty, empty, np.zeros(0, dtype=np.int64), hp)
    return RankerBatch(
        np.stack([_ids(e.q_tokens, vocab, hp.q_max_len) for e in examples]),
        np.stack([_ids(e.a_tokens, vocab, hp.a_max_len) for e in examples]),
        np.asarray([e.label for e in examples], dtype=np.int64),
        hp,
    )


def _batch_slice(data: RankerBatch, index: np.ndarray) -> RankerBatch:
    return RankerBatch(data.q_ids[index], data.a_ids[index], data.labels[index], data.hyperparams)


def _accuracy(params: RankerParams, data: RankerBatch, chunk: int = 256) -> float:
    if len(data.labels) == 0:
        return float("nan")
    correct = 0
    for start in range(0, len(data.labels), chunk):
        part = _batch_slice(data, np.arange(start, min(start + chunk, len(data.labels))))
        correct += int(np.sum(np.argmax(_predict(params, part.q_ids, part.a_ids), axis=1) == part.labels))
    return correct / len(data.labels)


def accuracy(params: RankerParams, examples: Sequence[TrainingExample]) -> float:
    """Fraction of examples whose most probable class is the label."""
    return _accuracy(params, encode_examples(examples, params.vocab, params.hyperparams))


def _all_finite(params: RankerParams) -> None:
    for name, tensor in params.tensors.items():
        check_finite(tensor, name, "ranker update")


def train(
    train_pairs: Sequence[LabeledQAPair],
    val_pairs: Sequence[LabeledQAPair],
    vocab: Vocabulary,
    hyperparams: RankerHyperparams = RankerHyperparams(),
    embeddings: EmbeddingMatrix | None = None,
    recorder: TrainingRecorder | None = None,
) -> RankerParams:
    """Mini-batch SGD on cross-entropy, early-stopped on validation accuracy.

    Without validation pairs the training accuracy drives early stopping. The
    parameters of the best epoch are returned. An epoch that produces a
    non-finite loss, gradient or weight ends training; the last finite best
    parameters are kept.
    """
    hp = hyperparams
    train_set = encode_examples(training_examples(train_pairs, hp), vocab, hp)
    val_set = encode_examples(training_examples(val_pairs, hp), vocab, hp)
    if len(train_set.labels) == 0:
        raise ValueError("No labeled pairs to train the ranker on")
    distinct = len(set(train_set.labels.tolist()))
    if distinct < hp.n_classes:
        logger.warning("Only %d of %d classes occur in the ranker training data", distinct, hp.n_classes)
    rng = np.random.default_rng(hp.seed)
    params = RankerParams.init(vocab, hp, rng, embeddings)
    best, best_acc, best_epoch, stale = params.copy(), -1.0, -1, 0
    logger.info("Training ranker on %d pairs (%d validation)", len(train_set.labels), len(val_set.labels))
    for epoch in tqdm(range(hp.epochs), desc="ranker", unit=" epoch", disable=None):
        order = rng.permutation(len(train_set.labels))
        losses = []
        try:
            for start in range(0, len(order), hp.batch_size):
                batch = _batch_slice(train_set, order[start : start + hp.batch_size])
                loss, grads = loss_and_grads(params.tensors, batch)
                check_finite(loss, "loss", "ranker forward")
                losses.append(loss * len(batch.labels))
                norm = clip_grad_norm(grads, hp.clip_norm)
                check_finite(norm, "gradient norm", "ranker backward")
                sgd_step(params.tensors, grads, hp.lr)
            _all_finite(params)
            val_acc = _accuracy(params, val_set) if len(val_set.labels) else _accuracy(params, train_set)
        except NonFiniteError as exc:
            logger.warning(
                "Ranker diverged in epoch %d (%s); keeping the parameters of epoch %d", epoch, exc, best_epoch
            )
            break
        train_loss = float(np.sum(losses) / len(order))
        logger.debug("ranker epoch %d: loss %.4f, validation accuracy %.4f", epoch, train_loss, val_acc)
        if recorder is not None:
            recorder.log_epoch(epoch, train_loss=train_loss, val_accuracy=val_acc)
        if val_acc > best_acc:
            best, best_acc, best_epoch, stale = params.copy(), val_acc, epoch, 0
        else:
            stale += 1
            if stale >= hp.patience:
                logger.info("ranker early stop after epoch %d", epoch)
                break
    logger.info("ranker best validation accuracy %.4f (epoch %d)", best_acc, best_epoch)
    return best


# --------------------------------------------------------------------------- weight tuning


def weight_grid() -> list[float]:
    """0.01 steps on [0, 0.1], 0.1 steps on [0.1, 1], unit steps on [1, 10]."""
    fine = [round(0.01 * i, 2) for i in range(11)]
    medium = [round(0.1 * i, 1) for i in range(2, 11)]
    coarse = [float(i) for i in range(2, 11)]
    return fine + medium + coarse


# Coordinate sweep order of the weight tuner.
SWEEP_ORDER = ("neg", "neu_minus", "neu_plus", "pos")


class _Pool(Protocol):
    query: list[str]
    candidates: list[tuple[int, list[str]]]
    accepted_aid: int


ScoredPool = tuple[np.ndarray, np.ndarray, int]


def _precision_at_1(pools: Sequence[ScoredPool], w: ScoreWeights) -> float:
    signed = w.signed()
    hits = 0
    for aids, dists, accepted in pools:
        scores = dists @ signed
        top = np.lexsort((aids, -scores))[0]
        hits += int(aids[top] == accepted)
    return hits / len(pools)


def tune_weights_from_distributions(pools: Sequence[ScoredPool]) -> ScoreWeights:
    """Coordinate grid search maximizing P@1 over precomputed class distributions.

    ``pools`` holds ``(answer ids, (k, 4) distributions, accepted answer id)``.
    Each weight is swept once, in :data:`SWEEP_ORDER`, from ``(1, 1, 1, 1)``.
    A weight moves only to a strictly better value; among equally good
    better values the smallest wins.
    """
    weights = ScoreWeights()
    if not pools:
        return weights
    for name in SWEEP_ORDER:
        best_value = getattr(weights, name)
        best_objective = _precision_at_1(pools, weights)
        for value in weight_grid():
            objective = _precision_at_1(pools, replace(weights, **{name: value}))
            if objective > best_objective:
                best_value, best_objective = value, objective
        weights = replace(weights, **{name: best_value})
        logger.debug("Weight %s -> %s (P@1 %.4f)", name, best_value, best_objective)
    return weights


def tune_weights(params: RankerParams, pools: Sequence[_Pool]) -> ScoreWeights:
    """Grid-search the score weights for validation P@1 on ``pools``."""
    scored = []
    for pool in pools:
        aids = np.asarray([aid for aid, _ in pool.candidates], dtype=np.int64)
        dists = distributions(pool.query, [tokens for _, tokens in pool.candidates], params)
        scored.append((aids, dists, pool.accepted_aid))
    weights = tune_weights_from_distributions(scored)
    logger.info("Tuned score weights: %s", weights.to_record())
    return weights
