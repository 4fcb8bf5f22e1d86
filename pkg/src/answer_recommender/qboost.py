"""Question boosting: generate a clarifying question for a title and append it.

The generator is an attentional encoder-decoder. A two-layer bidirectional
LSTM encodes the title; a bridge maps the last forward and first backward
state to the decoder's initial state; a single-layer LSTM decoder attends over
the top encoder layer at every step and predicts the next word from its state
and the attention context.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from tqdm import tqdm

from .corpus import ClarifyingQuestion, Post
from .neural import (
    LstmCellParams,
    Params,
    check_finite,
    clip_grad_norm,
    init_uniform,
    load_checkpoint,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_sequence_backward,
    lstm_sequence_forward,
    save_checkpoint,
    sgd_step,
    softmax,
    zeros_like_params,
)
from .retrieval import (
    BOS,
    BOS_ID,
    EOS,
    EOS_ID,
    PAD_ID,
    SEP,
    UNK,
    EmbeddingMatrix,
    IdfTable,
    TitleIndex,
    Vocabulary,
)
from .text import tokenize
from .training_log import TrainingRecorder

__all__ = [
    "BoostedQuestion",
    "CqRetriever",
    "EncoderOutput",
    "Hypothesis",
    "Seq2SeqHyperparams",
    "Seq2SeqParams",
    "beam_hypotheses",
    "beam_search",
    "boost",
    "boost_retrieved",
    "decode_step",
    "encode",
    "greedy_decode",
    "join_boosted",
    "loss_and_grads",
    "mean_loss",
    "sequence_log_prob",
    "train",
]

logger = logging.getLogger(__name__)

MODEL_NAME = "qboost"
ENCODER_LAYERS = 2


@dataclass(frozen=True)
class Seq2SeqHyperparams:
    dim: int = 100
    hidden: int = 256
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.01
    patience: int = 5
    clip_norm: float = 5.0
    max_title_len: int = 40
    seed: int = 0


@dataclass(frozen=True)
class Seq2SeqParams:
    """All weights of the boosting model.

    Attributes
    ----------
    vocab : Vocabulary
        Shared by the encoder input, decoder input and output layer.
    tensors : dict[str, np.ndarray]
        ``embed``; ``enc{layer}_{fw,bw}_{wx,wh,b}`` for both encoder layers;
        ``bridge_w``/``bridge_b``; ``dec_{wx,wh,b}``; attention
        ``att_v``/``att_wh``/``att_ws``/``att_b``; output ``out_w``/``out_b``.
    """

    vocab: Vocabulary
    tensors: Params

    @property
    def dim(self) -> int:
        return int(self.tensors["embed"].shape[1])

    @property
    def hidden(self) -> int:
        return int(self.tensors["bridge_b"].shape[0])

    @classmethod
    def init(
        cls,
        vocab: Vocabulary,
        dim: int,
        hidden: int,
        rng: np.random.Generator,
        embeddings: EmbeddingMatrix | None = None,
    ) -> Seq2SeqParams:
        if dim <= 0 or hidden <= 0:
            raise ValueError(f"dim and hidden must be positive, got {dim} and {hidden}")
        tensors: Params = {"embed": init_uniform(rng, (len(vocab), dim))}
        if embeddings is not None and embeddings.dim == dim:
            tensors["embed"] = embeddings.vectors.astype(np.float32).copy()
        tensors["embed"][PAD_ID] = 0.0
        input_size = dim
        for layer in range(ENCODER_LAYERS):
            for direction in ("fw", "bw"):
                cell = LstmCellParams.init(input_size, hidden, rng)
                tensors.update(cell.to_params(f"enc{layer}_{direction}"))
            input_size = 2 * hidden
        tensors["bridge_w"] = init_uniform(rng, (hidden, 2 * hidden))
        tensors["bridge_b"] = np.zeros(hidden, dtype=np.float32)
        tensors.update(LstmCellParams.init(dim, hidden, rng).to_params("dec"))
        tensors["att_v"] = init_uniform(rng, (hidden,))
        tensors["att_wh"] = init_uniform(rng, (hidden, 2 * hidden))
        tensors["att_ws"] = init_uniform(rng, (hidden, hidden))
        tensors["att_b"] = np.zeros(hidden, dtype=np.float32)
        tensors["out_w"] = init_uniform(rng, (len(vocab), 3 * hidden))
        tensors["out_b"] = np.zeros(len(vocab), dtype=np.float32)
        return cls(vocab, tensors)

    def copy(self) -> Seq2SeqParams:
        return Seq2SeqParams(self.vocab, {k: v.copy() for k, v in self.tensors.items()})

    def save(self, path: Path | str, hyperparams: Seq2SeqHyperparams | None = None) -> Path:
        meta: dict[str, Any] = asdict(hyperparams) if hyperparams else {}
        meta.update(dim=self.dim, hidden=self.hidden, vocab_size=len(self.vocab))
        return save_checkpoint(path, MODEL_NAME, meta, self.tensors)

    @classmethod
    def load(cls, path: Path | str, vocab: Vocabulary) -> Seq2SeqParams:
        meta, tensors = load_checkpoint(path, MODEL_NAME)
        if meta["vocab_size"] != len(vocab):
            raise ValueError(f"{path} was trained with {meta['vocab_size']} tokens, vocabulary has {len(vocab)}")
        return cls(vocab, tensors)


@dataclass(frozen=True)
class EncoderOutput:
    """Top-layer encoder states ``(T, 2h)``, their attention keys and the bridged decoder state."""

    states: np.ndarray
    keys: np.ndarray
    s0: np.ndarray
    cache: tuple = field(repr=False, compare=False)


def _encode_ids(p: Params, ids: Sequence[int]) -> EncoderOutput:
    if len(ids) == 0:
        raise ValueError("Cannot encode an empty title; pad it with the unknown token")
    ids = np.asarray(ids, dtype=np.int64)
    x = p["embed"][ids]
    layer_caches = []
    for layer in range(ENCODER_LAYERS):
        fw = LstmCellParams.from_params(p, f"enc{layer}_fw")
        bw = LstmCellParams.from_params(p, f"enc{layer}_bw")
        h_fw, fw_caches = lstm_sequence_forward(x, fw)
        h_bw_rev, bw_caches = lstm_sequence_forward(x[::-1], bw)
        x = np.concatenate([h_fw, h_bw_rev[::-1]], axis=1)
        layer_caches.append((fw_caches, bw_caches))
    h = p["bridge_b"].shape[0]
    bridge_in = np.concatenate([x[-1, :h], x[0, h:]])
    s0 = np.tanh(p["bridge_w"] @ bridge_in + p["bridge_b"])
    keys = x @ p["att_wh"].T + p["att_b"]
    check_finite(x, "encoder states", "encode")
    return EncoderOutput(x, keys, s0, (ids, layer_caches, bridge_in))


def encode(title: Sequence[str], params: Seq2SeqParams) -> EncoderOutput:
    """Encode title tokens into ``(h_1..h_T, s_0)``."""
    return _encode_ids(params.tensors, params.vocab.encode(title))


def _decode_forward(
    p: Params,
    dec: LstmCellParams,
    y_prev: int,
    s_prev: np.ndarray,
    c_prev: np.ndarray,
    enc: EncoderOutput,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, tuple]:
    s, c, lstm_cache = lstm_cell_forward(p["embed"][y_prev], s_prev, c_prev, dec)
    act = np.tanh(enc.keys + p["att_ws"] @ s)
    alpha = softmax(act @ p["att_v"])
    context = alpha @ enc.states
    features = np.concatenate([s, context])
    probs = softmax(p["out_w"] @ features + p["out_b"])
    return s, c, probs, alpha, (y_prev, lstm_cache, act, alpha, features)


def decode_step(
    y_prev: int,
    state: tuple[np.ndarray, np.ndarray],
    encoded: EncoderOutput,
    params: Seq2SeqParams,
) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray, np.ndarray]:
    """One decoder step from token id ``y_prev``.

    Returns the new ``(s, c)`` state, the distribution over the vocabulary and
    the attention weights over the encoder states.
    """
    p = params.tensors
    dec = LstmCellParams.from_params(p, "dec")
    s, c, probs, alpha, _ = _decode_forward(p, dec, y_prev, state[0], state[1], encoded)
    return (s, c), probs, alpha


def initial_state(encoded: EncoderOutput) -> tuple[np.ndarray, np.ndarray]:
    return encoded.s0, np.zeros_like(encoded.s0)


def _sequence_nll(
    p: Params, title_ids: Sequence[int], cq_ids: Sequence[int], grads: Params | None = None
) -> tuple[float, int]:
    """Summed teacher-forced NLL of ``cq + EOS``; accumulates gradients of the sum into ``grads``."""
    enc = _encode_ids(p, title_ids)
    dec = LstmCellParams.from_params(p, "dec")
    inputs = [BOS_ID, *cq_ids]
    targets = [*cq_ids, EOS_ID]
    s, c = initial_state(enc)
    nll = 0.0
    steps = []
    for y_prev, target in zip(inputs, targets):
        s, c, probs, _, cache = _decode_forward(p, dec, y_prev, s, c, enc)
        nll -= math.log(max(float(probs[target]), 1e-30))
        steps.append((probs, target, cache))
    if grads is None:
        return nll, len(targets)

    h = p["bridge_b"].shape[0]
    states = enc.states
    d_states = np.zeros_like(states)
    d_keys = np.zeros_like(enc.keys)
    ds_next = np.zeros_like(enc.s0)
    dc_next = np.zeros_like(enc.s0)
    for probs, target, (y_prev, lstm_cache, act, alpha, features) in reversed(steps):
        dlogits = probs.copy()
        dlogits[target] -= 1.0
        grads["out_w"] += np.outer(dlogits, features)
        grads["out_b"] += dlogits
        dfeatures = p["out_w"].T @ dlogits
        ds = dfeatures[:h] + ds_next
        dcontext = dfeatures[h:]
        d_states += np.outer(alpha, dcontext)
        dalpha = states @ dcontext
        de = alpha * (dalpha - alpha @ dalpha)
        grads["att_v"] += act.T @ de
        dact = np.outer(de, p["att_v"]) * (1.0 - act**2)
        d_keys += dact
        dquery = dact.sum(axis=0)
        grads["att_ws"] += np.outer(dquery, features[:h])
        ds += p["att_ws"].T @ dquery
        dx, ds_next, dc_next, cell_grads = lstm_cell_backward(ds, dc_next, lstm_cache)
        grads["dec_wx"] += cell_grads.w_x
        grads["dec_wh"] += cell_grads.w_h
        grads["dec_b"] += cell_grads.b
        grads["embed"][y_prev] += dx

    ids, layer_caches, bridge_in = enc.cache
    d_states += d_keys @ p["att_wh"]
    grads["att_wh"] += d_keys.T @ states
    grads["att_b"] += d_keys.sum(axis=0)

    dz = ds_next * (1.0 - enc.s0**2)
    grads["bridge_w"] += np.outer(dz, bridge_in)
    grads["bridge_b"] += dz
    dbridge = p["bridge_w"].T @ dz
    d_states[-1, :h] += dbridge[:h]
    d_states[0, h:] += dbridge[h:]

    dx = d_states
    for layer in reversed(range(ENCODER_LAYERS)):
        fw_caches, bw_caches = layer_caches[layer]
        dx_fw, _, g_fw = lstm_sequence_backward(dx[:, :h], fw_caches)
        dx_bw_rev, _, g_bw = lstm_sequence_backward(dx[::-1, h:], bw_caches)
        for direction, g in (("fw", g_fw), ("bw", g_bw)):
            grads[f"enc{layer}_{direction}_wx"] += g.w_x
            grads[f"enc{layer}_{direction}_wh"] += g.w_h
            grads[f"enc{layer}_{direction}_b"] += g.b
        dx = dx_fw + dx_bw_rev[::-1]
    np.add.at(grads["embed"], ids, dx)
    grads["embed"][PAD_ID] = 0.0
    return nll, len(targets)


EncodedPair = tuple[list[int], list[int]]


def loss_and_grads(p: Params, batch: Sequence[EncodedPair]) -> tuple[float, Params]:
    """Mean per-token NLL over ``batch`` and its gradient."""
    grads = zeros_like_params(p)
    total, tokens = 0.0, 0
    for title_ids, cq_ids in batch:
        nll, n = _sequence_nll(p, title_ids, cq_ids, grads)
        total += nll
        tokens += n
    for g in grads.values():
        g /= tokens
    return total / tokens, grads


def _mean_nll(p: Params, pairs: Sequence[EncodedPair]) -> float:
    total, tokens = 0.0, 0
    for title_ids, cq_ids in pairs:
        nll, n = _sequence_nll(p, title_ids, cq_ids)
        total += nll
        tokens += n
    return total / tokens if tokens else float("nan")


def _encode_pairs(
    pairs: Iterable[tuple[Sequence[str], Sequence[str]]], vocab: Vocabulary, max_title_len: int
) -> list[EncodedPair]:
    encoded = []
    for title, cq in pairs:
        if title:
            encoded.append((vocab.encode(title[:max_title_len]), vocab.encode(cq)))
    return encoded


def mean_loss(
    params: Seq2SeqParams, pairs: Iterable[tuple[Sequence[str], Sequence[str]]], max_title_len: int = 40
) -> float:
    """Mean per-token teacher-forced NLL of ``pairs``."""
    return _mean_nll(params.tensors, _encode_pairs(pairs, params.vocab, max_title_len))


def train(
    train_pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    val_pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    vocab: Vocabulary,
    hyperparams: Seq2SeqHyperparams = Seq2SeqHyperparams(),
    embeddings: EmbeddingMatrix | None = None,
    recorder: TrainingRecorder | None = None,
) -> Seq2SeqParams:
    """Mini-batch SGD on per-token NLL with early stopping on validation loss.

    Without validation pairs the training loss drives early stopping. The
    parameters of the best epoch are returned.
    """
    if vocab.tokens[BOS_ID] != BOS or vocab.tokens[EOS_ID] != EOS:
        raise ValueError("Vocabulary lacks the sentence start/end tokens")
    train_set = _encode_pairs(train_pairs, vocab, hyperparams.max_title_len)
    val_set = _encode_pairs(val_pairs, vocab, hyperparams.max_title_len)
    if not train_set:
        raise ValueError("No training pairs for question boosting")
    rng = np.random.default_rng(hyperparams.seed)
    params = Seq2SeqParams.init(vocab, hyperparams.dim, hyperparams.hidden, rng, embeddings)
    p = params.tensors
    best, best_loss, stale = params.copy(), math.inf, 0
    logger.info("Training qboost on %d pairs (%d validation)", len(train_set), len(val_set))
    for epoch in tqdm(range(hyperparams.epochs), desc="qboost", unit=" epoch", disable=None):
        order = rng.permutation(len(train_set))
        total, tokens = 0.0, 0
        for start in range(0, len(order), hyperparams.batch_size):
            batch = [train_set[i] for i in order[start : start + hyperparams.batch_size]]
            loss, grads = loss_and_grads(p, batch)
            check_finite(loss, "loss", "qboost training step")
            n = sum(len(cq) + 1 for _, cq in batch)
            total += loss * n
            tokens += n
            clip_grad_norm(grads, hyperparams.clip_norm)
            sgd_step(p, grads, hyperparams.lr)
        train_loss = total / tokens
        val_loss = _mean_nll(p, val_set) if val_set else train_loss
        logger.debug("qboost epoch %d: train %.4f, validation %.4f", epoch, train_loss, val_loss)
        if recorder is not None:
            recorder.log_epoch(epoch, train_loss=train_loss, val_loss=val_loss)
        if val_loss < best_loss:
            best, best_loss, stale = params.copy(), val_loss, 0
        else:
            stale += 1
            if stale >= hyperparams.patience:
                logger.info("qboost early stop after epoch %d", epoch)
                break
    logger.info("qboost best validation loss %.4f", best_loss)
    return best


# --------------------------------------------------------------------------- decoding


@dataclass(frozen=True)
class Hypothesis:
    """A finished decode: token ids (ending in EOS unless cut at max length) and log-probability."""

    ids: tuple[int, ...]
    log_prob: float

    @property
    def normalized(self) -> float:
        return self.log_prob / max(len(self.ids), 1)

    def tokens(self, vocab: Vocabulary) -> list[str]:
        return vocab.decode(i for i in self.ids if i != EOS_ID)


_NEVER_EMITTED = (PAD_ID, BOS_ID)


def _title_ids(title: Sequence[str], vocab: Vocabulary, max_title_len: int) -> list[int]:
    return vocab.encode(title[:max_title_len]) if title else [vocab.id_of(UNK)]


def beam_hypotheses(
    title: Sequence[str],
    params: Seq2SeqParams,
    beam_width: int = 10,
    max_len: int = 20,
    max_title_len: int = 40,
) -> list[Hypothesis]:
    """All finished hypotheses, best length-normalized score first.

    A hypothesis finishes when it emits EOS or reaches ``max_len`` tokens
    (EOS included in the count). Finished hypotheses leave the beam, so the
    ``beam_width`` slots only hold live prefixes.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be at least 1, got {beam_width}")
    if max_len <= 0:
        return []
    p = params.tensors
    dec = LstmCellParams.from_params(p, "dec")
    enc = _encode_ids(p, _title_ids(title, params.vocab, max_title_len))
    vocab_size = len(params.vocab)
    live: list[tuple[tuple[int, ...], float, np.ndarray, np.ndarray]] = [((), 0.0, *initial_state(enc))]
    finished: list[Hypothesis] = []
    for step in range(max_len):
        last = step + 1 == max_len
        rows, states = [], []
        for ids, log_prob, s, c in live:
            prev = ids[-1] if ids else BOS_ID
            s_new, c_new, probs, _, _ = _decode_forward(p, dec, prev, s, c, enc)
            scores = log_prob + np.log(np.maximum(probs.astype(np.float64), 1e-300))
            scores[list(_NEVER_EMITTED)] = -np.inf
            finished.append(Hypothesis(ids + (EOS_ID,), float(scores[EOS_ID])))
            scores[EOS_ID] = -np.inf
            rows.append(scores)
            states.append((s_new, c_new))
        flat = np.concatenate(rows)
        next_live = []
        for idx in np.argsort(-flat, kind="stable")[:beam_width]:
            if not np.isfinite(flat[idx]):
                break
            parent, token = divmod(int(idx), vocab_size)
            ids = live[parent][0] + (token,)
            if last:
                finished.append(Hypothesis(ids, float(flat[idx])))
            else:
                next_live.append((ids, float(flat[idx]), *states[parent]))
        live = next_live
        if not live:
            break
    return sorted(finished, key=lambda hyp: (-hyp.normalized, -hyp.log_prob, hyp.ids))


def beam_search(
    title: Sequence[str],
    params: Seq2SeqParams,
    beam_width: int = 10,
    max_len: int = 20,
    max_title_len: int = 40,
) -> list[str]:
    """Best hypothesis by ``log_prob / length``, EOS stripped."""
    hypotheses = beam_hypotheses(title, params, beam_width, max_len, max_title_len)
    return hypotheses[0].tokens(params.vocab) if hypotheses else []


def greedy_decode(
    title: Sequence[str], params: Seq2SeqParams, max_len: int = 20, max_title_len: int = 40
) -> list[str]:
    return beam_search(title, params, beam_width=1, max_len=max_len, max_title_len=max_title_len)


def sequence_log_prob(
    title: Sequence[str], ids: Sequence[int], params: Seq2SeqParams, max_title_len: int = 40
) -> float:
    """Log-probability the decoder assigns to emitting exactly ``ids``."""
    p = params.tensors
    dec = LstmCellParams.from_params(p, "dec")
    enc = _encode_ids(p, _title_ids(title, params.vocab, max_title_len))
    s, c = initial_state(enc)
    total = 0.0
    prev = BOS_ID
    for token in ids:
        s, c, probs, _, _ = _decode_forward(p, dec, prev, s, c, enc)
        total += float(np.log(max(float(probs[token]), 1e-300)))
        prev = token
    return total


# --------------------------------------------------------------------------- boosting


@dataclass(frozen=True)
class BoostedQuestion:
    original: list[str]
    cq: list[str]
    joined: list[str]

    def to_record(self) -> dict[str, Any]:
        return {"original": self.original, "cq": self.cq, "joined": self.joined}

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> BoostedQuestion:
        return cls(list(record["original"]), list(record["cq"]), list(record["joined"]))


def _through_question_mark(tokens: Sequence[str]) -> list[str]:
    if "?" not in tokens:
        return []
    return list(tokens[: list(tokens).index("?") + 1])


def join_boosted(title: Sequence[str], cq: Sequence[str], max_joined_len: int = 40) -> BoostedQuestion:
    """``title ⊕ SEP ⊕ cq`` cut to ``max_joined_len`` tokens.

    A cq that never reaches a question mark counts as a failed decode and is dropped.
    """
    cq = _through_question_mark(cq)
    joined = [*title, SEP, *cq][:max_joined_len]
    return BoostedQuestion(list(title), cq, joined)


def boost(
    title: Sequence[str],
    params: Seq2SeqParams,
    beam_width: int = 10,
    max_len: int = 20,
    max_joined_len: int = 40,
) -> BoostedQuestion:
    """Generate a clarifying question with beam search and append it to ``title``."""
    cq = beam_search(title, params, beam_width, max_len, max_title_len=max_joined_len)
    return join_boosted(title, cq, max_joined_len)


@dataclass(frozen=True)
class CqRetriever:
    """Boosting by lookup: reuse the clarifying question of the most similar training title."""

    index: TitleIndex
    cqs: dict[int, list[str]]

    @classmethod
    def build(
        cls,
        posts: Iterable[Post],
        cqs: Iterable[ClarifyingQuestion],
        embeddings: EmbeddingMatrix,
        idf: IdfTable,
    ) -> CqRetriever:
        first: dict[int, list[str]] = {}
        for cq in sorted(cqs, key=lambda c: (c.post_id, c.created_at, c.comment_id or 0)):
            first.setdefault(cq.post_id, list(cq.tokens))
        titles = [(post.id, tokenize(post.title)) for post in posts if post.id in first]
        return cls(TitleIndex.build(titles, embeddings, idf), first)

    def retrieve(self, title: Sequence[str], exclude: int | None = None) -> list[str]:
        for post_id, _ in self.index.knn(title, 2):
            if post_id != exclude:
                return list(self.cqs[post_id])
        return []


def boost_retrieved(
    title: Sequence[str],
    retriever: CqRetriever,
    max_joined_len: int = 40,
    exclude: int | None = None,
) -> BoostedQuestion:
    return join_boosted(title, retriever.retrieve(title, exclude), max_joined_len)
