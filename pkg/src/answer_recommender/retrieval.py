"""Vocabulary, IDF weights, word embeddings and similar-question search.

Similar questions are found by brute-force cosine similarity between
IDF-weighted averages of title word embeddings.
"""

from __future__ import annotations

import logging
import math
import struct
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from gensim.models import KeyedVectors, Word2Vec

from .util import atomic_write_bytes, read_jsonl, write_jsonl

__all__ = [
    "BOS",
    "EOS",
    "EmbeddingMatrix",
    "IdfTable",
    "PAD",
    "RESERVED_TOKENS",
    "SEP",
    "TitleIndex",
    "UNK",
    "Vocabulary",
    "build_vocab",
    "embed_sentence",
    "knn_similar_questions",
    "load_embeddings_text",
    "train_embeddings",
]

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<s>", "</s>", "<sep>"
RESERVED_TOKENS: tuple[str, ...] = (PAD, UNK, BOS, EOS, SEP)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID = range(len(RESERVED_TOKENS))

EMBEDDING_MAGIC = b"DAEMB\x00\x00\x01"


@dataclass(frozen=True)
class Vocabulary:
    """Token ↔ index bijection; reserved tokens occupy indices 0–4."""

    tokens: tuple[str, ...] = RESERVED_TOKENS

    def __post_init__(self):
        if self.tokens[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError("Vocabulary must start with the reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("Vocabulary tokens must be unique")

    @cached_property
    def index(self) -> dict[str, int]:
        return {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: Path | str) -> Path:
        return write_jsonl(path, ({"index": i, "token": t} for i, t in enumerate(self.tokens)))

    @classmethod
    def load(cls, path: Path | str) -> Vocabulary:
        records = sorted(read_jsonl(path), key=lambda r: r["index"])
        return cls(tuple(r["token"] for r in records))


def build_vocab(streams: Iterable[Iterable[str]], cap: int) -> Vocabulary:
    """Keep the ``cap - 5`` most frequent tokens, ties broken lexicographically."""
    if cap < len(RESERVED_TOKENS):
        raise ValueError(f"Vocabulary cap must be at least {len(RESERVED_TOKENS)}, got {cap}")
    counts: Counter[str] = Counter()
    for stream in streams:
        counts.update(stream)
    for token in RESERVED_TOKENS:
        counts.pop(token, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [token for token, _ in ranked[: cap - len(RESERVED_TOKENS)]]
    return Vocabulary(RESERVED_TOKENS + tuple(kept))


@dataclass(frozen=True)
class IdfTable:
    """``idf(t) = ln(n_docs / df(t))`` for every token seen in at least one document."""

    idf: dict[str, float] = field(default_factory=dict)
    n_docs: int = 0

    @classmethod
    def from_documents(cls, documents: Iterable[Iterable[str]]) -> IdfTable:
        df: Counter[str] = Counter()
        n_docs = 0
        for doc in documents:
            n_docs += 1
            df.update(set(doc))
        return cls({t: math.log(n_docs / c) for t, c in sorted(df.items())}, n_docs)

    def __getitem__(self, token: str) -> float:
        return self.idf[token]

    def get(self, token: str, default: float = 0.0) -> float:
        return self.idf.get(token, default)

    def save(self, path: Path | str) -> Path:
        header = {"n_docs": self.n_docs}
        rows = ({"token": t, "idf": w} for t, w in self.idf.items())
        return write_jsonl(path, [header, *rows])

    @classmethod
    def load(cls, path: Path | str) -> IdfTable:
        records = iter(read_jsonl(path))
        header = next(records, {"n_docs": 0})
        return cls({r["token"]: float(r["idf"]) for r in records}, int(header["n_docs"]))


@dataclass(frozen=True)
class EmbeddingMatrix:
    """``|V| × d`` word vectors aligned with a :class:`Vocabulary`."""

    vocab: Vocabulary
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.vocab):
            raise ValueError(
                f"Embedding rows ({self.vectors.shape}) do not match vocabulary size {len(self.vocab)}"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("Embedding matrix contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def save(self, path: Path | str) -> Path:
        """Write the ``DAEMB`` binary matrix (the vocabulary is saved separately)."""
        rows, cols = self.vectors.shape
        payload = np.ascontiguousarray(self.vectors, dtype="<f4").tobytes()
        return atomic_write_bytes(path, EMBEDDING_MAGIC + struct.pack("<QQ", rows, cols) + payload)

    @classmethod
    def load(cls, path: Path | str, vocab: Vocabulary) -> EmbeddingMatrix:
        data = Path(path).read_bytes()
        if data[:8] != EMBEDDING_MAGIC:
            raise ValueError(f"{path} is not an embedding matrix file")
        rows, cols = struct.unpack("<QQ", data[8:24])
        vectors = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=24)
        return cls(vocab, vectors.reshape(rows, cols).astype(np.float32))


def _init_vectors(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))


def _fill_rows(vectors: np.ndarray, vocab: Vocabulary, keyed: KeyedVectors) -> int:
    found = 0
    for row, token in enumerate(vocab.tokens[len(RESERVED_TOKENS) :], start=len(RESERVED_TOKENS)):
        if token in keyed.key_to_index:
            vectors[row] = keyed[token]
            found += 1
    return found


def train_embeddings(
    streams: Sequence[Sequence[str]],
    vocab: Vocabulary,
    d: int = 100,
    epochs: int = 5,
    seed: int = 0,
    window: int = 5,
    negatives: int = 5,
    lr: float = 0.025,
) -> EmbeddingMatrix:
    """Skip-gram with negative sampling, trained with gensim on a single worker.

    Rows start from a seeded uniform initialization; every vocabulary token
    that gensim learned a vector for is overwritten with it. Reserved tokens
    and tokens outside ``vocab`` keep their initial rows.
    """
    if d <= 0:
        raise ValueError(f"Embedding dimension must be positive, got {d}")
    rng = np.random.default_rng(seed)
    vectors = _init_vectors(len(vocab), d, rng)
    reserved = set(RESERVED_TOKENS)
    sentences = [[t for t in s if t in vocab and t not in reserved] for s in streams]
    sentences = [s for s in sentences if len(s) > 1]
    if epochs <= 0 or not sentences:
        return EmbeddingMatrix(vocab, vectors.astype(np.float32))

    model = Word2Vec(
        sentences=sentences,
        vector_size=d,
        window=window,
        min_count=1,
        sg=1,
        hs=0,
        negative=negatives,
        ns_exponent=0.75,
        alpha=lr,
        seed=seed,
        workers=1,
        epochs=epochs,
    )
    found = _fill_rows(vectors, vocab, model.wv)
    logger.info("Trained %d/%d word vectors (d=%d, %d epochs)", found, len(vocab), d, epochs)
    return EmbeddingMatrix(vocab, vectors.astype(np.float32))


def _has_word2vec_header(path: Path | str) -> bool:
    with open(path, encoding="utf-8") as f:
        parts = f.readline().split()
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_embeddings_text(path: Path | str, vocab: Vocabulary, seed: int = 0) -> EmbeddingMatrix:
    """Load word2vec text vectors; vocabulary tokens without a vector get a seeded random row.

    The ``<rows> <cols>`` header line is optional.
    """
    try:
        keyed = KeyedVectors.load_word2vec_format(
            str(path), binary=False, no_header=not _has_word2vec_header(path), unicode_errors="replace"
        )
    except (ValueError, EOFError, IndexError) as exc:
        raise ValueError(f"Cannot read word vectors from {path}: {exc}") from exc
    if len(keyed.index_to_key) == 0:
        raise ValueError(f"No vectors found in {path}")
    rng = np.random.default_rng(seed)
    vectors = _init_vectors(len(vocab), keyed.vector_size, rng)
    vectors[0] = 0.0
    found = _fill_rows(vectors, vocab, keyed)
    logger.info("Loaded %d/%d vectors from %s", found, len(vocab), path)
    return EmbeddingMatrix(vocab, vectors.astype(np.float32))


def embed_sentence(tokens: Iterable[str], embeddings: EmbeddingMatrix, idf: IdfTable) -> np.ndarray:
    """IDF-weighted mean of the in-vocabulary token embeddings (zero if no weight)."""
    total = np.zeros(embeddings.dim)
    mass = 0.0
    for token in tokens:
        row = embeddings.vocab.index.get(token)
        if row is None or row < len(RESERVED_TOKENS):
            continue
        weight = idf.get(token, 0.0)
        if weight <= 0.0:
            continue
        total += weight * embeddings.vectors[row].astype(np.float64)
        mass += weight
    if mass == 0.0:
        return total
    return total / mass


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


@dataclass(frozen=True)
class TitleIndex:
    """Exact cosine search over IDF-weighted title embeddings."""

    post_ids: np.ndarray
    titles: list[list[str]]
    embeddings: EmbeddingMatrix
    idf: IdfTable

    @classmethod
    def build(
        cls,
        titles: Iterable[tuple[int, Sequence[str]]],
        embeddings: EmbeddingMatrix,
        idf: IdfTable,
    ) -> TitleIndex:
        items = sorted(titles, key=lambda item: item[0])
        return cls(
            post_ids=np.asarray([pid for pid, _ in items], dtype=np.int64),
            titles=[list(tokens) for _, tokens in items],
            embeddings=embeddings,
            idf=idf,
        )

    def __len__(self) -> int:
        return len(self.post_ids)

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        if not self.titles:
            return np.zeros((0, self.embeddings.dim))
        vectors = np.stack([embed_sentence(t, self.embeddings, self.idf) for t in self.titles])
        return _normalize_rows(vectors)

    @cached_property
    def position(self) -> dict[int, int]:
        return {int(pid): i for i, pid in enumerate(self.post_ids)}

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return _normalize_rows(embed_sentence(tokens, self.embeddings, self.idf))

    def scores(self, tokens: Sequence[str]) -> np.ndarray:
        """Cosine similarity of ``tokens`` to every indexed title."""
        return self.unit_vectors @ self.embed(tokens)

    def knn(self, tokens: Sequence[str], k: int) -> list[tuple[int, float]]:
        """Top-``k`` posts by cosine, descending; ties by ascending post id."""
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        if len(self) == 0:
            return []
        scores = self.scores(tokens)
        order = np.lexsort((self.post_ids, -scores))[:k]
        return [(int(self.post_ids[i]), float(scores[i])) for i in order]

    def save(self, path: Path | str) -> Path:
        return write_jsonl(
            path,
            ({"post_id": int(pid), "tokens": t} for pid, t in zip(self.post_ids, self.titles)),
        )

    @classmethod
    def load(cls, path: Path | str, embeddings: EmbeddingMatrix, idf: IdfTable) -> TitleIndex:
        return cls.build(((r["post_id"], r["tokens"]) for r in read_jsonl(path)), embeddings, idf)


def knn_similar_questions(
    query: Sequence[str], index: TitleIndex, k: int
) -> list[tuple[int, float]]:
    """Functional form of :meth:`TitleIndex.knn`."""
    return index.knn(query, k)
