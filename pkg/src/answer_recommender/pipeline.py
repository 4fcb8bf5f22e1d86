"""Offline training and online recommendation, stage by stage.

Every stage reads the artifacts of the stage before it from the workspace,
writes its own artifacts atomically and records a manifest with the sha256 of
its inputs and outputs plus the hashes of the upstream manifests. A stage
refuses to run on missing or stale upstream artifacts unless forced.

Workspace layout::

    corpus/{posts,answers,comments,cq}.jsonl, corpus/ingest_summary.json
    index/{vocab,idf,titles}.jsonl, index/embeddings.bin
    qboost.ckpt
    labeled_pairs.jsonl, splits.json
    ranker[-variant].ckpt, weights[-variant].json
    reports/
    manifests/<stage>.json
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from . import qboost, ranker
from .config import PipelineConfig
from .corpus import (
    Corpus,
    compute_hunger_stats,
    cq_answer_probability,
    extract_clarifying_questions,
    parse_comments,
    parse_posts,
    qcq_pairs,
    read_clarifying_questions,
    write_clarifying_questions,
)
from .evaluation import (
    CandidatePool,
    build_pools,
    evaluate,
    format_sweep_table,
    format_table,
    oracle_ranking,
    robustness_sweep,
    split_questions,
)
from .labeling import establish_labels, label_histogram, read_labeled_pairs, write_labeled_pairs
from .qboost import CqRetriever, Seq2SeqParams
from .ranker import RankerParams, ScoreWeights, rank_candidates
from .retrieval import (
    EmbeddingMatrix,
    IdfTable,
    TitleIndex,
    Vocabulary,
    build_vocab,
    load_embeddings_text,
    train_embeddings,
)
from .text import tokenize
from .training_log import open_recorder
from .util import atomic_write_text, read_json, sha256_file, write_json

__all__ = [
    "BindError",
    "EmptyIndexError",
    "InvalidQueryError",
    "MissingInputError",
    "PipelineError",
    "Recommendation",
    "RecommendedAnswer",
    "Recommender",
    "StageOrderError",
    "StaleArtifactError",
    "Workspace",
    "make_booster",
    "query_tokens",
    "run_evaluate",
    "run_index",
    "run_ingest",
    "run_label",
    "run_stats",
    "run_train_qboost",
    "run_train_ranker",
    "run_tune",
]

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    """Base class of errors that end a command with a specific exit code."""

    exit_code = 1


class MissingInputError(PipelineError):
    exit_code = 2


class StageOrderError(PipelineError):
    exit_code = 3


class StaleArtifactError(StageOrderError):
    """An upstream artifact changed after a downstream stage consumed it."""


class EmptyIndexError(PipelineError):
    exit_code = 4


class BindError(PipelineError):
    exit_code = 5


class InvalidQueryError(PipelineError, ValueError):
    """A recommendation request that cannot be answered, such as a query without tokens."""

    exit_code = 6


def query_tokens(query: str) -> list[str]:
    """Tokens of a recommendation query; a query without any is an :class:`InvalidQueryError`."""
    tokens = tokenize(query)
    if not tokens:
        raise InvalidQueryError(f"query has no tokens: {query!r}")
    return tokens


def variant_suffix(config: PipelineConfig) -> str:
    """Artifact name suffix of an ablation run, e.g. ``"-drop_cq"``."""
    flags = [name for name in ("drop_cq", "drop_labeling") if getattr(config, name)]
    return "".join(f"-{name}" for name in flags)


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    @property
    def cq_path(self) -> Path:
        return self.corpus_dir / "cq.jsonl"

    @property
    def index_dir(self) -> Path:
        return self.root / "index"

    @property
    def qboost_path(self) -> Path:
        return self.root / "qboost.ckpt"

    @property
    def labeled_pairs_path(self) -> Path:
        return self.root / "labeled_pairs.jsonl"

    @property
    def splits_path(self) -> Path:
        return self.root / "splits.json"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def ranker_path(self, suffix: str = "") -> Path:
        return self.root / f"ranker{suffix}.ckpt"

    def weights_path(self, suffix: str = "") -> Path:
        return self.root / f"weights{suffix}.json"

    def manifest_path(self, stage: str) -> Path:
        return self.root / "manifests" / f"{stage}.json"

    def index_files(self) -> dict[str, Path]:
        names = {"vocab": "vocab.jsonl", "idf": "idf.jsonl", "embeddings": "embeddings.bin", "titles": "titles.jsonl"}
        return {key: self.index_dir / name for key, name in names.items()}

    def corpus_files(self) -> list[Path]:
        return [self.corpus_dir / f"{name}.jsonl" for name in ("posts", "answers", "comments")] + [self.cq_path]


# --------------------------------------------------------------------------- manifests


def _prerequisites(stage: str) -> tuple[str, ...]:
    base, _, variant = stage.partition("-drop")
    suffix = f"-drop{variant}" if variant else ""
    chain = {
        "ingest": (),
        "index": ("ingest",),
        "train-qboost": ("index",),
        "label": ("train-qboost",),
        "train-ranker": ("label",),
        "tune": (f"train-ranker{suffix}",),
        "evaluate": (f"tune{suffix}",),
    }
    return chain[base]


def _relative(ws: Workspace, path: Path) -> str:
    try:
        return str(path.relative_to(ws.root))
    except ValueError:
        return str(path)


def write_manifest(
    ws: Workspace,
    stage: str,
    config: PipelineConfig,
    inputs: Iterable[Path],
    outputs: Iterable[Path],
) -> Path:
    upstream = {}
    for name in _prerequisites(stage):
        upstream[name] = sha256_file(ws.manifest_path(name))
    manifest = {
        "stage": stage,
        "inputs": {_relative(ws, p): sha256_file(p) for p in inputs},
        "outputs": {_relative(ws, p): sha256_file(p) for p in outputs},
        "upstream": upstream,
        "config": config.to_record(),
    }
    return write_json(ws.manifest_path(stage), manifest)


def _resolve(ws: Workspace, relative: str) -> Path:
    path = Path(relative)
    return path if path.is_absolute() else ws.root / path


def check_upstream(ws: Workspace, stage: str, force: bool = False) -> None:
    """Require every prerequisite of ``stage`` to have run and still be fresh."""
    for name in _prerequisites(stage):
        _check_fresh(ws, name, force, requested_by=stage)


def _check_fresh(ws: Workspace, stage: str, force: bool, requested_by: str) -> None:
    path = ws.manifest_path(stage)
    if not path.exists():
        raise StageOrderError(
            f"'{requested_by}' needs the outputs of '{stage}', which has not been run; "
            f"run `answer-recommender {stage.split('-drop')[0]}` first"
        )
    if force:
        return
    manifest = read_json(path)
    for relative, digest in manifest["outputs"].items():
        output = _resolve(ws, relative)
        if not output.exists() or sha256_file(output) != digest:
            raise StaleArtifactError(
                f"{relative} changed since '{stage}' produced it; re-run '{stage}' or pass --force"
            )
    for upstream, digest in manifest["upstream"].items():
        upstream_path = ws.manifest_path(upstream)
        if not upstream_path.exists() or sha256_file(upstream_path) != digest:
            raise StaleArtifactError(
                f"'{stage}' is older than '{upstream}'; re-run '{stage}' or pass --force"
            )
        _check_fresh(ws, upstream, force, requested_by=stage)


# --------------------------------------------------------------------------- loading helpers


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"Missing {what}: {path}")
    return path


def load_corpus(ws: Workspace) -> Corpus:
    for path in ws.corpus_files():
        _require(path, "ingested corpus file")
    return Corpus.read(ws.corpus_dir)


@dataclass(frozen=True)
class IndexBundle:
    vocab: Vocabulary
    idf: IdfTable
    embeddings: EmbeddingMatrix
    titles: TitleIndex


def load_index(ws: Workspace) -> IndexBundle:
    files = ws.index_files()
    for path in files.values():
        _require(path, "index file")
    vocab = Vocabulary.load(files["vocab"])
    idf = IdfTable.load(files["idf"])
    embeddings = EmbeddingMatrix.load(files["embeddings"], vocab)
    return IndexBundle(vocab, idf, embeddings, TitleIndex.load(files["titles"], embeddings, idf))


def _splits(ws: Workspace) -> dict[str, list[int]]:
    return read_json(_require(ws.splits_path, "question splits"))


def compute_splits(corpus: Corpus, config: PipelineConfig) -> dict[str, list[int]]:
    resolved = [p.id for p in corpus.posts if corpus.accepted_answer(p.id) is not None]
    train, val, test = split_questions(
        resolved, config.val_fraction, config.test_fraction, config.val_cap, config.test_cap, config.seed
    )
    return {"train": train, "val": val, "test": test}


Booster = Callable[[list[str], int | None], list[str]]

# Generated boosts kept per booster; beam search is a pure function of the title.
BOOST_CACHE_SIZE = 4096


def make_booster(
    config: PipelineConfig,
    params: Seq2SeqParams | None,
    retriever: CqRetriever | None,
    cache_size: int = BOOST_CACHE_SIZE,
) -> Booster:
    """Map ``(title tokens, question id)`` to the ranker's question-side input.

    Generated boosts go through a bounded, thread-safe LRU cache exposed as
    ``booster.cache_info``.
    """

    @lru_cache(maxsize=cache_size)
    def generate(title: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(qboost.boost(list(title), params, config.beam, config.cq_max_len, config.q_max_len).joined)

    def booster(title: list[str], qid: int | None = None) -> list[str]:
        if config.drop_cq:
            return list(title)
        if config.boost_mode == "retrieve":
            return qboost.boost_retrieved(title, retriever, config.q_max_len, exclude=qid).joined
        return list(generate(tuple(title)))

    booster.cache_info = generate.cache_info  # type: ignore[attr-defined]
    return booster


def _load_booster(ws: Workspace, config: PipelineConfig, corpus: Corpus, index: IndexBundle) -> Booster:
    if config.drop_cq:
        return make_booster(config, None, None)
    if config.boost_mode == "retrieve":
        test = set(_splits(ws)["test"]) if ws.splits_path.exists() else set()
        retriever = CqRetriever.build(
            [p for p in corpus.posts if p.id not in test],
            read_clarifying_questions(ws.cq_path),
            index.embeddings,
            index.idf,
        )
        return make_booster(config, None, retriever)
    params = Seq2SeqParams.load(_require(ws.qboost_path, "question boosting model"), index.vocab)
    return make_booster(config, params, None)


# --------------------------------------------------------------------------- stages


def run_ingest(config: PipelineConfig, force: bool = False) -> dict[str, Any]:
    """Parse the dump into normalized JSONL files and extract clarifying questions."""
    ws = Workspace(config.workspace)
    posts_xml = _require(config.dump_dir / "Posts.xml", "dump file")
    comments_xml = _require(config.dump_dir / "Comments.xml", "dump file")
    links_xml = config.dump_dir / "PostLinks.xml"
    duplicates = links_xml if links_xml.exists() else None

    posts, answers, post_summary = parse_posts(posts_xml, duplicates)
    comments, comment_summary = parse_comments(comments_xml, posts)
    cqs = extract_clarifying_questions(
        comments, posts, config.cq_key_phrases, config.cq_exclude_keywords, apply_keyword_filter=True
    )
    outputs = list(Corpus(posts, answers, comments).write(ws.corpus_dir).values())
    outputs.append(write_clarifying_questions(ws.cq_path, cqs))
    summary = {
        "posts": post_summary.to_record(),
        "comments": comment_summary.to_record(),
        "n_questions": len(posts),
        "n_answers": len(answers),
        "n_comments": len(comments),
        "n_clarifying_questions": len(cqs),
    }
    outputs.append(write_json(ws.corpus_dir / "ingest_summary.json", summary))
    inputs = [p for p in (posts_xml, comments_xml, duplicates) if p is not None]
    write_manifest(ws, "ingest", config, inputs, outputs)
    logger.info("Ingested %d questions, %d answers, %d clarifying questions", len(posts), len(answers), len(cqs))
    return summary


def run_stats(config: PipelineConfig, dump_date: datetime | None = None) -> dict[str, Any]:
    """Answer-hunger statistics and clarifying-question answer probabilities."""
    ws = Workspace(config.workspace)
    corpus = load_corpus(ws)
    if dump_date is None:
        stamps = [p.created_at for p in corpus.posts] + [a.created_at for a in corpus.answers]
        stamps += [c.created_at for c in corpus.comments]
        dump_date = max(stamps) if stamps else datetime.now(timezone.utc)
    hunger = compute_hunger_stats(corpus.posts, corpus.answers)
    probability = cq_answer_probability(
        corpus.posts, corpus.answers, corpus.comments, dump_date, config.recent_days
    )
    question_cqs = extract_clarifying_questions(corpus.comments, corpus.posts, apply_keyword_filter=False)
    return {
        "hunger": hunger.to_record(),
        "cq_answer_probability": probability.to_record(),
        "question_comments": {
            "n_question_comments": len(corpus.comments),
            "n_clarifying_questions": len(question_cqs),
            "n_posts_with_clarifying_questions": len({cq.post_id for cq in question_cqs}),
        },
        "dump_date": dump_date.isoformat(),
    }


def run_index(config: PipelineConfig, force: bool = False) -> dict[str, Any]:
    """Vocabulary, word embeddings, title IDF and the similar-question index."""
    ws = Workspace(config.workspace)
    check_upstream(ws, "index", force)
    corpus = load_corpus(ws)
    cqs = read_clarifying_questions(ws.cq_path)
    titles = [tokenize(p.title) for p in corpus.posts]
    streams = titles + [tokenize(p.body) for p in corpus.posts] + [tokenize(a.body) for a in corpus.answers]
    streams += [list(cq.tokens) for cq in cqs]
    vocab = build_vocab(streams, config.vocab_cap)
    if config.embeddings_file is not None:
        embeddings = load_embeddings_text(_require(config.embeddings_file, "embeddings file"), vocab, config.seed)
    else:
        embeddings = train_embeddings(streams, vocab, config.dim, config.embedding_epochs, config.seed)
    idf = IdfTable.from_documents(titles)
    index = TitleIndex.build(((p.id, t) for p, t in zip(corpus.posts, titles)), embeddings, idf)
    files = ws.index_files()
    vocab.save(files["vocab"])
    idf.save(files["idf"])
    embeddings.save(files["embeddings"])
    index.save(files["titles"])
    inputs = ws.corpus_files()
    if config.embeddings_file is not None:
        inputs.append(config.embeddings_file)
    write_manifest(ws, "index", config, inputs, list(files.values()))
    logger.info("Indexed %d titles over a vocabulary of %d tokens", len(index), len(vocab))
    return {"vocab_size": len(vocab), "n_titles": len(index), "dim": embeddings.dim}


def _holdout(items: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic ``(train, val)`` split; tiny sets are not split."""
    n_val = int(round(fraction * len(items))) if len(items) >= 10 else 0
    order = np.random.default_rng(seed).permutation(len(items))
    val = [items[i] for i in sorted(order[:n_val])]
    train = [items[i] for i in sorted(order[n_val:])]
    return train, val


def run_train_qboost(config: PipelineConfig, force: bool = False, rrd: Path | None = None) -> dict[str, Any]:
    """Train the clarifying-question generator on ⟨title, clarifying question⟩ pairs.

    Questions held out for testing contribute no pairs.
    """
    ws = Workspace(config.workspace)
    check_upstream(ws, "train-qboost", force)
    corpus = load_corpus(ws)
    index = load_index(ws)
    test = set(compute_splits(corpus, config)["test"])
    cqs = read_clarifying_questions(ws.cq_path)
    pairs = qcq_pairs([p for p in corpus.posts if p.id not in test], cqs)
    inputs = [ws.cq_path, *ws.corpus_files()[:1], *ws.index_files().values()]
    if config.boost_mode == "retrieve":
        logger.info("boost_mode=retrieve: no generator to train")
        write_manifest(ws, "train-qboost", config, inputs, [])
        return {"n_pairs": len(pairs), "trained": False}
    if not pairs:
        raise MissingInputError("No ⟨title, clarifying question⟩ pairs to train question boosting on")
    train_pairs, val_pairs = _holdout(pairs, config.val_fraction, config.seed)
    recorder = open_recorder("qboost", rrd)
    hyperparams = config.qboost_hyperparams()
    params = qboost.train(train_pairs, val_pairs, index.vocab, hyperparams, index.embeddings, recorder)
    if recorder is not None:
        recorder.close()
    params.save(ws.qboost_path, hyperparams)
    write_manifest(ws, "train-qboost", config, inputs, [ws.qboost_path])
    return {"n_pairs": len(pairs), "n_train": len(train_pairs), "n_val": len(val_pairs), "trained": True}


def run_label(config: PipelineConfig, force: bool = False) -> dict[str, Any]:
    """Label QA pairs, attach boosted questions and fix the train/val/test split."""
    ws = Workspace(config.workspace)
    check_upstream(ws, "label", force)
    corpus = load_corpus(ws)
    index = load_index(ws)
    splits = compute_splits(corpus, config)
    write_json(ws.splits_path, splits)
    # Labeled pairs carry the boosted question for every variant; drop_cq applies at ranker time.
    booster = _load_booster(ws, replace(config, drop_cq=False), corpus, index)
    pairs = establish_labels(corpus.posts, corpus.answers, index.titles, config.k_sim, config.seed)
    boosted: dict[int, list[str]] = {}
    for pair in pairs:
        if pair.qid not in boosted:
            boosted[pair.qid] = booster(pair.q_tokens, pair.qid)
    pairs = [pair.with_boosted(boosted[pair.qid]) for pair in pairs]
    write_labeled_pairs(ws.labeled_pairs_path, pairs)
    inputs = [*ws.corpus_files(), *ws.index_files().values()]
    if ws.qboost_path.exists():
        inputs.append(ws.qboost_path)
    write_manifest(ws, "label", config, inputs, [ws.labeled_pairs_path, ws.splits_path])
    return {"histogram": label_histogram(pairs), "splits": {k: len(v) for k, v in splits.items()}}


def run_train_ranker(config: PipelineConfig, force: bool = False, rrd: Path | None = None) -> dict[str, Any]:
    ws = Workspace(config.workspace)
    suffix = variant_suffix(config)
    stage = f"train-ranker{suffix}"
    check_upstream(ws, stage, force)
    index = load_index(ws)
    splits = _splits(ws)
    pairs = read_labeled_pairs(_require(ws.labeled_pairs_path, "labeled pairs"))
    train_ids, val_ids = set(splits["train"]), set(splits["val"])
    train_pairs = [p for p in pairs if p.qid in train_ids]
    val_pairs = [p for p in pairs if p.qid in val_ids]
    if not train_pairs:
        raise MissingInputError("No labeled pairs belong to training questions")
    recorder = open_recorder(f"ranker{suffix}", rrd)
    hyperparams = config.ranker_hyperparams()
    params = ranker.train(train_pairs, val_pairs, index.vocab, hyperparams, index.embeddings, recorder)
    if recorder is not None:
        recorder.close()
    params.save(ws.ranker_path(suffix))
    write_manifest(
        ws, stage, config, [ws.labeled_pairs_path, ws.splits_path, ws.index_files()["vocab"]], [ws.ranker_path(suffix)]
    )
    examples = ranker.training_examples(train_pairs, hyperparams)
    return {
        "n_train": len(train_pairs),
        "n_val": len(val_pairs),
        "train_accuracy": ranker.accuracy(params, examples),
        "classes": ranker.class_histogram(examples),
    }


@dataclass
class _EvalContext:
    ws: Workspace
    corpus: Corpus
    index: IndexBundle
    splits: dict[str, list[int]]
    booster: Booster
    params: RankerParams

    def pools(self, split: str, k: int) -> list[CandidatePool]:
        pools = build_pools(self.splits[split], self.corpus, self.index.titles, k)
        return [
            CandidatePool(p.qid, self.booster(p.query, p.qid), p.candidates, p.sources, p.accepted_aid)
            for p in pools
        ]


def _context(config: PipelineConfig, suffix: str) -> _EvalContext:
    ws = Workspace(config.workspace)
    corpus = load_corpus(ws)
    index = load_index(ws)
    params = RankerParams.load(_require(ws.ranker_path(suffix), "ranker model"), index.vocab)
    return _EvalContext(ws, corpus, index, _splits(ws), _load_booster(ws, config, corpus, index), params)


def run_tune(config: PipelineConfig, force: bool = False) -> dict[str, Any]:
    """Grid-search the score weights on validation pools."""
    suffix = variant_suffix(config)
    stage = f"tune{suffix}"
    ws = Workspace(config.workspace)
    check_upstream(ws, stage, force)
    ctx = _context(config, suffix)
    weights = ranker.tune_weights(ctx.params, ctx.pools("val", config.k))
    weights.save(ws.weights_path(suffix))
    write_manifest(ws, stage, config, [ws.ranker_path(suffix), ws.splits_path], [ws.weights_path(suffix)])
    return weights.to_record()


def run_evaluate(
    config: PipelineConfig,
    force: bool = False,
    sweep_k: Sequence[int] = (),
    oracle: bool = False,
) -> dict[str, Any]:
    """Evaluate on the test pools; optionally sweep the pool size ``k``."""
    suffix = variant_suffix(config)
    stage = f"evaluate{suffix}"
    ws = Workspace(config.workspace)
    check_upstream(ws, stage, force)
    ctx = _context(config, suffix)
    weights = ScoreWeights.load(_require(ws.weights_path(suffix), "score weights"))

    def ranking(pool: CandidatePool) -> list[tuple[int, float]]:
        return rank_candidates(pool.query, pool.candidates, ctx.params, weights)

    chosen = oracle_ranking if oracle else ranking
    echo = {"k": config.k, "drop_cq": config.drop_cq, "drop_labeling": config.drop_labeling,
            "boost_mode": config.boost_mode, "oracle": oracle, "weights": weights.to_record()}
    report = evaluate(ctx.params, weights, ctx.pools("test", config.k), echo, ranking=chosen)
    name = f"eval{suffix}{'-oracle' if oracle else ''}"
    outputs = [
        write_json(ws.reports_dir / f"{name}.json", report.to_record()),
        atomic_write_text(ws.reports_dir / f"{name}.txt", format_table(report)),
    ]
    result: dict[str, Any] = {"report": report.to_record()}
    if sweep_k:
        rows = robustness_sweep(sweep_k, lambda k: ctx.pools("test", k), chosen)
        outputs.append(write_json(ws.reports_dir / f"sweep{suffix}.json", [row.to_record() for row in rows]))
        outputs.append(atomic_write_text(ws.reports_dir / f"sweep{suffix}.txt", format_sweep_table(rows)))
        result["sweep"] = [row.to_record() for row in rows]
    write_manifest(ws, stage, config, [ws.ranker_path(suffix), ws.weights_path(suffix), ws.splits_path], outputs)
    return result


# --------------------------------------------------------------------------- recommendation


@dataclass(frozen=True)
class RecommendedAnswer:
    aid: int
    qid: int
    score: float
    excerpt: str

    def to_record(self) -> dict[str, Any]:
        return {"aid": self.aid, "qid": self.qid, "score": self.score, "excerpt": self.excerpt}


@dataclass(frozen=True)
class Recommendation:
    query: str
    boosted: list[str]
    results: list[RecommendedAnswer] = field(default_factory=list)

    def to_response(self) -> dict[str, Any]:
        """The wire form shared by ``recommend`` and ``serve``."""
        return {"boosted": " ".join(self.boosted), "results": [r.to_record() for r in self.results]}


class Recommender:
    """Loaded models and index answering free-text queries.

    Immutable after construction; :meth:`recommend` is safe to call from
    several threads.
    """

    def __init__(
        self,
        config: PipelineConfig,
        corpus: Corpus,
        index: IndexBundle,
        booster: Booster,
        params: RankerParams,
        weights: ScoreWeights,
    ):
        if len(index.titles) == 0:
            raise EmptyIndexError("The similar-question index is empty")
        self.config = config
        self.corpus = corpus
        self.index = index
        self.booster = booster
        self.params = params
        self.weights = weights

    @classmethod
    def load(cls, config: PipelineConfig, force: bool = False) -> Recommender:
        suffix = variant_suffix(config)
        ws = Workspace(config.workspace)
        _check_fresh(ws, f"tune{suffix}", force, requested_by="recommend")
        ctx = _context(config, suffix)
        weights = ScoreWeights.load(_require(ws.weights_path(suffix), "score weights"))
        return cls(config, ctx.corpus, ctx.index, ctx.booster, ctx.params, weights)

    def recommend(self, query: str, k: int | None = None) -> Recommendation:
        """Boost the query, retrieve similar questions and rank all of their answers."""
        k = self.config.k if k is None else k
        if k < 1:
            raise InvalidQueryError(f"k must be at least 1, got {k}")
        title = query_tokens(query)
        boosted = self.booster(title, None)
        candidates, sources, bodies = [], {}, {}
        for post_id, _ in self.index.titles.knn(title, k):
            for answer in self.corpus.answers_of(post_id):
                tokens = tokenize(answer.body)
                if tokens and answer.id not in sources:
                    candidates.append((answer.id, tokens))
                    sources[answer.id] = post_id
                    bodies[answer.id] = answer.body
        ranked = rank_candidates(boosted, candidates, self.params, self.weights)
        results = [
            RecommendedAnswer(aid, sources[aid], score, bodies[aid][: self.config.excerpt_chars])
            for aid, score in ranked
        ]
        return Recommendation(query, boosted, results)
