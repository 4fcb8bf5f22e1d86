"""Candidate pools, P@K / DCG@K and the evaluation report.

A candidate pool gathers, for one held-out question, its own accepted answer
plus one answer from each of its most similar questions. Rankers are scored
by where they put the accepted answer.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .corpus import Answer, Corpus
from .ranker import RankerParams, ScoreWeights, rank_by_scores, rank_candidates
from .retrieval import TitleIndex
from .text import tokenize

__all__ = [
    "CandidatePool",
    "EvalReport",
    "MetricSummary",
    "RankedPool",
    "SweepRow",
    "build_pools",
    "dcg_at_k",
    "evaluate",
    "evaluate_rankings",
    "format_sweep_table",
    "format_table",
    "oracle_ranking",
    "precision_at_k",
    "robustness_sweep",
    "split_questions",
]

logger = logging.getLogger(__name__)

PRECISION_KS = (1, 2, 3, 4)
DCG_KS = (2, 3, 4, 5)
SWEEP_KS = (1, 2, 3, 4, 5)
SPREAD = "sample standard deviation over questions"
# Pools shorter than K are left out of every @K metric, so each column has its own n.


@dataclass(frozen=True)
class CandidatePool:
    """Answers to rank for one question; the accepted answer is always first before ranking.

    Attributes
    ----------
    qid : int
        The question the pool was built for.
    query : list[str]
        Ranker input for the question side (boosted or bare title).
    candidates : list[tuple[int, list[str]]]
        ``(answer id, answer tokens)`` with unique ids.
    sources : list[int]
        Question id each candidate was taken from.
    accepted_aid : int
        Id of ``qid``'s accepted answer.
    """

    qid: int
    query: list[str]
    candidates: list[tuple[int, list[str]]]
    sources: list[int]
    accepted_aid: int

    @property
    def accepted_index(self) -> int:
        return next(i for i, (aid, _) in enumerate(self.candidates) if aid == self.accepted_aid)

    def __len__(self) -> int:
        return len(self.candidates)

    def to_record(self) -> dict[str, Any]:
        return {
            "qid": self.qid,
            "query": self.query,
            "candidates": [{"aid": aid, "qid": src} for (aid, _), src in zip(self.candidates, self.sources)],
            "accepted_aid": self.accepted_aid,
        }


def _representative(corpus: Corpus, post_id: int) -> Answer | None:
    """Accepted answer of a post, else its lowest-id answer."""
    return corpus.accepted_answer(post_id) or next(iter(corpus.answers_of(post_id)), None)


def build_pools(
    question_ids: Iterable[int],
    corpus: Corpus,
    index: TitleIndex,
    k: int = 5,
    booster: Callable[[list[str]], list[str]] | None = None,
) -> list[CandidatePool]:
    """Build one pool of up to ``k`` answers per question that has an accepted answer.

    Slots after the accepted answer follow the similar-question order
    (excluding the question itself), one answer per retrieved post, skipping
    answer ids already in the pool.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    pools, short, skipped = [], 0, 0
    for qid in question_ids:
        post = corpus.post_by_id.get(qid)
        accepted = corpus.accepted_answer(qid) if post else None
        if post is None or accepted is None:
            skipped += 1
            continue
        title = tokenize(post.title)
        candidates = [(accepted.id, tokenize(accepted.body))]
        sources = [qid]
        seen = {accepted.id}
        if k > 1 and len(index):
            scores = index.scores(title)
            for i in np.lexsort((index.post_ids, -scores)):
                source = int(index.post_ids[i])
                answer = _representative(corpus, source) if source != qid else None
                if answer is None or answer.id in seen:
                    continue
                seen.add(answer.id)
                candidates.append((answer.id, tokenize(answer.body)))
                sources.append(source)
                if len(candidates) == k:
                    break
        if len(candidates) < k:
            short += 1
        query = booster(title) if booster is not None else title
        pools.append(CandidatePool(qid, list(query), candidates, sources, accepted.id))
    if short or skipped:
        logger.warning(
            "%d pools hold fewer than %d answers; %d questions without an accepted answer skipped",
            short,
            k,
            skipped,
        )
    return pools


@dataclass(frozen=True)
class RankedPool:
    """Ranker output for one pool: answer ids best first, plus the accepted answer id."""

    qid: int
    ranked: list[int]
    accepted_aid: int

    @property
    def best_rank(self) -> int:
        """1-based position of the accepted answer."""
        return self.ranked.index(self.accepted_aid) + 1

    def __len__(self) -> int:
        return len(self.ranked)


@dataclass(frozen=True)
class MetricSummary:
    """Mean and sample standard deviation over questions; ``None`` when undefined."""

    mean: float | None
    sd: float | None
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> MetricSummary:
        if not values:
            return cls(None, None, 0)
        array = np.asarray(values, dtype=np.float64)
        sd = float(np.std(array, ddof=1)) if len(array) > 1 else None
        return cls(float(np.mean(array)), sd, len(array))

    def to_record(self) -> dict[str, Any]:
        return {"mean": self.mean, "sd": self.sd, "n": self.n}

    def format(self) -> str:
        if self.mean is None:
            return "n/a"
        return f"{self.mean:.3f}" if self.sd is None else f"{self.mean:.3f}±{self.sd:.3f}"


def _eligible(pools: Sequence[RankedPool], k: int) -> list[RankedPool]:
    if k < 1:
        raise ValueError(f"K must be at least 1, got {k}")
    return [pool for pool in pools if len(pool) >= k]


def precision_at_k(pools: Sequence[RankedPool], k: int) -> MetricSummary:
    """Share of pools whose accepted answer is ranked within the top ``k``."""
    return MetricSummary.of([float(p.best_rank <= k) for p in _eligible(pools, k)])


def dcg_at_k(pools: Sequence[RankedPool], k: int) -> MetricSummary:
    """``1 / log2(1 + rank)`` of the accepted answer when it is in the top ``k``, else 0."""
    return MetricSummary.of(
        [1.0 / math.log2(1 + p.best_rank) if p.best_rank <= k else 0.0 for p in _eligible(pools, k)]
    )


@dataclass(frozen=True)
class EvalReport:
    precision: dict[int, MetricSummary]
    dcg: dict[int, MetricSummary]
    n_questions: int
    config: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {
            "precision": {f"P@{k}": m.to_record() for k, m in self.precision.items()},
            "dcg": {f"DCG@{k}": m.to_record() for k, m in self.dcg.items()},
            "n_questions": self.n_questions,
            "spread": SPREAD,
            "config": self.config,
        }


def evaluate_rankings(pools: Sequence[RankedPool], config: dict[str, Any] | None = None) -> EvalReport:
    return EvalReport(
        precision={k: precision_at_k(pools, k) for k in PRECISION_KS},
        dcg={k: dcg_at_k(pools, k) for k in DCG_KS},
        n_questions=len(pools),
        config=dict(config or {}),
    )


Ranking = Callable[[CandidatePool], list[tuple[int, float]]]


def oracle_ranking(pool: CandidatePool) -> list[tuple[int, float]]:
    """Scores the accepted answer +inf and everything else 0."""
    return rank_by_scores((aid, math.inf if aid == pool.accepted_aid else 0.0) for aid, _ in pool.candidates)


def _rank_all(pools: Sequence[CandidatePool], ranking: Ranking) -> list[RankedPool]:
    return [RankedPool(p.qid, [aid for aid, _ in ranking(p)], p.accepted_aid) for p in pools]


def evaluate(
    params: RankerParams | None,
    weights: ScoreWeights,
    pools: Sequence[CandidatePool],
    config: dict[str, Any] | None = None,
    ranking: Ranking | None = None,
) -> EvalReport:
    """Rank every pool with the trained ranker (or ``ranking``) and aggregate the metrics."""
    if ranking is None:
        if params is None:
            raise ValueError("evaluate needs ranker params or a ranking function")

        def ranking(pool: CandidatePool) -> list[tuple[int, float]]:
            return rank_candidates(pool.query, pool.candidates, params, weights)

    return evaluate_rankings(_rank_all(pools, ranking), config)


def format_table(report: EvalReport) -> str:
    """Aligned plain-text table: P@1-P@4 then DCG@2-DCG@5, with the pools counted per column."""
    headers = [f"P@{k}" for k in report.precision] + [f"DCG@{k}" for k in report.dcg]
    metrics = [*report.precision.values(), *report.dcg.values()]
    cells = [m.format() for m in metrics]
    counts = [f"n={m.n}" for m in metrics]
    widths = [max(len(h), len(c), len(n)) for h, c, n in zip(headers, cells, counts)]
    lines = [
        "  ".join(h.rjust(w) for h, w in zip(headers, widths)),
        "  ".join(c.rjust(w) for c, w in zip(cells, widths)),
        "  ".join(n.rjust(w) for n, w in zip(counts, widths)),
        f"n_questions={report.n_questions} (± is the {SPREAD}; n counts the pools holding at least K answers)",
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepRow:
    k: int
    precision: dict[int, float | None]
    n_questions: int

    def to_record(self) -> dict[str, Any]:
        return {"k": self.k, "precision": {f"P@{j}": v for j, v in self.precision.items()}, "n_questions": self.n_questions}


def robustness_sweep(
    k_values: Iterable[int],
    pools_at: Callable[[int], Sequence[CandidatePool]],
    ranking: Ranking,
) -> list[SweepRow]:
    """Rebuild pools at every ``k`` and report mean P@1..P@5, K clamped to ``k``."""
    rows = []
    for k in k_values:
        ranked = _rank_all(pools_at(k), ranking)
        precision = {j: precision_at_k(ranked, min(j, k)).mean for j in SWEEP_KS}
        rows.append(SweepRow(k, precision, len(ranked)))
        logger.info("k=%d: P@1 %s", k, precision[1])
    return rows


def format_sweep_table(rows: Sequence[SweepRow]) -> str:
    header = ["k"] + [f"P@{j}" for j in SWEEP_KS]
    body = [
        [str(row.k)] + ["n/a" if row.precision[j] is None else f"{row.precision[j]:.3f}" for j in SWEEP_KS]
        for row in rows
    ]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in [header, *body]) + "\n"


def split_questions(
    question_ids: Iterable[int],
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
    val_cap: int = 5000,
    test_cap: int = 5000,
    seed: int = 0,
) -> tuple[list[int], list[int], list[int]]:
    """Random ``(train, val, test)`` split of question ids, each part sorted.

    The held-out parts take the given fractions, capped at ``val_cap`` and
    ``test_cap`` questions; the training part is never empty.
    """
    for name, fraction in (("val_fraction", val_fraction), ("test_fraction", test_fraction)):
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {fraction}")
    ids = sorted(set(question_ids))
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = min(test_cap, round(test_fraction * len(ids)))
    n_val = min(val_cap, round(val_fraction * len(ids)))
    while n_test + n_val >= len(ids) and n_test + n_val > 0:
        if n_val >= n_test:
            n_val -= 1
        else:
            n_test -= 1
    test = sorted(ids[i] for i in order[:n_test])
    val = sorted(ids[i] for i in order[n_test : n_test + n_val])
    train = sorted(ids[i] for i in order[n_test + n_val :])
    return train, val, test
