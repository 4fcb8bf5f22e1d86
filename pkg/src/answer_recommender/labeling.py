"""Weakly supervised QA pairs built from acceptance and similarity signals.

For every question with an accepted answer:

- the accepted answer is **Positive**,
- every other answer in the same thread is **NeutralPlus**,
- one answer drawn from a similar question is **NeutralMinus**,
- one answer drawn from a question outside the similar set is **Negative**.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .corpus import Answer, Post
from .retrieval import TitleIndex
from .text import tokenize
from .util import read_jsonl, write_jsonl

__all__ = [
    "Label",
    "LabeledQAPair",
    "establish_labels",
    "label_histogram",
    "read_labeled_pairs",
    "write_labeled_pairs",
]

logger = logging.getLogger(__name__)

# Rejection-sampling attempts for a Negative before falling back to an explicit filter.
NEGATIVE_DRAWS = 64


class Label(enum.IntEnum):
    """The four label classes; the value is the class index of the ranker output."""

    POSITIVE = 0
    NEUTRAL_PLUS = 1
    NEUTRAL_MINUS = 2
    NEGATIVE = 3

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> Label:
        return cls[key.upper()]


@dataclass(frozen=True)
class LabeledQAPair:
    """A labeled ⟨question, answer⟩ pair with the post/answer it was drawn from.

    ``boosted`` holds the question joined with its generated clarifying
    question once question boosting has run; it is empty before that.
    """

    qid: int
    q_tokens: list[str]
    a_tokens: list[str]
    label: Label
    prov_qid: int
    prov_aid: int
    boosted: list[str] = field(default_factory=list)

    def question(self, drop_cq: bool = False) -> list[str]:
        """Ranker input for the question side."""
        if drop_cq or not self.boosted:
            return self.q_tokens
        return self.boosted

    def with_boosted(self, boosted: Sequence[str]) -> LabeledQAPair:
        return LabeledQAPair(
            self.qid, self.q_tokens, self.a_tokens, self.label, self.prov_qid, self.prov_aid, list(boosted)
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "qid": self.qid,
            "q_tokens": self.q_tokens,
            "a_tokens": self.a_tokens,
            "label": self.label.key,
            "prov_qid": self.prov_qid,
            "prov_aid": self.prov_aid,
            "boosted": self.boosted,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> LabeledQAPair:
        return cls(
            qid=int(record["qid"]),
            q_tokens=list(record["q_tokens"]),
            a_tokens=list(record["a_tokens"]),
            label=Label.from_key(record["label"]),
            prov_qid=int(record["prov_qid"]),
            prov_aid=int(record["prov_aid"]),
            boosted=list(record.get("boosted", [])),
        )


def _question_rng(seed: int, qid: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, qid]))


def establish_labels(
    posts: Sequence[Post],
    answers: Sequence[Answer],
    index: TitleIndex,
    k_sim: int = 5,
    seed: int = 0,
) -> list[LabeledQAPair]:
    """Label every question that has an accepted answer.

    Each question draws from its own generator seeded by ``(seed, question id)``,
    so the output does not depend on the order questions are processed in.
    """
    if k_sim < 1:
        raise ValueError(f"k_sim must be at least 1, got {k_sim}")
    tokens_of = {a.id: tokenize(a.body) for a in answers}
    usable = [a for a in sorted(answers, key=lambda a: a.id) if tokens_of[a.id]]
    by_post: dict[int, list[Answer]] = {}
    for answer in usable:
        by_post.setdefault(answer.parent_id, []).append(answer)

    pairs: list[LabeledQAPair] = []
    missing_similar = missing_negative = 0
    for post in sorted(posts, key=lambda p: p.id):
        accepted = next((a for a in by_post.get(post.id, []) if a.id == post.accepted_answer_id), None)
        if accepted is None:
            continue
        q_tokens = tokenize(post.title)
        rng = _question_rng(seed, post.id)

        def pair(answer: Answer, label: Label) -> LabeledQAPair:
            return LabeledQAPair(post.id, q_tokens, tokens_of[answer.id], label, answer.parent_id, answer.id)

        pairs.append(pair(accepted, Label.POSITIVE))
        pairs.extend(pair(a, Label.NEUTRAL_PLUS) for a in by_post[post.id] if a.id != accepted.id)

        similar = [pid for pid, _ in index.knn(q_tokens, k_sim + 1) if pid != post.id][:k_sim]
        similar_answers = [a for pid in similar for a in by_post.get(pid, [])]
        if similar_answers:
            pairs.append(pair(similar_answers[rng.integers(len(similar_answers))], Label.NEUTRAL_MINUS))
        else:
            missing_similar += 1

        excluded = {post.id, *similar}
        negative = _draw_negative(usable, excluded, rng)
        if negative is not None:
            pairs.append(pair(negative, Label.NEGATIVE))
        else:
            missing_negative += 1

    if missing_similar or missing_negative:
        logger.warning(
            "%d questions without a NeutralMinus and %d without a Negative candidate",
            missing_similar,
            missing_negative,
        )
    logger.info("Established %d labeled pairs: %s", len(pairs), label_histogram(pairs))
    return pairs


def _draw_negative(
    answers: Sequence[Answer], excluded: set[int], rng: np.random.Generator
) -> Answer | None:
    """Uniform draw among answers whose question is not in ``excluded``."""
    if not answers:
        return None
    for _ in range(NEGATIVE_DRAWS):
        candidate = answers[rng.integers(len(answers))]
        if candidate.parent_id not in excluded:
            return candidate
    eligible = [a for a in answers if a.parent_id not in excluded]
    return eligible[rng.integers(len(eligible))] if eligible else None


def label_histogram(pairs: Iterable[LabeledQAPair]) -> dict[str, int]:
    counts = Counter(p.label for p in pairs)
    return {label.key: counts[label] for label in Label}


def write_labeled_pairs(path: Path | str, pairs: Iterable[LabeledQAPair]) -> Path:
    return write_jsonl(path, (p.to_record() for p in pairs))


def read_labeled_pairs(path: Path | str) -> list[LabeledQAPair]:
    return [LabeledQAPair.from_record(r) for r in read_jsonl(path)]
