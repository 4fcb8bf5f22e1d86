"""StackExchange dump ingestion, clarifying-question extraction and corpus statistics.

Dumps are row-per-line XML (``<row Id="…" … />``). Rows are parsed one line at a
time with :mod:`lxml` so that a single malformed row only costs that row.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from functools import cached_property
from pathlib import Path
from typing import Any

from lxml import etree
from tqdm import tqdm

from .text import parse_tags, parse_timestamp, split_sentences, strip_html, tokenize
from .util import read_jsonl, write_jsonl

__all__ = [
    "Answer",
    "ClarifyingQuestion",
    "Comment",
    "Corpus",
    "CqAnswerProbability",
    "DEFAULT_EXCLUDE_KEYWORDS",
    "DEFAULT_KEY_PHRASES",
    "HungerStats",
    "ParseSummary",
    "Post",
    "compute_hunger_stats",
    "cq_answer_probability",
    "extract_clarifying_questions",
    "parse_comments",
    "parse_posts",
    "qcq_pairs",
]

logger = logging.getLogger(__name__)

MAX_CQ_TOKENS = 20
SECONDS_PER_DAY = 86400.0

DEFAULT_KEY_PHRASES: tuple[str, ...] = (
    "do you",
    "have you",
    "did you",
    "are you",
    "can you",
    "could you",
    "what",
    "which",
    "how",
    "why",
    "where",
    "when",
)
DEFAULT_EXCLUDE_KEYWORDS: tuple[str, ...] = (
    "edit",
    "related",
    "vote",
    "duplicate",
    "upvote",
    "downvote",
)


def _optional_int(value: Any) -> int | None:
    return None if value is None else int(value)


@dataclass(frozen=True)
class Post:
    """A question post."""

    id: int
    title: str
    body: str
    tags: list[str]
    created_at: datetime
    accepted_answer_id: int | None = None
    author_id: int | None = None

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "body": self.body,
            "tags": list(self.tags),
            "created_at": self.created_at.isoformat(),
            "accepted_answer_id": self.accepted_answer_id,
            "author_id": self.author_id,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> Post:
        return cls(
            id=int(record["id"]),
            title=record["title"],
            body=record["body"],
            tags=list(record["tags"]),
            created_at=datetime.fromisoformat(record["created_at"]),
            accepted_answer_id=_optional_int(record.get("accepted_answer_id")),
            author_id=_optional_int(record.get("author_id")),
        )


@dataclass(frozen=True)
class Answer:
    """An answer post."""

    id: int
    parent_id: int
    body: str
    created_at: datetime
    author_id: int | None = None
    is_accepted: bool = False

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "body": self.body,
            "created_at": self.created_at.isoformat(),
            "author_id": self.author_id,
            "is_accepted": self.is_accepted,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> Answer:
        return cls(
            id=int(record["id"]),
            parent_id=int(record["parent_id"]),
            body=record["body"],
            created_at=datetime.fromisoformat(record["created_at"]),
            author_id=_optional_int(record.get("author_id")),
            is_accepted=bool(record.get("is_accepted", False)),
        )


@dataclass(frozen=True)
class Comment:
    """A comment on a question post."""

    id: int
    post_id: int
    text: str
    created_at: datetime
    author_id: int | None = None

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "post_id": self.post_id,
            "text": self.text,
            "created_at": self.created_at.isoformat(),
            "author_id": self.author_id,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> Comment:
        return cls(
            id=int(record["id"]),
            post_id=int(record["post_id"]),
            text=record["text"],
            created_at=datetime.fromisoformat(record["created_at"]),
            author_id=_optional_int(record.get("author_id")),
        )


@dataclass(frozen=True)
class ClarifyingQuestion:
    """A question sentence taken from a comment, truncated at its first ``?``."""

    post_id: int
    tokens: list[str]
    created_at: datetime
    author_id: int | None = None
    comment_id: int | None = None

    def __post_init__(self):
        if not self.tokens or self.tokens[-1] != "?" or len(self.tokens) > MAX_CQ_TOKENS:
            raise ValueError(f"Not a clarifying question: {self.tokens!r}")

    def to_record(self) -> dict[str, Any]:
        return {
            "post_id": self.post_id,
            "tokens": list(self.tokens),
            "created_at": self.created_at.isoformat(),
            "author_id": self.author_id,
            "comment_id": self.comment_id,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> ClarifyingQuestion:
        return cls(
            post_id=int(record["post_id"]),
            tokens=list(record["tokens"]),
            created_at=datetime.fromisoformat(record["created_at"]),
            author_id=_optional_int(record.get("author_id")),
            comment_id=_optional_int(record.get("comment_id")),
        )


@dataclass
class ParseSummary:
    """Counters collected while parsing one dump file."""

    rows: int = 0
    kept: int = 0
    malformed: int = 0
    missing_fields: int = 0
    duplicates_removed: int = 0
    orphans: int = 0

    @property
    def skipped(self) -> int:
        return self.malformed + self.missing_fields

    def to_record(self) -> dict[str, int]:
        return {
            "rows": self.rows,
            "kept": self.kept,
            "malformed": self.malformed,
            "missing_fields": self.missing_fields,
            "duplicates_removed": self.duplicates_removed,
            "orphans": self.orphans,
        }


@dataclass(frozen=True)
class HungerStats:
    """Unanswered/unresolved proportions and waiting times of a corpus."""

    n_questions: int = 0
    n_unanswered: int = 0
    n_resolved: int = 0
    n_unresolved: int = 0
    avg_waiting_days: float = 0.0
    avg_accepting_days: float = 0.0

    def to_record(self) -> dict[str, Any]:
        return {
            "n_questions": self.n_questions,
            "n_unanswered": self.n_unanswered,
            "n_resolved": self.n_resolved,
            "n_unresolved": self.n_unresolved,
            "avg_waiting_days": self.avg_waiting_days,
            "avg_accepting_days": self.avg_accepting_days,
        }


@dataclass(frozen=True)
class CqAnswerProbability:
    """Answer probabilities with and without a clarifying question.

    A probability is ``None`` when its denominator is empty.
    """

    p_with: float | None
    p_without: float | None
    n_with: int = 0
    n_with_answered: int = 0
    n_without: int = 0
    n_without_answered: int = 0

    def to_record(self) -> dict[str, Any]:
        return {
            "p_with": self.p_with,
            "p_without": self.p_without,
            "n_with": self.n_with,
            "n_with_answered": self.n_with_answered,
            "n_without": self.n_without,
            "n_without_answered": self.n_without_answered,
        }


@dataclass(frozen=True)
class Corpus:
    """Immutable bundle of parsed posts, answers and question comments."""

    posts: list[Post]
    answers: list[Answer]
    comments: list[Comment] = field(default_factory=list)

    @cached_property
    def post_by_id(self) -> dict[int, Post]:
        return {post.id: post for post in self.posts}

    @cached_property
    def answer_by_id(self) -> dict[int, Answer]:
        return {answer.id: answer for answer in self.answers}

    @cached_property
    def answers_by_post(self) -> dict[int, list[Answer]]:
        grouped: dict[int, list[Answer]] = defaultdict(list)
        for answer in sorted(self.answers, key=lambda a: a.id):
            grouped[answer.parent_id].append(answer)
        return dict(grouped)

    def answers_of(self, post_id: int) -> list[Answer]:
        """Answers of a post, ascending by id."""
        return self.answers_by_post.get(post_id, [])

    def accepted_answer(self, post_id: int) -> Answer | None:
        post = self.post_by_id.get(post_id)
        if post is None or post.accepted_answer_id is None:
            return None
        return self.answer_by_id.get(post.accepted_answer_id)

    def write(self, directory: Path | str) -> dict[str, Path]:
        """Write ``posts.jsonl``, ``answers.jsonl`` and ``comments.jsonl``."""
        directory = Path(directory)
        return {
            "posts": write_jsonl(directory / "posts.jsonl", (p.to_record() for p in self.posts)),
            "answers": write_jsonl(directory / "answers.jsonl", (a.to_record() for a in self.answers)),
            "comments": write_jsonl(
                directory / "comments.jsonl", (c.to_record() for c in self.comments)
            ),
        }

    @classmethod
    def read(cls, directory: Path | str) -> Corpus:
        directory = Path(directory)
        return cls(
            posts=[Post.from_record(r) for r in read_jsonl(directory / "posts.jsonl")],
            answers=[Answer.from_record(r) for r in read_jsonl(directory / "answers.jsonl")],
            comments=[Comment.from_record(r) for r in read_jsonl(directory / "comments.jsonl")],
        )


def _iter_rows(path: Path | str, summary: ParseSummary) -> Iterator[dict[str, str]]:
    """Yield the attribute dict of every ``<row>`` line, counting malformed ones."""
    with open(path, encoding="utf-8") as f:
        for line in tqdm(f, desc=Path(path).name, unit=" rows", disable=None, leave=False):
            line = line.strip()
            if not line.startswith("<row"):
                continue
            summary.rows += 1
            try:
                element = etree.fromstring(line)
            except etree.XMLSyntaxError:
                summary.malformed += 1
                continue
            yield dict(element.attrib)


def _read_duplicate_ids(path: Path | str) -> set[int]:
    """Ids of posts linked as duplicates (``LinkTypeId=3``) of a master post."""
    summary = ParseSummary()
    duplicates = set()
    for row in _iter_rows(path, summary):
        if row.get("LinkTypeId") == "3" and row.get("PostId") and row.get("RelatedPostId"):
            if row["PostId"] == row["RelatedPostId"]:
                continue
            try:
                duplicates.add(int(row["PostId"]))
            except ValueError:
                summary.malformed += 1
    if summary.malformed:
        logger.warning("Skipped %d malformed rows in %s", summary.malformed, path)
    return duplicates


@dataclass(frozen=True)
class _PostFields:
    """The typed attributes of one ``Posts.xml`` row."""

    id: int
    created_at: datetime
    parent_id: int | None
    accepted_answer_id: int | None
    author_id: int | None
    row: dict[str, str]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> _PostFields:
        """Raise ``ValueError`` when an id or the timestamp does not parse."""
        return cls(
            id=int(row["Id"]),
            created_at=parse_timestamp(row["CreationDate"]),
            parent_id=_optional_int(row.get("ParentId")),
            accepted_answer_id=_optional_int(row.get("AcceptedAnswerId")),
            author_id=_optional_int(row.get("OwnerUserId")),
            row=row,
        )


def _log_skipped(path: Path | str, summary: ParseSummary) -> None:
    if summary.skipped:
        logger.warning(
            "Skipped %d rows of %s (%d malformed, %d missing fields)",
            summary.skipped,
            path,
            summary.malformed,
            summary.missing_fields,
        )


def parse_posts(
    path: Path | str,
    duplicates: Path | str | None = None,
) -> tuple[list[Post], list[Answer], ParseSummary]:
    """Parse ``Posts.xml`` into questions and answers.

    Duplicate questions listed in the optional ``PostLinks.xml`` are dropped
    (the master post is kept) together with their answers. Bodies are reduced
    to text with code blocks removed. A row whose ids or ``CreationDate`` do
    not parse is counted as malformed and skipped.
    """
    summary = ParseSummary()
    raw_questions: list[_PostFields] = []
    raw_answers: list[_PostFields] = []
    for row in _iter_rows(path, summary):
        if not row.get("Id") or not row.get("CreationDate"):
            summary.missing_fields += 1
            continue
        post_type = row.get("PostTypeId")
        if post_type not in ("1", "2"):
            continue
        if post_type == "2" and not row.get("ParentId"):
            summary.missing_fields += 1
            continue
        try:
            fields = _PostFields.from_row(row)
        except ValueError as exc:
            summary.malformed += 1
            logger.debug("Malformed post row %r in %s: %s", row.get("Id"), path, exc)
            continue
        (raw_questions if post_type == "1" else raw_answers).append(fields)

    duplicate_ids = _read_duplicate_ids(duplicates) if duplicates is not None else set()

    questions: dict[int, _PostFields] = {}
    for fields in raw_questions:
        if fields.id in duplicate_ids:
            summary.duplicates_removed += 1
            continue
        if not " ".join(fields.row.get("Title", "").split()):
            summary.missing_fields += 1
            continue
        questions[fields.id] = fields

    answers: list[Answer] = []
    answer_parent: dict[int, int] = {}
    for fields in raw_answers:
        if fields.parent_id not in questions:
            summary.orphans += 1
            continue
        answer_parent[fields.id] = fields.parent_id
        answers.append(
            Answer(
                id=fields.id,
                parent_id=fields.parent_id,
                body=strip_html(fields.row.get("Body", "")),
                created_at=fields.created_at,
                author_id=fields.author_id,
            )
        )

    posts: list[Post] = []
    accepted_ids: set[int] = set()
    for post_id, fields in questions.items():
        accepted = fields.accepted_answer_id
        if accepted is not None and answer_parent.get(accepted) != post_id:
            accepted = None
        if accepted is not None:
            accepted_ids.add(accepted)
        posts.append(
            Post(
                id=post_id,
                title=" ".join(fields.row["Title"].split()),
                body=strip_html(fields.row.get("Body", "")),
                tags=parse_tags(fields.row.get("Tags")),
                created_at=fields.created_at,
                accepted_answer_id=accepted,
                author_id=fields.author_id,
            )
        )

    answers = [
        Answer(
            id=a.id,
            parent_id=a.parent_id,
            body=a.body,
            created_at=a.created_at,
            author_id=a.author_id,
            is_accepted=a.id in accepted_ids,
        )
        for a in answers
    ]
    posts.sort(key=lambda p: p.id)
    answers.sort(key=lambda a: a.id)
    summary.kept = len(posts) + len(answers)
    _log_skipped(path, summary)
    return posts, answers, summary


def parse_comments(
    path: Path | str, posts: Iterable[Post]
) -> tuple[list[Comment], ParseSummary]:
    """Parse ``Comments.xml``, keeping only comments on question posts.

    Rows with unparsable ids or timestamps are counted as malformed and skipped.
    """
    question_ids = {post.id for post in posts}
    summary = ParseSummary()
    comments: list[Comment] = []
    for row in _iter_rows(path, summary):
        if not row.get("Id") or not row.get("CreationDate") or not row.get("PostId"):
            summary.missing_fields += 1
            continue
        try:
            comment = Comment(
                id=int(row["Id"]),
                post_id=int(row["PostId"]),
                text=" ".join(row.get("Text", "").split()),
                created_at=parse_timestamp(row["CreationDate"]),
                author_id=_optional_int(row.get("UserId")),
            )
        except ValueError as exc:
            summary.malformed += 1
            logger.debug("Malformed comment row %r in %s: %s", row.get("Id"), path, exc)
            continue
        if comment.post_id not in question_ids:
            summary.orphans += 1
            continue
        comments.append(comment)
    comments.sort(key=lambda c: c.id)
    summary.kept = len(comments)
    _log_skipped(path, summary)
    return comments, summary


def _contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    return any(list(tokens[i : i + n]) == list(phrase) for i in range(len(tokens) - n + 1))


def question_sentences(text: str) -> list[list[str]]:
    """Token lists of every question sentence in ``text``, truncated at the first ``?``."""
    questions = []
    for sentence in split_sentences(text):
        tokens = tokenize(sentence)
        if "?" not in tokens:
            continue
        tokens = tokens[: tokens.index("?") + 1]
        if len(tokens) <= MAX_CQ_TOKENS:
            questions.append(tokens)
    return questions


def extract_clarifying_questions(
    comments: Iterable[Comment],
    posts: Iterable[Post],
    key_phrases: Sequence[str] = DEFAULT_KEY_PHRASES,
    exclude_keywords: Sequence[str] = DEFAULT_EXCLUDE_KEYWORDS,
    apply_keyword_filter: bool = True,
    exclude_asker: bool = True,
) -> list[ClarifyingQuestion]:
    """Extract clarifying questions from question comments.

    Every question sentence of a comment becomes its own candidate. With
    ``apply_keyword_filter`` (the training-pair set) candidates containing an
    exclusion keyword are dropped and only those containing a key phrase are
    kept. With ``exclude_asker`` questions written by the post's author are dropped.
    """
    askers = {post.id: post.author_id for post in posts}
    phrases = [tokenize(p) for p in key_phrases]
    excluded = {k.lower() for k in exclude_keywords}
    result = []
    for comment in comments:
        if comment.post_id not in askers:
            continue
        asker = askers[comment.post_id]
        if exclude_asker and asker is not None and comment.author_id == asker:
            continue
        for tokens in question_sentences(comment.text):
            if apply_keyword_filter:
                if excluded.intersection(tokens):
                    continue
                if not any(_contains_phrase(tokens, p) for p in phrases if p):
                    continue
            result.append(
                ClarifyingQuestion(
                    post_id=comment.post_id,
                    tokens=tokens,
                    created_at=comment.created_at,
                    author_id=comment.author_id,
                    comment_id=comment.id,
                )
            )
    return result


def qcq_pairs(
    posts: Iterable[Post], cqs: Iterable[ClarifyingQuestion]
) -> list[tuple[list[str], list[str]]]:
    """⟨title tokens, clarifying question tokens⟩ training pairs, one per distinct cq text."""
    titles = {post.id: tokenize(post.title) for post in posts}
    seen: set[tuple[int, tuple[str, ...]]] = set()
    pairs = []
    for cq in sorted(cqs, key=lambda c: (c.post_id, c.created_at, c.comment_id or 0)):
        key = (cq.post_id, tuple(cq.tokens))
        if cq.post_id not in titles or key in seen or not titles[cq.post_id]:
            continue
        seen.add(key)
        pairs.append((titles[cq.post_id], list(cq.tokens)))
    return pairs


def _days(delta: timedelta) -> float:
    return max(delta.total_seconds(), 0.0) / SECONDS_PER_DAY


def compute_hunger_stats(posts: Sequence[Post], answers: Sequence[Answer]) -> HungerStats:
    """Count unanswered/resolved/unresolved questions and average waiting times."""
    if not posts:
        return HungerStats()
    by_id = {post.id: post for post in posts}
    answered: set[int] = set()
    waits: list[float] = []
    accepts: list[float] = []
    for answer in answers:
        question = by_id.get(answer.parent_id)
        if question is None:
            continue
        answered.add(question.id)
        waited = _days(answer.created_at - question.created_at)
        waits.append(waited)
        if answer.is_accepted or question.accepted_answer_id == answer.id:
            accepts.append(waited)

    resolved = sum(
        1 for post in posts if post.id in answered and post.accepted_answer_id is not None
    )
    unanswered = sum(1 for post in posts if post.id not in answered)
    return HungerStats(
        n_questions=len(posts),
        n_unanswered=unanswered,
        n_resolved=resolved,
        n_unresolved=len(posts) - unanswered - resolved,
        avg_waiting_days=sum(waits) / len(waits) if waits else 0.0,
        avg_accepting_days=sum(accepts) / len(accepts) if accepts else 0.0,
    )


def cq_answer_probability(
    posts: Sequence[Post],
    answers: Sequence[Answer],
    comments: Sequence[Comment],
    dump_date: datetime,
    recent_days: float = 7.0,
) -> CqAnswerProbability:
    """Estimate P(answered | clarifying question) and P(answered | no clarifying question).

    Filters, in order: questions whose asker answered them; unanswered
    questions younger than ``recent_days`` at ``dump_date``; clarifying
    questions written by the asker; clarifying questions posted at or after
    the first answer of the thread.
    """
    answers_by_post: dict[int, list[Answer]] = defaultdict(list)
    for answer in answers:
        answers_by_post[answer.parent_id].append(answer)

    kept: dict[int, Post] = {}
    for post in posts:
        thread = answers_by_post.get(post.id, [])
        if post.author_id is not None and any(a.author_id == post.author_id for a in thread):
            continue
        if not thread and dump_date - post.created_at < timedelta(days=recent_days):
            continue
        kept[post.id] = post

    cqs = extract_clarifying_questions(
        comments, kept.values(), apply_keyword_filter=False, exclude_asker=True
    )
    with_cq: set[int] = set()
    for cq in cqs:
        thread = answers_by_post.get(cq.post_id, [])
        if thread and cq.created_at >= min(a.created_at for a in thread):
            continue
        with_cq.add(cq.post_id)

    n_with = n_with_answered = n_without = n_without_answered = 0
    for post_id in kept:
        answered = bool(answers_by_post.get(post_id))
        if post_id in with_cq:
            n_with += 1
            n_with_answered += answered
        else:
            n_without += 1
            n_without_answered += answered

    return CqAnswerProbability(
        p_with=n_with_answered / n_with if n_with else None,
        p_without=n_without_answered / n_without if n_without else None,
        n_with=n_with,
        n_with_answered=n_with_answered,
        n_without=n_without,
        n_without_answered=n_without_answered,
    )


def write_clarifying_questions(path: Path | str, cqs: Iterable[ClarifyingQuestion]) -> Path:
    return write_jsonl(path, (cq.to_record() for cq in cqs))


def read_clarifying_questions(path: Path | str) -> list[ClarifyingQuestion]:
    return [ClarifyingQuestion.from_record(r) for r in read_jsonl(path)]
