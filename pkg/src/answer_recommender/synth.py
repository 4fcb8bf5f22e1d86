"""Planted synthetic StackExchange dump.

Every topic owns a handful of made-up title words. Inside a topic there is one
question per subtopic; a subtopic is marked by ``s<i>`` in the title and by a
clarifying-question comment asking about ``c<i>``. The accepted answer repeats
both markers, the second answer of the thread repeats neither. Topics share no
content vocabulary, so the only way to tell the accepted answer apart from the
accepted answers of sibling questions is to match the markers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from lxml import etree

from .util import atomic_write_text

__all__ = [
    "SyntheticDump",
    "generate_synthetic_dump",
]

logger = logging.getLogger(__name__)

START = datetime(2020, 1, 1, tzinfo=timezone.utc)
TOPIC_WORDS = 3
# One duplicate question (linked in PostLinks.xml) is planted for every this many topics.
DUPLICATE_EVERY = 10


@dataclass(frozen=True)
class SyntheticDump:
    """What :func:`generate_synthetic_dump` wrote."""

    directory: Path
    n_questions: int
    n_answers: int
    n_comments: int
    n_duplicates: int


def _stamp(moment: datetime) -> str:
    return moment.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3]


def _row(**attributes: object) -> str:
    element = etree.Element("row", {k: str(v) for k, v in attributes.items() if v is not None})
    return etree.tostring(element, encoding="unicode")


def _write_rows(path: Path, root: str, rows: list[str]) -> Path:
    lines = ['<?xml version="1.0" encoding="utf-8"?>', f"<{root}>", *(f"  {row}" for row in rows), f"</{root}>"]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def generate_synthetic_dump(
    directory: Path | str,
    n_topics: int = 40,
    n_subtopics: int = 5,
    seed: int = 0,
) -> SyntheticDump:
    """Write ``Posts.xml``, ``Comments.xml`` and ``PostLinks.xml`` of a planted corpus to ``directory``."""
    if n_topics < 2 or n_subtopics < 2:
        raise ValueError(f"Need at least 2 topics and 2 subtopics, got {n_topics} and {n_subtopics}")
    directory = Path(directory)
    rng = np.random.default_rng(seed)
    posts, comments, links = [], [], []
    next_id = 1
    n_questions = n_answers = n_duplicates = 0

    def new_id() -> int:
        nonlocal next_id
        next_id += 1
        return next_id - 1

    for topic in range(n_topics):
        words = [f"t{topic}w{j}" for j in range(TOPIC_WORDS)]
        for sub in range(n_subtopics):
            created = START + timedelta(hours=len(posts))
            asker = 1000 + int(rng.integers(1_000_000))
            qid = new_id()
            title = f"how to fix {' '.join(words)} with s{sub} ?"
            accepted_body = (
                f"<p>for {words[0]} {words[1]} on s{sub} install c{sub} then restart {words[2]}</p>"
            )
            other_body = f"<p>{words[0]} {words[1]} {words[2]} usually works again after a reboot</p>"
            first_id, second_id = new_id(), new_id()
            # The accepted answer is not always the first one posted.
            accepted_id, other_id = (first_id, second_id) if rng.random() < 0.5 else (second_id, first_id)
            posts.append(
                _row(
                    Id=qid,
                    PostTypeId=1,
                    AcceptedAnswerId=accepted_id,
                    CreationDate=_stamp(created),
                    Title=title,
                    Body=f"<p>my {words[0]} broke, it uses s{sub} and <code>{words[2]}.conf</code></p>",
                    Tags=f"<{words[0]}><s{sub}>",
                    OwnerUserId=asker,
                )
            )
            comments.append(
                _row(
                    Id=len(comments) + 1,
                    PostId=qid,
                    Text=f"do you use c{sub} ?",
                    CreationDate=_stamp(created + timedelta(minutes=10)),
                    UserId=asker + 1,
                )
            )
            comments.append(
                _row(
                    Id=len(comments) + 1,
                    PostId=qid,
                    Text="thanks, I will try that.",
                    CreationDate=_stamp(created + timedelta(minutes=90)),
                    UserId=asker,
                )
            )
            for answer_id, body, delay in sorted(
                [(accepted_id, accepted_body, 60), (other_id, other_body, 75)]
            ):
                posts.append(
                    _row(
                        Id=answer_id,
                        PostTypeId=2,
                        ParentId=qid,
                        CreationDate=_stamp(created + timedelta(minutes=delay)),
                        Body=body,
                        OwnerUserId=asker + 2 + (answer_id - qid),
                    )
                )
            n_questions += 1
            n_answers += 2

            if sub == 0 and topic % DUPLICATE_EVERY == 0:
                duplicate = new_id()
                posts.append(
                    _row(
                        Id=duplicate,
                        PostTypeId=1,
                        CreationDate=_stamp(created + timedelta(days=30)),
                        Title=title,
                        Body="<p>same problem here</p>",
                        OwnerUserId=asker + 7,
                    )
                )
                links.append(
                    _row(
                        Id=len(links) + 1,
                        CreationDate=_stamp(created + timedelta(days=31)),
                        PostId=duplicate,
                        RelatedPostId=qid,
                        LinkTypeId=3,
                    )
                )
                n_duplicates += 1

    _write_rows(directory / "Posts.xml", "posts", posts)
    _write_rows(directory / "Comments.xml", "comments", comments)
    _write_rows(directory / "PostLinks.xml", "postlinks", links)
    logger.info(
        "Wrote a synthetic dump of %d questions (%d planted duplicates) to %s", n_questions, n_duplicates, directory
    )
    return SyntheticDump(directory, n_questions, n_answers, len(comments), n_duplicates)
