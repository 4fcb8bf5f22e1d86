"""Shared fixtures: a hand-built dump and tiny model configurations."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from answer_recommender.config import PipelineConfig
from answer_recommender.corpus import Answer, Comment, Post
from answer_recommender.ranker import RankerHyperparams
from answer_recommender.retrieval import IdfTable, TitleIndex, build_vocab, train_embeddings
from answer_recommender.text import tokenize

POSTS_XML = """<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="1" PostTypeId="1" AcceptedAnswerId="3" CreationDate="2020-01-01T00:00:00.000" Title="How do I install nvidia drivers?" Body="&lt;p&gt;Install fails &lt;code&gt;sudo apt&lt;/code&gt;&lt;/p&gt;" Tags="&lt;drivers&gt;&lt;nvidia&gt;" OwnerUserId="10" />
  <row Id="2" PostTypeId="2" ParentId="1" CreationDate="2020-01-02T00:00:00.000" Body="&lt;p&gt;Try the ppa.&lt;/p&gt;" OwnerUserId="11" />
  <row Id="3" PostTypeId="2" ParentId="1" CreationDate="2020-01-03T00:00:00.000" Body="&lt;p&gt;Use additional drivers.&lt;/p&gt;" OwnerUserId="12" />
  <row Id="4" PostTypeId="1" CreationDate="2020-01-01T00:00:00.000" Title="Wifi not working after upgrade" Body="&lt;p&gt;No wifi.&lt;/p&gt;" Tags="&lt;wifi&gt;" OwnerUserId="20" />
  <row Id="5" PostTypeId="1" CreationDate="2020-01-04T00:00:00.000" Title="Install nvidia drivers" Body="&lt;p&gt;Same.&lt;/p&gt;" Tags="&lt;nvidia&gt;" OwnerUserId="30" />
  <row Id="6" PostTypeId="1" CreationDate="2020-01-05T00:00:00.000" Title="Sound stopped working" Body="&lt;p&gt;Silence.&lt;/p&gt;" Tags="&lt;sound&gt;" OwnerUserId="40" />
  <row Id="7" PostTypeId="2" ParentId="6" CreationDate="2020-01-06T00:00:00.000" Body="&lt;p&gt;Fixed it myself with alsamixer.&lt;/p&gt;" OwnerUserId="40" />
  <row Id="8" PostTypeId="2" ParentId="999" CreationDate="2020-01-06T00:00:00.000" Body="&lt;p&gt;Orphan.&lt;/p&gt;" OwnerUserId="41" />
  <row Id="9" PostTypeId="1" Title="broken
  <row Id="10" PostTypeId="1" CreationDate="2020-01-01T00:00:00.000" Title="Boot hangs at splash" Body="&lt;p&gt;Stuck.&lt;/p&gt;" Tags="&lt;boot&gt;" OwnerUserId="50" />
  <row Id="11" PostTypeId="2" ParentId="10" CreationDate="2020-01-01T12:00:00.000" Body="&lt;p&gt;Add nomodeset.&lt;/p&gt;" OwnerUserId="51" />
</posts>
"""

COMMENTS_XML = """<?xml version="1.0" encoding="utf-8"?>
<comments>
  <row Id="1" PostId="1" Text="Which version do you use? Also, edit your post." CreationDate="2020-01-01T01:00:00.000" UserId="11" />
  <row Id="2" PostId="1" Text="Did you reboot?" CreationDate="2020-01-01T02:00:00.000" UserId="10" />
  <row Id="3" PostId="4" Text="Have you tried a duplicate search?" CreationDate="2020-01-01T03:00:00.000" UserId="21" />
  <row Id="4" PostId="10" Text="What GPU do you have?" CreationDate="2020-01-02T00:00:00.000" UserId="52" />
  <row Id="5" PostId="2" Text="Which ppa?" CreationDate="2020-01-02T01:00:00.000" UserId="13" />
</comments>
"""

POSTLINKS_XML = """<?xml version="1.0" encoding="utf-8"?>
<postlinks>
  <row Id="1" CreationDate="2020-01-05T00:00:00.000" PostId="5" RelatedPostId="1" LinkTypeId="3" />
  <row Id="2" CreationDate="2020-01-05T00:00:00.000" PostId="6" RelatedPostId="10" LinkTypeId="1" />
</postlinks>
"""

DUMP_DATE = datetime(2020, 1, 10, tzinfo=timezone.utc)


@pytest.fixture
def dump_dir(tmp_path: Path) -> Path:
    """Hand-built dump whose statistics are easy to count by hand."""
    directory = tmp_path / "dump"
    directory.mkdir()
    (directory / "Posts.xml").write_text(POSTS_XML, encoding="utf-8")
    (directory / "Comments.xml").write_text(COMMENTS_XML, encoding="utf-8")
    (directory / "PostLinks.xml").write_text(POSTLINKS_XML, encoding="utf-8")
    return directory


def day(n: float) -> datetime:
    return datetime(2020, 1, 1, tzinfo=timezone.utc) + timedelta(days=n)


def make_post(pid: int, title: str, accepted: int | None = None, author: int | None = None, created: float = 0.0) -> Post:
    return Post(pid, title, "", [], day(created), accepted, author)


def make_answer(aid: int, parent: int, body: str, author: int | None = None, created: float = 1.0) -> Answer:
    return Answer(aid, parent, body, day(created), author)


def make_comment(cid: int, post: int, text: str, author: int | None = None, created: float = 0.5) -> Comment:
    return Comment(cid, post, text, day(created), author)


def topic_corpus(n_topics: int = 10, per_topic: int = 5) -> tuple[list[Post], list[Answer]]:
    """Questions with one accepted and one other answer each; topics share no title words."""
    posts, answers = [], []
    next_id = 1
    for topic in range(n_topics):
        for sub in range(per_topic):
            qid, accepted, other = next_id, next_id + 1, next_id + 2
            next_id += 3
            posts.append(make_post(qid, f"t{topic}a t{topic}b s{sub}", accepted=accepted, author=qid))
            answers.append(make_answer(accepted, qid, f"t{topic}a fix s{sub}"))
            answers.append(make_answer(other, qid, f"t{topic}b reboot"))
    return posts, answers


def build_index(posts: list[Post], dim: int = 32, seed: int = 0) -> TitleIndex:
    titles = [tokenize(p.title) for p in posts]
    vocab = build_vocab(titles, 1000)
    embeddings = train_embeddings(titles, vocab, d=dim, epochs=0, seed=seed)
    return TitleIndex.build(((p.id, t) for p, t in zip(posts, titles)), embeddings, IdfTable.from_documents(titles))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_ranker_hyperparams() -> RankerHyperparams:
    return RankerHyperparams(dim=16, maps=8, widths=(2, 3), q_max_len=8, a_max_len=10, epochs=50, batch_size=16, lr=0.1)


@pytest.fixture
def tiny_config(tmp_path: Path) -> PipelineConfig:
    """A configuration small enough to run every stage of the pipeline in a test."""
    return PipelineConfig(
        dump_dir=tmp_path / "dump",
        workspace=tmp_path / "workspace",
        dim=16,
        embedding_epochs=2,
        hidden=32,
        beam=3,
        cq_max_len=8,
        qboost_epochs=15,
        qboost_lr=0.3,
        epochs=40,
        batch=16,
        lr=0.1,
        patience=10,
        maps=8,
        widths=(2, 3),
        q_max_len=16,
        a_max_len=16,
    )
