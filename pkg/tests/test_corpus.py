"""Tests for answer_recommender.corpus."""

from __future__ import annotations

import pytest
from conftest import DUMP_DATE, make_answer, make_comment, make_post

from answer_recommender.corpus import (
    ClarifyingQuestion,
    Corpus,
    HungerStats,
    compute_hunger_stats,
    cq_answer_probability,
    extract_clarifying_questions,
    parse_comments,
    parse_posts,
    qcq_pairs,
    question_sentences,
    read_clarifying_questions,
    write_clarifying_questions,
)


@pytest.fixture
def parsed(dump_dir):
    posts, answers, summary = parse_posts(dump_dir / "Posts.xml", dump_dir / "PostLinks.xml")
    comments, comment_summary = parse_comments(dump_dir / "Comments.xml", posts)
    return posts, answers, comments, summary, comment_summary


def test_parse_posts_drops_duplicates_orphans_and_malformed_rows(parsed):
    """Duplicates, orphan answers and broken rows are counted, not kept."""
    posts, answers, _, summary, _ = parsed
    assert [p.id for p in posts] == [1, 4, 6, 10]
    assert [a.id for a in answers] == [2, 3, 7, 11]
    assert summary.rows == 11
    assert summary.malformed == 1
    assert summary.duplicates_removed == 1
    assert summary.orphans == 1
    assert summary.kept == 8


def test_parse_posts_fields(parsed):
    """Titles, bodies, tags and acceptance come through normalized."""
    posts, answers, *_ = parsed
    first = posts[0]
    assert first.title == "How do I install nvidia drivers?"
    assert first.body == "Install fails"
    assert first.tags == ["drivers", "nvidia"]
    assert first.accepted_answer_id == 3
    assert first.author_id == 10
    assert [a.is_accepted for a in answers] == [False, True, False, False]


def test_parse_posts_without_postlinks_keeps_duplicates(dump_dir):
    """Without PostLinks.xml no question is treated as a duplicate."""
    posts, _, summary = parse_posts(dump_dir / "Posts.xml")
    assert 5 in {p.id for p in posts}
    assert summary.duplicates_removed == 0


def test_parse_comments_keeps_question_comments_only(parsed):
    """A comment on an answer post is an orphan."""
    _, _, comments, _, summary = parsed
    assert [c.id for c in comments] == [1, 2, 3, 4]
    assert summary.orphans == 1


GOOD_QUESTION = '<row Id="1" PostTypeId="1" CreationDate="2020-01-01T00:00:00.000" Title="Sound stopped working" />'


@pytest.mark.parametrize(
    "bad_row",
    [
        '<row Id="x2" PostTypeId="2" ParentId="1" CreationDate="2020-01-02T00:00:00.000" Body="Reboot." />',
        '<row Id="2" PostTypeId="2" ParentId="one" CreationDate="2020-01-02T00:00:00.000" Body="Reboot." />',
        '<row Id="2" PostTypeId="2" ParentId="1" CreationDate="not-a-date" Body="Reboot." />',
        '<row Id="4" PostTypeId="1" CreationDate="not-a-date" Title="Wifi is gone" />',
        '<row Id="4" PostTypeId="1" AcceptedAnswerId="two" CreationDate="2020-01-01T00:00:00.000" Title="Wifi is gone" />',
    ],
)
def test_parse_posts_skips_rows_with_unparsable_ids_or_dates(tmp_path, bad_row):
    """A row whose id or timestamp does not parse is counted as malformed; the rest is kept."""
    path = tmp_path / "Posts.xml"
    path.write_text(f"<posts>\n  {GOOD_QUESTION}\n  {bad_row}\n</posts>\n", encoding="utf-8")
    posts, answers, summary = parse_posts(path)
    assert [p.id for p in posts] == [1]
    assert answers == []
    assert (summary.rows, summary.malformed, summary.kept) == (2, 1, 1)


@pytest.mark.parametrize(
    "bad_row",
    [
        '<row Id="c2" PostId="1" Text="Which card?" CreationDate="2020-01-01T02:00:00.000" />',
        '<row Id="2" PostId="first" Text="Which card?" CreationDate="2020-01-01T02:00:00.000" />',
        '<row Id="2" PostId="1" Text="Which card?" CreationDate="yesterday" />',
    ],
)
def test_parse_comments_skips_rows_with_unparsable_ids_or_dates(tmp_path, bad_row):
    """Malformed comment rows are counted and skipped."""
    path = tmp_path / "Comments.xml"
    good = '<row Id="1" PostId="1" Text="Did you reboot?" CreationDate="2020-01-01T01:00:00.000" />'
    path.write_text(f"<comments>\n  {good}\n  {bad_row}\n</comments>\n", encoding="utf-8")
    comments, summary = parse_comments(path, [make_post(1, "Sound stopped working")])
    assert [c.id for c in comments] == [1]
    assert (summary.rows, summary.malformed, summary.kept) == (2, 1, 1)


def test_malformed_duplicate_links_are_ignored(tmp_path, dump_dir):
    """A PostLinks row with a broken id does not stop the other links from applying."""
    links = tmp_path / "PostLinks.xml"
    links.write_text(
        "<postlinks>\n"
        '  <row Id="1" PostId="5" RelatedPostId="1" LinkTypeId="3" />\n'
        '  <row Id="2" PostId="five" RelatedPostId="1" LinkTypeId="3" />\n'
        "</postlinks>\n",
        encoding="utf-8",
    )
    posts, _, summary = parse_posts(dump_dir / "Posts.xml", links)
    assert 5 not in {p.id for p in posts}
    assert summary.duplicates_removed == 1


def test_question_sentences_truncate_at_question_mark():
    """Every question sentence becomes its own candidate, cut after its first '?'."""
    text = "Which version do you use? Also, edit your post. Is it 20.04?? thanks"
    assert question_sentences(text) == [
        ["which", "version", "do", "you", "use", "?"],
        ["is", "it", "20.04", "?"],
    ]


def test_question_sentences_drop_long_questions():
    """Questions longer than twenty tokens are not clarifying questions."""
    assert question_sentences(" ".join(["word"] * 25) + "?") == []


def test_extract_clarifying_questions_filters(parsed):
    """Asker comments are dropped; the keyword filter removes exclusion words."""
    posts, _, comments, *_ = parsed
    filtered = extract_clarifying_questions(comments, posts)
    assert [(cq.post_id, cq.tokens) for cq in filtered] == [
        (1, ["which", "version", "do", "you", "use", "?"]),
        (10, ["what", "gpu", "do", "you", "have", "?"]),
    ]
    unfiltered = extract_clarifying_questions(comments, posts, apply_keyword_filter=False)
    assert [cq.post_id for cq in unfiltered] == [1, 4, 10]
    with_asker = extract_clarifying_questions(comments, posts, apply_keyword_filter=False, exclude_asker=False)
    assert [cq.post_id for cq in with_asker] == [1, 1, 4, 10]


def test_extract_requires_key_phrase():
    """A question without a key phrase is dropped by the keyword filter."""
    posts = [make_post(1, "title", author=1)]
    comments = [make_comment(1, 1, "Really?", author=2), make_comment(2, 1, "Can you share logs?", author=2)]
    cqs = extract_clarifying_questions(comments, posts)
    assert [cq.tokens for cq in cqs] == [["can", "you", "share", "logs", "?"]]


def test_clarifying_question_must_end_with_question_mark():
    """The record type enforces the truncation invariant."""
    with pytest.raises(ValueError, match="Not a clarifying question"):
        ClarifyingQuestion(1, ["no", "question"], DUMP_DATE)


def test_clarifying_questions_persist(tmp_path, parsed):
    """JSONL persistence keeps every field."""
    posts, _, comments, *_ = parsed
    cqs = extract_clarifying_questions(comments, posts)
    path = write_clarifying_questions(tmp_path / "cq.jsonl", cqs)
    assert read_clarifying_questions(path) == cqs


def test_qcq_pairs_pair_titles_with_distinct_questions():
    """One pair per distinct clarifying question text of a post."""
    posts = [make_post(1, "Wifi drops", author=1), make_post(2, "Sound", author=2)]
    cqs = [
        ClarifyingQuestion(1, ["which", "card", "?"], DUMP_DATE, 5, 1),
        ClarifyingQuestion(1, ["which", "card", "?"], DUMP_DATE, 6, 2),
        ClarifyingQuestion(3, ["what", "?"], DUMP_DATE, 6, 3),
    ]
    assert qcq_pairs(posts, cqs) == [(["wifi", "drops"], ["which", "card", "?"])]


def test_hunger_stats_on_fixture(parsed):
    """Hand-counted proportions and waiting times of the fixture dump."""
    posts, answers, *_ = parsed
    stats = compute_hunger_stats(posts, answers)
    assert stats == HungerStats(
        n_questions=4,
        n_unanswered=1,
        n_resolved=1,
        n_unresolved=2,
        avg_waiting_days=1.125,
        avg_accepting_days=2.0,
    )


def test_hunger_stats_empty():
    """An empty corpus gives all-zero statistics."""
    assert compute_hunger_stats([], []) == HungerStats()


def test_cq_answer_probability_on_fixture(parsed):
    """Self-answered and late clarifying questions are filtered before counting."""
    posts, answers, comments, *_ = parsed
    result = cq_answer_probability(posts, answers, comments, DUMP_DATE)
    assert (result.n_with, result.n_with_answered) == (2, 1)
    assert (result.n_without, result.n_without_answered) == (1, 1)
    assert result.p_with == 0.5
    assert result.p_without == 1.0


def test_cq_answer_probability_skips_recent_unanswered():
    """Unanswered questions younger than a week are left out."""
    posts = [make_post(1, "new", author=1, created=8.0), make_post(2, "old", author=2, created=0.0)]
    result = cq_answer_probability(posts, [], [], DUMP_DATE)
    assert result.n_without == 1
    assert result.p_without == 0.0
    assert result.p_with is None


def test_cq_answer_probability_empty_denominators():
    """Empty denominators are reported as undefined, not zero."""
    result = cq_answer_probability([], [], [], DUMP_DATE)
    assert result.p_with is None and result.p_without is None


def test_corpus_round_trip_and_lookups(tmp_path):
    """Corpus files round-trip and lookups find accepted answers."""
    posts = [make_post(1, "a", accepted=3), make_post(2, "b")]
    answers = [make_answer(3, 1, "x"), make_answer(4, 1, "y"), make_answer(5, 2, "z")]
    corpus = Corpus(posts, answers)
    corpus.write(tmp_path)
    restored = Corpus.read(tmp_path)
    assert restored == corpus
    assert restored.accepted_answer(1).id == 3
    assert restored.accepted_answer(2) is None
    assert [a.id for a in restored.answers_of(1)] == [3, 4]
    assert restored.answers_of(99) == []
