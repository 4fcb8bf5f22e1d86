"""Tests for answer_recommender.qboost."""

import itertools

import numpy as np
import pytest
from conftest import DUMP_DATE, build_index, topic_corpus

from answer_recommender.corpus import ClarifyingQuestion
from answer_recommender.neural import grad_check
from answer_recommender.qboost import (
    CqRetriever,
    Seq2SeqHyperparams,
    Seq2SeqParams,
    beam_hypotheses,
    beam_search,
    boost,
    decode_step,
    encode,
    greedy_decode,
    join_boosted,
    loss_and_grads,
    mean_loss,
    sequence_log_prob,
    train,
)
from answer_recommender.retrieval import EOS_ID, SEP, SEP_ID, UNK_ID, Vocabulary, build_vocab


def _rescaled_params(vocab, rng, dim=3, hidden=2):
    params = Seq2SeqParams.init(vocab, dim, hidden, rng)
    return {name: rng.normal(scale=0.5, size=value.shape) for name, value in params.tensors.items()}


def test_loss_and_grads_match_finite_differences(rng):
    """Attention, decoder, bridge and both encoder layers backpropagate correctly."""
    vocab = build_vocab([["wifi", "drops", "which", "card", "?"]], cap=20)
    params = _rescaled_params(vocab, rng)
    batch = [
        (vocab.encode(["wifi", "drops"]), vocab.encode(["which", "card", "?"])),
        (vocab.encode(["card", "wifi", "drops"]), vocab.encode(["which", "?"])),
    ]
    assert grad_check(loss_and_grads, params, batch, eps=1e-5, samples=6) < 1e-4


def test_encode_shapes(rng):
    """Top-layer states are (T, 2h) and the decoder starts from an h-vector."""
    vocab = build_vocab([["a", "b"]], cap=10)
    params = Seq2SeqParams.init(vocab, dim=4, hidden=3, rng=rng)
    encoded = encode(["a", "b", "unseen"], params)
    assert encoded.states.shape == (3, 6)
    assert encoded.s0.shape == (3,)
    state, probs, alpha = decode_step(0, (encoded.s0, np.zeros(3)), encoded, params)
    assert probs.shape == (len(vocab),)
    assert probs.sum() == pytest.approx(1.0, abs=1e-5)
    assert alpha.sum() == pytest.approx(1.0, abs=1e-5)
    assert state[0].shape == (3,)


def test_encode_rejects_empty_title(rng):
    """An empty title has nothing to encode."""
    params = Seq2SeqParams.init(Vocabulary(), dim=2, hidden=2, rng=rng)
    with pytest.raises(ValueError, match="empty"):
        encode([], params)


def test_beam_search_matches_exhaustive_enumeration(rng):
    """A wide enough beam finds every sequence with its exact log-probability."""
    vocab = Vocabulary()
    params = Seq2SeqParams.init(vocab, dim=4, hidden=3, rng=rng)
    title = ["anything"]
    max_len = 4
    hypotheses = beam_hypotheses(title, params, beam_width=16, max_len=max_len)

    emittable = [UNK_ID, SEP_ID]
    expected = {}
    for length in range(max_len):
        for prefix in itertools.product(emittable, repeat=length):
            ids = (*prefix, EOS_ID)
            expected[ids] = sequence_log_prob(title, ids, params)
    for ids in itertools.product(emittable, repeat=max_len):
        expected[ids] = sequence_log_prob(title, ids, params)

    found = {hyp.ids: hyp.log_prob for hyp in hypotheses}
    assert set(found) == set(expected)
    for ids, log_prob in expected.items():
        assert found[ids] == pytest.approx(log_prob, rel=1e-6)
    best = max(expected, key=lambda ids: expected[ids] / len(ids))
    assert hypotheses[0].ids == best
    assert [tok for tok in beam_search(title, params, 16, max_len)] == hypotheses[0].tokens(vocab)


def test_beam_of_ten_over_five_tokens_against_brute_force(rng):
    """Beam 10 over five emittable tokens keeps exact scores and reaches the unnormalized optimum."""
    vocab = build_vocab([["how", "why", "?"]], cap=8)
    params = Seq2SeqParams.init(vocab, dim=4, hidden=3, rng=rng)
    title, max_len = ["how", "?"], 4
    emittable = [i for i in range(len(vocab)) if i not in (0, 2, EOS_ID)]
    assert len(emittable) == 5

    brute = {}
    for length in range(max_len):
        for prefix in itertools.product(emittable, repeat=length):
            brute[(*prefix, EOS_ID)] = sequence_log_prob(title, (*prefix, EOS_ID), params)
    for ids in itertools.product(emittable, repeat=max_len):
        brute[ids] = sequence_log_prob(title, ids, params)

    hypotheses = beam_hypotheses(title, params, beam_width=10, max_len=max_len)
    # every EOS completion of a live prefix (1 + 5 + 10 + 10) plus the beam cut at the length limit
    assert len(hypotheses) == 36
    for hyp in hypotheses:
        assert hyp.log_prob == pytest.approx(brute[hyp.ids], rel=1e-6)
    assert max(h.log_prob for h in hypotheses) == pytest.approx(max(brute.values()), rel=1e-6)

    assert hypotheses[0] == max(hypotheses, key=lambda h: (h.normalized, h.log_prob))
    assert hypotheses[0].normalized <= max(v / len(ids) for ids, v in brute.items()) + 1e-9
    greedy = beam_hypotheses(title, params, beam_width=1, max_len=max_len)
    assert max(h.log_prob for h in hypotheses) >= max(h.log_prob for h in greedy)
    assert beam_search(title, params, 10, max_len) == hypotheses[0].tokens(vocab)


def test_beam_hypotheses_never_emit_pad_or_bos(rng):
    """Reserved start and padding tokens never appear in a decode."""
    vocab = build_vocab([["x", "y", "?"]], cap=10)
    params = Seq2SeqParams.init(vocab, dim=4, hidden=3, rng=rng)
    for hyp in beam_hypotheses(["x"], params, beam_width=3, max_len=5):
        assert 0 not in hyp.ids and 2 not in hyp.ids
        assert len(hyp.ids) <= 5


def test_beam_search_edge_cases(rng):
    """Zero length gives nothing; a beam width below one is an error."""
    params = Seq2SeqParams.init(Vocabulary(), dim=2, hidden=2, rng=rng)
    assert beam_search(["a"], params, beam_width=2, max_len=0) == []
    with pytest.raises(ValueError):
        beam_search(["a"], params, beam_width=0)


def test_training_overfits_a_single_pair():
    """Fifty copies of one pair are learned well enough for greedy decoding to reproduce it."""
    title, cq = ["wifi", "drops"], ["which", "card", "?"]
    vocab = build_vocab([title, cq], cap=20)
    hyperparams = Seq2SeqHyperparams(dim=8, hidden=16, epochs=30, batch_size=2, lr=0.5, patience=100)
    params = train([(title, cq)] * 50, [(title, cq)], vocab, hyperparams)
    assert mean_loss(params, [(title, cq)]) < 0.25
    assert greedy_decode(title, params, max_len=8) == cq
    assert boost(title, params, beam_width=3, max_len=8).joined == [*title, SEP, *cq]


def test_train_requires_pairs():
    """Training without a single usable pair is an error."""
    with pytest.raises(ValueError, match="No training pairs"):
        train([([], ["what", "?"])], [], Vocabulary(), Seq2SeqHyperparams(dim=2, hidden=2, epochs=1))


def test_params_checkpoint_round_trip(tmp_path, rng):
    """Saved weights reload for the same vocabulary only."""
    vocab = build_vocab([["a", "b"]], cap=10)
    params = Seq2SeqParams.init(vocab, dim=4, hidden=3, rng=rng)
    params.save(tmp_path / "qboost.bin")
    loaded = Seq2SeqParams.load(tmp_path / "qboost.bin", vocab)
    assert (loaded.dim, loaded.hidden) == (4, 3)
    np.testing.assert_array_equal(loaded.tensors["out_w"], params.tensors["out_w"])
    with pytest.raises(ValueError, match="vocabulary"):
        Seq2SeqParams.load(tmp_path / "qboost.bin", Vocabulary())


def test_join_boosted_truncates_question_and_joined_length():
    """The question ends at its first '?', and the joined sequence respects the cap."""
    boosted = join_boosted(["my", "wifi"], ["which", "card", "?", "and", "?"])
    assert boosted.cq == ["which", "card", "?"]
    assert boosted.joined == ["my", "wifi", SEP, "which", "card", "?"]
    capped = join_boosted(["my", "wifi"], ["which", "card", "?"], max_joined_len=4)
    assert capped.joined == ["my", "wifi", SEP, "which"]


def test_join_boosted_drops_unfinished_question():
    """A decode without a question mark contributes nothing after the separator."""
    boosted = join_boosted(["my", "wifi"], ["which", "card"])
    assert boosted.cq == []
    assert boosted.joined == ["my", "wifi", SEP]


def test_cq_retriever_reuses_nearest_question():
    """Lookup boosting returns the question of the nearest title, skipping the excluded post."""
    posts, _ = topic_corpus(n_topics=3, per_topic=2)
    index = build_index(posts)
    cqs = [
        ClarifyingQuestion(post.id, ["do", "you", "use", f"c{post.id}", "?"], DUMP_DATE, 99, post.id)
        for post in posts
    ]
    retriever = CqRetriever.build(posts, cqs, index.embeddings, index.idf)
    first = index.titles[0]
    assert retriever.retrieve(first) == ["do", "you", "use", "c1", "?"]
    other = retriever.retrieve(first, exclude=1)
    assert other and other != ["do", "you", "use", "c1", "?"]


def test_cq_retriever_without_questions():
    """An empty retriever boosts with nothing."""
    posts, _ = topic_corpus(n_topics=2, per_topic=2)
    index = build_index(posts)
    retriever = CqRetriever.build(posts, [], index.embeddings, index.idf)
    assert retriever.retrieve(["t0a"]) == []
