"""Tests for answer_recommender.ranker."""

import math
from dataclasses import replace

import numpy as np
import pytest

from answer_recommender import ranker as ranker_module
from answer_recommender.evaluation import CandidatePool
from answer_recommender.labeling import Label, LabeledQAPair
from answer_recommender.neural import grad_check
from answer_recommender.ranker import (
    ClassDistribution,
    RankerHyperparams,
    RankerParams,
    ScoreWeights,
    ablate,
    accuracy,
    encode_examples,
    forward,
    loss_and_grads,
    match_score,
    rank_by_scores,
    rank_candidates,
    sentence_matrix,
    train,
    training_examples,
    tune_weights,
    tune_weights_from_distributions,
    weight_grid,
)
from answer_recommender.retrieval import EmbeddingMatrix, build_vocab

GRAD_HP = RankerHyperparams(dim=4, maps=3, widths=(2, 3), q_max_len=5, a_max_len=6)


def _pair(q, a, label, qid=1):
    return LabeledQAPair(qid, list(q), list(a), label, qid, qid + 1)


def _grad_batch(vocab, hp):
    pairs = [
        _pair(["wifi", "drops", "often"], ["reload", "the", "module"], Label.POSITIVE),
        _pair(["sound"], ["check", "alsamixer", "levels", "now"], Label.NEGATIVE),
        _pair(["boot", "hangs"], ["add", "nomodeset"], Label.NEUTRAL_MINUS),
    ]
    return encode_examples(training_examples(pairs, hp), vocab, hp)


@pytest.mark.parametrize("shared", [False, True])
def test_loss_and_grads_match_finite_differences(rng, shared):
    """Every parameter group backpropagates correctly, with and without shared branches."""
    vocab = build_vocab(
        [["wifi", "drops", "often", "sound", "boot", "hangs"], ["reload", "the", "module", "check", "alsamixer"]],
        cap=50,
    )
    hp = replace(GRAD_HP, shared_branches=shared)
    shapes = RankerParams.init(vocab, hp, rng).tensors
    params = {name: rng.normal(scale=0.5, size=value.shape) for name, value in shapes.items()}
    params["embed"][0] = 0.0
    assert grad_check(loss_and_grads, params, _grad_batch(vocab, hp), eps=1e-5, samples=8) < 1e-4


def test_shared_branches_have_one_filter_bank(rng):
    """Sharing drops the answer-side convolution weights."""
    vocab = build_vocab([["a"]], cap=10)
    separate = RankerParams.init(vocab, GRAD_HP, rng).tensors
    shared = RankerParams.init(vocab, replace(GRAD_HP, shared_branches=True), rng).tensors
    assert "a_conv2_w" in separate and "a_conv2_w" not in shared
    assert shared["q_conv3_w"].shape == (3, 4, 3)


def test_initial_loss_is_close_to_uniform(rng, tiny_ranker_hyperparams):
    """An untrained ranker predicts nearly uniform class probabilities."""
    vocab = build_vocab([["wifi", "drops"], ["reload", "module"]], cap=50)
    params = RankerParams.init(vocab, tiny_ranker_hyperparams, rng)
    pairs = [_pair(["wifi", "drops"], ["reload", "module"], label) for label in Label]
    batch = encode_examples(training_examples(pairs, params.hyperparams), vocab, params.hyperparams)
    loss, _ = loss_and_grads(params.tensors, batch)
    assert loss == pytest.approx(math.log(4), rel=0.1)


def test_zero_embeddings_give_uniform_distribution(rng, tiny_ranker_hyperparams):
    """With all-zero embeddings and biases every logit is zero."""
    vocab = build_vocab([["a", "b"]], cap=10)
    params = RankerParams.init(vocab, tiny_ranker_hyperparams, rng)
    params.tensors["embed"][:] = 0.0
    dist = forward(["a"], ["b"], params)
    np.testing.assert_allclose(dist.as_array(), [0.25] * 4, atol=1e-6)


def test_sentence_matrix_pads_and_truncates(rng):
    """Columns beyond the tokens are zero; long inputs are cut."""
    vocab = build_vocab([["a", "b", "c"]], cap=10)
    embed = rng.normal(size=(len(vocab), 3))
    matrix = sentence_matrix(["a", "b", "c"], embed, vocab, 10)
    assert matrix.shape == (3, 10)
    np.testing.assert_allclose(matrix[:, 0], embed[vocab.index["a"]])
    assert np.all(matrix[:, 3:] == 0.0)
    assert sentence_matrix(["a"] * 12, embed, vocab, 5).shape == (3, 5)
    with pytest.raises(ValueError):
        sentence_matrix(["a"], embed, vocab, 4)


def test_hyperparams_reject_short_inputs():
    """Inputs shorter than the widest filter cannot be convolved."""
    with pytest.raises(ValueError, match="filter width"):
        RankerHyperparams(widths=(3, 4, 5), q_max_len=4)


def test_score_weights_bounds_and_persistence(tmp_path):
    """Weights live in [0, 10] and round-trip through JSON."""
    with pytest.raises(ValueError):
        ScoreWeights(neg=11.0)
    with pytest.raises(ValueError):
        ScoreWeights(pos=-0.5)
    weights = ScoreWeights(pos=2.0, neu_plus=0.5, neu_minus=0.05, neg=3.0)
    weights.save(tmp_path / "weights.json")
    assert ScoreWeights.load(tmp_path / "weights.json") == weights
    np.testing.assert_allclose(weights.signed(), [2.0, 0.5, -0.05, -3.0])


def test_class_distribution_validation_and_binary_head():
    """Distributions must sum to one; a binary head fills the outer classes."""
    with pytest.raises(ValueError):
        ClassDistribution(0.5, 0.5, 0.5, 0.0)
    assert ClassDistribution.from_probs([0.7, 0.3]) == ClassDistribution(0.7, 0.0, 0.0, 0.3)


def test_match_score_examples():
    """Uniform probabilities under unit weights cancel out."""
    assert match_score(ClassDistribution(0.25, 0.25, 0.25, 0.25), ScoreWeights()) == 0.0
    assert match_score(ClassDistribution(1.0, 0.0, 0.0, 0.0), ScoreWeights(pos=2.0)) == 2.0
    assert match_score(ClassDistribution(0.0, 0.0, 0.0, 1.0), ScoreWeights(neg=3.0)) == -3.0


def test_match_score_is_linear_and_ranking_is_scale_invariant(rng):
    """The score is a dot product, so positive rescaling never reorders candidates."""
    for _ in range(200):
        dists = [ClassDistribution.from_probs(p) for p in rng.dirichlet(np.ones(4), size=5)]
        raw = rng.uniform(0.0, 5.0, size=4)
        weights = ScoreWeights(*raw)
        scaled = ScoreWeights(*(2.0 * raw))
        scores = [match_score(d, weights) for d in dists]
        assert scores == pytest.approx([float(d.as_array() @ weights.signed()) for d in dists])
        assert [match_score(d, scaled) for d in dists] == pytest.approx([2.0 * s for s in scores])
        ranked = rank_by_scores(enumerate(scores))
        ranked_scaled = rank_by_scores(enumerate(match_score(d, scaled) for d in dists))
        assert [aid for aid, _ in ranked] == [aid for aid, _ in ranked_scaled]


def test_rank_by_scores_breaks_ties_by_answer_id():
    """Equal scores keep ascending answer ids."""
    assert rank_by_scores([(9, 0.5), (3, 0.5), (4, 0.9)]) == [(4, 0.9), (3, 0.5), (9, 0.5)]


def test_weight_grid_values():
    """Fine steps below 0.1, tenths up to 1 and units up to 10."""
    grid = weight_grid()
    assert grid[:3] == [0.0, 0.01, 0.02]
    assert 0.1 in grid and 0.5 in grid and 1.0 in grid and 3.0 in grid and 10.0 in grid
    assert grid == sorted(set(grid))
    assert len(grid) == 29
    assert all(0.0 <= value <= 10.0 for value in grid)


def test_tune_weights_recovers_planted_negative_weight():
    """Only a negative weight above 2.5 lets the accepted answer beat the distractor."""
    aids = np.array([7, 3])
    dists = np.array([[0.1, 0.0, 0.35, 0.55], [0.25, 0.0, 0.0, 0.75]])
    weights = tune_weights_from_distributions([(aids, dists, 7)])
    assert weights == ScoreWeights(pos=1.0, neu_plus=1.0, neu_minus=1.0, neg=3.0)


def test_tune_weights_without_pools_keeps_unit_weights():
    """Nothing to tune on leaves the starting point."""
    assert tune_weights_from_distributions([]) == ScoreWeights()


def test_tuned_weights_are_on_grid(rng):
    """Whatever the pools, every tuned weight is a grid value."""
    pools = [(np.arange(5), rng.dirichlet(np.ones(4), size=5), int(rng.integers(5))) for _ in range(30)]
    weights = tune_weights_from_distributions(pools)
    grid = set(weight_grid())
    assert all(value in grid for value in weights.to_record().values())


def _separable_pairs(n_per_class=50, seed=0):
    rng = np.random.default_rng(seed)
    words = ["how", "fix", "wifi", "sound", "boot"]
    pairs = []
    for label in Label:
        for i in range(n_per_class):
            question = [str(w) for w in rng.choice(words, size=3)]
            marker = f"m{int(label)}"
            pairs.append(_pair(question, [marker, "works", marker], label, qid=10 * i + int(label)))
    return pairs


def test_training_separates_vocabulary_separable_classes(tiny_ranker_hyperparams):
    """Classes marked by answer vocabulary are learned to at least 95% training accuracy."""
    pairs = _separable_pairs()
    vocab = build_vocab([p.q_tokens + p.a_tokens for p in pairs], cap=100)
    vectors = np.random.default_rng(1).normal(scale=0.5, size=(len(vocab), tiny_ranker_hyperparams.dim))
    embeddings = EmbeddingMatrix(vocab, vectors.astype(np.float32))
    params = train(pairs, pairs, vocab, replace(tiny_ranker_hyperparams, patience=50), embeddings)
    assert accuracy(params, training_examples(pairs, params.hyperparams)) >= 0.95


def test_training_stops_at_a_non_finite_loss_and_keeps_the_best_epoch(
    monkeypatch, caplog, tiny_ranker_hyperparams
):
    """A diverging epoch ends training; the returned weights are the last finite best ones."""
    pairs = _separable_pairs(n_per_class=8)
    vocab = build_vocab([p.q_tokens + p.a_tokens for p in pairs], cap=100)
    real = ranker_module.loss_and_grads
    calls = {"n": 0}
    batches_per_epoch = math.ceil(len(pairs) / tiny_ranker_hyperparams.batch_size)

    def diverging(p, batch):
        calls["n"] += 1
        loss, grads = real(p, batch)
        return (float("nan"), grads) if calls["n"] > 2 * batches_per_epoch else (loss, grads)

    monkeypatch.setattr(ranker_module, "loss_and_grads", diverging)
    with caplog.at_level("WARNING", logger="answer_recommender.ranker"):
        params = train(pairs, pairs, vocab, replace(tiny_ranker_hyperparams, epochs=10, patience=10))
    assert calls["n"] == 2 * batches_per_epoch + 1
    assert "diverged in epoch 2" in caplog.text
    assert all(np.all(np.isfinite(t)) for t in params.tensors.values())


def test_default_gradient_clipping_keeps_a_large_learning_rate_finite(tiny_ranker_hyperparams):
    """With the default clip norm even an oversized step size yields finite weights."""
    pairs = _separable_pairs(n_per_class=10)
    vocab = build_vocab([p.q_tokens + p.a_tokens for p in pairs], cap=100)
    hp = replace(tiny_ranker_hyperparams, lr=5.0, epochs=5)
    assert hp.clip_norm == RankerHyperparams().clip_norm == 5.0
    params = train(pairs, pairs, vocab, hp)
    assert all(np.all(np.isfinite(t)) for t in params.tensors.values())


def test_train_requires_pairs(tiny_ranker_hyperparams):
    """An empty training set is an error."""
    with pytest.raises(ValueError, match="No labeled pairs"):
        train([], [], build_vocab([["a"]], cap=10), tiny_ranker_hyperparams)


def test_training_examples_apply_ablations():
    """drop_cq uses the bare title; drop_labeling collapses to accepted versus the rest."""
    pairs = [
        _pair(["wifi"], ["fix"], Label.POSITIVE).with_boosted(["wifi", "<sep>", "which", "?"]),
        _pair(["wifi"], ["other"], Label.NEUTRAL_PLUS),
        _pair(["wifi"], ["far"], Label.NEGATIVE),
    ]
    hp = RankerHyperparams(widths=(2,), q_max_len=5, a_max_len=5)
    full = training_examples(pairs, hp)
    assert full[0].q_tokens == ["wifi", "<sep>", "which", "?"]
    assert [e.label for e in full] == [0, 1, 3]
    ablated = training_examples(pairs, ablate(hp, drop_cq=True, drop_labeling=True))
    assert ablated[0].q_tokens == ["wifi"]
    assert [e.label for e in ablated] == [0, 1, 1]
    assert ablate(hp, drop_labeling=True).n_classes == 2


def test_binary_head_forward(rng):
    """A drop_labeling ranker reports probability mass only on the outer classes."""
    vocab = build_vocab([["a", "b"]], cap=10)
    params = RankerParams.init(vocab, replace(GRAD_HP, drop_labeling=True), rng)
    dist = forward(["a"], ["b"], params)
    assert dist.p_neu_plus == 0.0 and dist.p_neu_minus == 0.0
    assert dist.p_pos + dist.p_neg == pytest.approx(1.0, abs=1e-6)


def test_rank_candidates_orders_every_candidate(rng, tiny_ranker_hyperparams):
    """All candidates come back once, scores descending."""
    vocab = build_vocab([["wifi", "reload", "module", "reboot"]], cap=20)
    params = RankerParams.init(vocab, tiny_ranker_hyperparams, rng)
    candidates = [(11, ["reload", "module"]), (5, ["reboot"]), (8, ["wifi", "reboot"])]
    ranked = rank_candidates(["wifi"], candidates, params, ScoreWeights())
    assert sorted(aid for aid, _ in ranked) == [5, 8, 11]
    scores = [score for _, score in ranked]
    assert scores == sorted(scores, reverse=True)


def test_tune_weights_on_candidate_pools(rng, tiny_ranker_hyperparams):
    """Pools are scored with the ranker and tuned on the grid."""
    vocab = build_vocab([["wifi", "reload", "module", "reboot"]], cap=20)
    params = RankerParams.init(vocab, tiny_ranker_hyperparams, rng)
    pool = CandidatePool(1, ["wifi"], [(2, ["reload", "module"]), (5, ["reboot"])], [1, 4], 2)
    weights = tune_weights(params, [pool])
    assert set(weights.to_record().values()) <= set(weight_grid())


def test_ranker_checkpoint_keeps_hyperparams(tmp_path, rng):
    """The checkpoint header restores the architecture."""
    vocab = build_vocab([["a", "b"]], cap=10)
    hp = replace(GRAD_HP, shared_branches=True, drop_labeling=True)
    params = RankerParams.init(vocab, hp, rng)
    params.save(tmp_path / "ranker.bin")
    loaded = RankerParams.load(tmp_path / "ranker.bin", vocab)
    assert loaded.hyperparams == hp
    np.testing.assert_array_equal(loaded.tensors["fc_w"], params.tensors["fc_w"])
