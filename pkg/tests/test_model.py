import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctn.data import DomainDataset
from dctn.errors import ShapeError
from dctn.model import (DctnModel, classify, combine_confidence, concentration_constants,
                        discriminate, extract, perplexity_score, predict_target, source_weights,
                        target_confidence)
from dctn.nn import Dense, Mlp, losses, sgd_step

from builders import identity_model, logit
from oracles import brute_force_confidence, random_operator_case, scalar_forward


def test_extract_identity():
    m = identity_model(2, [[0, 1]])
    npt.assert_array_equal(extract(m, np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_extract_matches_scalar_oracle():
    m = DctnModel.build(2, [[0, 1, 2], [0, 1, 2]], rng=np.random.default_rng(7))
    x = np.ones((3, 2))
    npt.assert_allclose(extract(m, x), [scalar_forward(m.extractor, r) for r in x], rtol=1e-12, atol=1e-14)


def test_extract_rejects_wrong_width():
    m = DctnModel.build(2, [[0, 1]], rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        extract(m, np.ones((1, 3)))


def test_build_shapes():
    m = DctnModel.build(2, [[0, 1, 2], [1, 2, 3, 4]], rng=np.random.default_rng(0))
    assert m.extractor.out_dim == 32
    assert [c.out_dim for c in m.classifiers] == [3, 4]
    assert m.full_class_list == (0, 1, 2, 3, 4)
    assert m.class_mask().tolist() == [[True, True, True, False, False], [False, True, True, True, True]]


def test_zero_discriminator_gives_half():
    m = identity_model(2, [[0, 1]])
    npt.assert_array_equal(discriminate(m, np.ones((3, 2)), 0), 0.5)


def test_discriminator_output_is_clamped():
    m = identity_model(1, [[0, 1]], disc=[(np.array([1.0]), 0.0)])
    p = discriminate(m, np.array([[-100.0], [100.0]]), 0)
    npt.assert_array_equal(p, [1e-7, 1 - 1e-7])


def test_discriminate_rejects_bad_source_index():
    m = identity_model(2, [[0, 1]])
    with pytest.raises(IndexError):
        discriminate(m, np.ones((1, 2)), 1)


def test_trained_discriminator_prefers_its_source():
    rng = np.random.default_rng(0)
    m = DctnModel.build(2, [[0, 1]], rng=rng)
    src = rng.normal(loc=(3, 0), size=(64, 2))
    tgt = rng.normal(loc=(-3, 0), size=(64, 2))
    f = extract(m, np.concatenate([src, tgt]))
    for _ in range(200):
        p = m.discriminators[0].forward(f)
        _, g = losses("sigmoid_bce", p, np.r_[np.ones(64), np.zeros(64)])
        m.discriminators[0].backward(g)
        sgd_step(m.discriminator_params(), 0.1, 0.5)
    assert discriminate(m, extract(m, src), 0).mean() > discriminate(m, extract(m, tgt), 0).mean()


def _source(x, name="s"):
    x = np.asarray(x, float).reshape(-1, 1)
    return DomainDataset(name, x, np.zeros(len(x), dtype=int))


def test_alpha_perfect_discriminator():
    m = identity_model(1, [[0, 1]], disc=[(np.array([1.0]), 0.0)])
    alpha = concentration_constants(m, [_source([50.0, 60.0])])
    assert alpha[0] == pytest.approx(1e-7, rel=1e-3)


def test_alpha_half():
    m = identity_model(1, [[0, 1]])
    assert concentration_constants(m, [_source([1.0, -2.0])])[0] == pytest.approx(math.log(2))


def test_alpha_mixed_probabilities():
    m = identity_model(1, [[0, 1]], disc=[(np.array([1.0]), 0.0)])
    alpha = concentration_constants(m, [_source([logit(0.5), logit(0.25)])])
    assert alpha[0] == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    assert alpha[0] == pytest.approx(1.0397, abs=1e-4)


def test_alpha_complement_mode():
    m = identity_model(1, [[0, 1]], disc=[(np.array([1.0]), 0.0)])
    alpha = concentration_constants(m, [_source([logit(0.9)])], alpha_mode="complement")
    assert alpha[0] == pytest.approx(-math.log(0.1))


@pytest.mark.parametrize("p,alpha,expected", [
    (0.5, 0.0, math.log(2)),
    (1e-12, 0.0, 1e-7),
    (0.9, 0.3, 2.6026),
])
def test_perplexity_examples(p, alpha, expected):
    m = identity_model(1, [[0, 1]], disc=[(np.array([1.0]), 0.0)])
    x = np.array([[max(logit(p), -50.0)]])
    s = perplexity_score(m, x, [alpha])
    assert s.scores[0, 0] == pytest.approx(expected, rel=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_scores_non_negative(seed):
    rng = np.random.default_rng(seed)
    m = DctnModel.build(2, [[0, 1], [0, 1], [1, 2]], rng=rng)
    alphas = rng.uniform(0, 2, size=3)
    s = perplexity_score(m, extract(m, rng.normal(scale=3, size=(10, 2))), alphas)
    assert np.all(s.scores >= 0)


def test_single_source_reduces_to_its_classifier():
    rng = np.random.default_rng(0)
    sm = rng.dirichlet(np.ones(4), size=6)
    conf = combine_confidence(rng.uniform(0.1, 3, size=(6, 1)), [sm], [(0, 1, 2, 3)], (0, 1, 2, 3))
    npt.assert_array_equal(conf, sm)


def test_equal_scores_average():
    conf = combine_confidence(np.array([[1.0, 1.0]]), [np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])],
                              [(0, 1), (0, 1)], (0, 1))
    assert conf[0, 0] == pytest.approx(0.4)


def test_private_class_gets_unit_weight():
    conf = combine_confidence(np.array([[0.3, 2.5]]), [np.array([[0.4, 0.6]]), np.array([[0.7, 0.3]])],
                              [(0, 1), (2, 3)], (0, 1, 2, 3))
    assert conf[0, 2] == pytest.approx(0.7)


def test_zero_scores_fall_back_to_uniform():
    conf = combine_confidence(np.zeros((1, 2)), [np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])],
                              [(0, 1), (0, 1)], (0, 1))
    npt.assert_allclose(conf, [[0.4, 0.6]])


def test_unknown_class_has_zero_confidence():
    conf = combine_confidence(np.ones((1, 1)), [np.array([[1.0]])], [(0,)], (0, 1))
    assert conf[0, 1] == 0.0


def test_random_case_matches_brute_force():
    rng = np.random.default_rng(13)
    scores, sms, sets, classes = random_operator_case(rng, 3, 5, n_samples=8)
    npt.assert_allclose(combine_confidence(scores, sms, sets, classes),
                        brute_force_confidence(scores, sms, sets, classes), atol=1e-9, rtol=0)


@pytest.mark.parametrize("n_sources", [1, 2, 3])
@pytest.mark.parametrize("n_classes", [2, 3, 4])
def test_brute_force_equivalence_grid(n_sources, n_classes):
    rng = np.random.default_rng([n_sources, n_classes])
    for draw in range(50):
        kind = ["random", "vanilla", "disjoint"][draw % 3]
        scores, sms, sets, classes = random_operator_case(rng, n_sources, n_classes, 3, kind)
        npt.assert_allclose(combine_confidence(scores, sms, sets, classes),
                            brute_force_confidence(scores, sms, sets, classes), atol=1e-9, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 2**31))
def test_weights_normalised(n_sources, n_classes, seed):
    rng = np.random.default_rng(seed)
    scores, _, sets, classes = random_operator_case(rng, n_sources, n_classes, 5)
    w = source_weights(scores, sets, classes)
    npt.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 2**31))
def test_vanilla_confidence_sums_to_one(n_sources, n_classes, seed):
    rng = np.random.default_rng(seed)
    scores, sms, sets, classes = random_operator_case(rng, n_sources, n_classes, 5, "vanilla")
    npt.assert_allclose(combine_confidence(scores, sms, sets, classes).sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.sampled_from([0.1, 3.0, 100.0]), st.integers(0, 2**31))
def test_scale_equivariance(n_sources, n_classes, lam, seed):
    rng = np.random.default_rng(seed)
    scores, sms, sets, classes = random_operator_case(rng, n_sources, n_classes, 4)
    base = combine_confidence(scores, sms, sets, classes)
    scaled = scores.copy()
    scaled[1] *= lam
    npt.assert_allclose(combine_confidence(scaled, sms, sets, classes), base, atol=1e-12, rtol=0)


def test_monotone_dominance():
    sms = [np.array([[0.9, 0.1]]), np.array([[0.2, 0.8]])]
    prev = None
    for s1 in np.linspace(0.01, 50, 200):
        c = combine_confidence(np.array([[s1, 1.0]]), sms, [(0, 1), (0, 1)], (0, 1))[0, 0]
        if prev is not None:
            assert c >= prev
            assert abs(c - 0.9) <= abs(prev - 0.9)
        prev = c


def test_argmax_ties_pick_lowest_class():
    m = identity_model(2, [[3, 7]])
    pred = target_confidence(m, np.ones((1, 1)), [np.array([[0.5, 0.5]])])
    assert pred.labels[0] == 3


def test_operator_shape_errors():
    with pytest.raises(ShapeError):
        combine_confidence(np.ones((2, 2)), [np.ones((2, 2)) / 2], [(0, 1), (0, 1)], (0, 1))
    with pytest.raises(ShapeError):
        combine_confidence(np.ones((2, 1)), [np.ones((3, 2)) / 2], [(0, 1)], (0, 1))


def test_predict_target_single_source_argmax():
    rng = np.random.default_rng(1)
    m = DctnModel.build(2, [[0, 1, 2]], rng=rng)
    x = rng.normal(size=(1000, 2))
    pred = predict_target(m, DomainDataset("t", x))
    npt.assert_array_equal(pred.predicted_index, np.argmax(classify(m, extract(m, x), 0), axis=1))


def test_predict_target_equal_scores_average():
    # identical zero discriminators -> identical scores -> plain average
    m = identity_model(2, [[0, 1], [0, 1]], clf_weights=[np.eye(2), -np.eye(2)])
    x = np.array([[np.log(1.5), 0.0]])  # head 1 -> (0.6, 0.4), head 2 -> (0.4, 0.6)
    pred = predict_target(m, DomainDataset("t", x), alphas=[0.0, 0.0])
    npt.assert_allclose(pred.confidence, [[0.5, 0.5]])


def test_predict_target_composition_matches_oracle():
    rng = np.random.default_rng(4)
    m = DctnModel.build(2, [[0, 1, 2], [1, 2, 3], [0, 3]], rng=rng)
    x = rng.normal(size=(20, 2))
    alphas = np.array([0.2, 0.0, 1.1])
    f = [scalar_forward(m.extractor, r) for r in x]
    scores = [[-math.log(1 - min(max(scalar_forward(d, r)[0], 1e-7), 1 - 1e-7)) + a
               for d, a in zip(m.discriminators, alphas)] for r in f]
    sms = [np.array([scalar_forward(c, r) for r in f]) for c in m.classifiers]
    expected = brute_force_confidence(scores, sms, m.class_sets, m.full_class_list)
    pred = predict_target(m, DomainDataset("t", x), alphas=alphas)
    npt.assert_allclose(pred.confidence, expected, atol=1e-9)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    m = DctnModel.build(3, [[0, 1, 2], [2, 3]], rng=rng)
    m.alphas = np.array([0.25, 1.5])
    m.save(tmp_path / "m.npz")
    back = DctnModel.load(tmp_path / "m.npz")
    assert back.class_sets == m.class_sets
    assert back.full_class_list == m.full_class_list
    for a, b in zip(m.params(), back.params()):
        assert a.values.tobytes() == b.values.tobytes()
    assert back.alphas.tobytes() == m.alphas.tobytes()


def test_model_rejects_mismatched_heads():
    rng = np.random.default_rng(0)
    f = Mlp.build([2, 4], out="relu", rng=rng)
    d = Mlp.build([4, 1], out="sigmoid", rng=rng)
    c = Mlp.build([4, 3], out="softmax", rng=rng)
    with pytest.raises(ValueError):
        DctnModel(f, [d], [c], [[0, 1]])
    with pytest.raises(ValueError):
        DctnModel(f, [d, d], [c], [[0, 1, 2]])
    with pytest.raises(ShapeError):
        DctnModel(f, [Mlp([Dense.init(5, 1, "sigmoid", rng)])], [c], [[0, 1, 2]])
