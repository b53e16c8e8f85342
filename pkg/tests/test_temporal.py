import numpy as np
import pytest

from decennt import diffcore as dc
from decennt.errors import ConfigurationError, InputError, ParameterError
from decennt.temporal import (GtaParams, aggregate, attention_threshold, hidden_width,
                              top_count, top_fraction_timepoints)


def random_graphs(rng, T, n, batch=None):
    shape = (T, n, n) if batch is None else (batch, T, n, n)
    return dc.softmax(rng.normal(size=shape), axis=-1).data


@pytest.fixture
def gta():
    return GtaParams.init(np.random.default_rng(0), 4, 0.25)


def test_hidden_width():
    assert hidden_width(4, 0.25) == 4
    assert hidden_width(100, 0.005) == 50
    assert hidden_width(2, 0.01) == 1
    with pytest.raises(ConfigurationError):
        hidden_width(4, 0.0)


def test_single_timepoint(gta):
    W = random_graphs(np.random.default_rng(1), 1, 4)
    att = aggregate(gta, W)
    np.testing.assert_array_equal(att.alpha.data, [1.0])
    np.testing.assert_array_equal(att.final.data, W[0])


def test_identical_graphs(gta):
    W1 = random_graphs(np.random.default_rng(2), 1, 4)[0]
    att = aggregate(gta, np.stack([W1] * 6))
    np.testing.assert_allclose(att.final.data, W1, atol=1e-15)


def test_row_sums_and_alpha(gta):
    rng = np.random.default_rng(3)
    for _ in range(100):
        att = aggregate(gta, random_graphs(rng, 6, 4))
        assert np.all(att.alpha.data > 0)
        assert abs(att.alpha.data.sum() - 1) <= 1e-9
        assert np.abs(att.final.data.sum(axis=1) - 1).max() <= 1e-9


def test_relu_raw_nonnegative(gta):
    att = aggregate(gta, random_graphs(np.random.default_rng(4), 6, 4), mode="relu-raw")
    assert np.all(att.alpha.data >= 0)
    np.testing.assert_array_equal(att.alpha.data, np.maximum(att.scores.data, 0))


def test_mean_mode(gta):
    W = random_graphs(np.random.default_rng(5), 6, 4)
    np.testing.assert_allclose(aggregate(gta, W, mode="mean").final.data, W.mean(axis=0), atol=1e-15)


def test_unknown_mode(gta):
    with pytest.raises(ConfigurationError):
        aggregate(gta, random_graphs(np.random.default_rng(5), 2, 4), mode="max")


def test_empty_time(gta):
    with pytest.raises(InputError):
        aggregate(gta, np.zeros((0, 4, 4)))


def test_scores_follow_definition(gta):
    rng = np.random.default_rng(6)
    W = random_graphs(rng, 5, 4)
    att = aggregate(gta, W)
    Wg = W.sum(axis=0)
    z = (W * Wg).reshape(5, 16) @ gta.w1.data
    z = (z - gta.bn_state.running_mean) / np.sqrt(gta.bn_state.running_var + 1e-5)
    s = (np.maximum(z * gta.bn_scale.data + gta.bn_shift.data, 0) @ gta.w2.data).ravel()
    np.testing.assert_allclose(att.scores.data, s, atol=1e-13)
    a = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    np.testing.assert_allclose(att.final.data, np.tensordot(a, W, axes=1), atol=1e-14)


def test_time_reordering(gta):
    rng = np.random.default_rng(7)
    W = random_graphs(rng, 6, 4)
    perm = rng.permutation(6)
    att, att_p = aggregate(gta, W), aggregate(gta, W[perm])
    # equal up to the order of floating-point summation over t
    np.testing.assert_allclose(att_p.scores.data, att.scores.data[perm], rtol=0, atol=1e-14)
    np.testing.assert_allclose(att_p.final.data, att.final.data, rtol=0, atol=1e-15)
    top = top_fraction_timepoints(att.alpha.data, 0.5)
    np.testing.assert_array_equal(np.sort(perm[top_fraction_timepoints(att_p.alpha.data, 0.5)]), top)


def test_batched_training_gradcheck(gta):
    rng = np.random.default_rng(8)
    W = dc.Tensor(random_graphs(rng, 6, 4, batch=2), requires_grad=True)
    w = rng.normal(size=(2, 4, 4))
    f = lambda: (aggregate(gta, W, training=True).final * w).sum()  # noqa: E731
    assert dc.gradcheck(f, gta.parameters() + [W]) <= 1e-4


def test_threshold_rules():
    assert not attention_threshold(np.full(5, 0.2)).any()
    raw = attention_threshold(np.zeros(3), np.array([-1.0, 0.0, 2.0]), "relu-raw")
    np.testing.assert_array_equal(raw, [False, False, True])
    a = dc.softmax(np.array([0.0, 0.0, 5.0])).data
    np.testing.assert_array_equal(attention_threshold(a), [False, False, True])


def test_top_fraction():
    alpha = np.random.default_rng(9).random(157)
    assert len(top_fraction_timepoints(alpha, 0.05)) == 8
    np.testing.assert_array_equal(top_fraction_timepoints(alpha, 1.0), np.arange(157))
    np.testing.assert_array_equal(top_fraction_timepoints([0.1, 0.4, 0.4, 0.1], 0.5), [1, 2])
    np.testing.assert_array_equal(top_fraction_timepoints([0.1, 0.4, 0.4, 0.1], 0.5, "bottom"), [0, 3])


def test_top_fraction_ties_smaller_index():
    np.testing.assert_array_equal(top_fraction_timepoints(np.ones(6), 0.5), [0, 1, 2])


def test_top_count_rules():
    assert top_count(0.05, 157) == 8
    assert top_count(0.1, 90) == 9  # float product 9.000000000000002 must not round up
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ParameterError):
            top_count(bad, 10)
    with pytest.raises(ParameterError):
        top_fraction_timepoints(np.ones(4), 0.5, side="middle")


def test_shift_invariant_selection():
    rng = np.random.default_rng(10)
    s = rng.normal(size=20)
    a1, a2 = dc.softmax(s).data, dc.softmax(s + 3.7).data
    np.testing.assert_array_equal(np.argsort(a1, kind="stable"), np.argsort(a2, kind="stable"))
    np.testing.assert_array_equal(top_fraction_timepoints(a1, 0.2), top_fraction_timepoints(a2, 0.2))
