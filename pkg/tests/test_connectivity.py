import numpy as np
import pytest

from decennt import diffcore as dc
from decennt.connectivity import DIRECTION_NOTE, AttentionParams, DynamicGraph, attend, attend_sequence
from decennt.errors import DimensionError


@pytest.fixture
def params():
    return AttentionParams.init(np.random.default_rng(0), 6, 5)


def test_single_component(params):
    h = np.random.default_rng(1).normal(size=(1, 6))
    W, upd = attend(params, h)
    np.testing.assert_array_equal(W.data, [[1.0]])
    np.testing.assert_allclose(upd.data, h @ params.value.data, atol=1e-15)


def test_identical_embeddings_uniform(params):
    h = np.tile(np.random.default_rng(2).normal(size=(1, 6)), (4, 1))
    W, _ = attend(params, h)
    np.testing.assert_allclose(W.data, np.full((4, 4), 0.25), atol=1e-15)


def test_brute_force_reevaluation(params):
    h = np.random.default_rng(3).normal(size=(4, 6))
    W, upd = attend(params, h)
    k, v, q = h @ params.key.data, h @ params.value.data, h @ params.query.data
    for i in range(4):
        s = np.array([q[i] @ k[j] for j in range(4)])
        w = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
        np.testing.assert_allclose(W.data[i], w, atol=1e-14)
        np.testing.assert_allclose(upd.data[i], sum(w[j] * v[j] for j in range(4)), atol=1e-13)
    assert np.abs(W.data.sum(axis=1) - 1).max() <= 1e-12


def test_no_scaling_by_default(params):
    h = np.random.default_rng(4).normal(size=(3, 6))
    scaled = AttentionParams(params.key, params.value, params.query, scaled=True)
    s = (h @ params.query.data) @ (h @ params.key.data).T / np.sqrt(5)
    expected = np.exp(s - s.max(1, keepdims=True))
    expected /= expected.sum(1, keepdims=True)
    np.testing.assert_allclose(attend(scaled, h)[0].data, expected, atol=1e-14)
    assert not np.allclose(attend(params, h)[0].data, expected)


def test_width_mismatch(params):
    with pytest.raises(DimensionError):
        attend(params, np.ones((3, 5)))


def test_sequence_time_major_and_determinism(params):
    rng = np.random.default_rng(5)
    emb = rng.normal(size=(4, 3, 6))
    emb[:, 1] = emb[:, 0]
    W, _ = attend_sequence(params, emb)
    assert W.shape == (3, 4, 4)
    np.testing.assert_array_equal(W.data[0], W.data[1])
    np.testing.assert_allclose(W.data[2], attend(params, emb[:, 2])[0].data, atol=1e-15)


def test_sequence_single_timepoint(params):
    emb = np.random.default_rng(6).normal(size=(4, 1, 6))
    np.testing.assert_array_equal(attend_sequence(params, emb)[0].data[0],
                                  attend(params, emb[:, 0])[0].data)


def test_row_stochastic_and_equivariant_fuzz(params):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        h = rng.normal(scale=2.0, size=(n, 6))
        W = attend(params, h)[0].data
        assert np.abs(W.sum(axis=1) - 1).max() <= 1e-9
        assert np.all(W > 0)
        P = np.eye(n)[rng.permutation(n)]
        assert np.abs(attend(params, P @ h)[0].data - P @ W @ P.T).max() <= 1e-9


def test_asymmetric_graph_from_asymmetric_embeddings():
    rng = np.random.default_rng(8)
    p = AttentionParams.init(rng, 4, 4)
    h = np.array([[3.0, 0, 0, 0], [0, 3.0, 0, 0], [0, 0, 3.0, 1.0]])
    W = attend(p, h)[0].data
    assert np.abs(W - W.T).max() > 0.01


def test_attention_gradcheck():
    rng = np.random.default_rng(9)
    p = AttentionParams.init(rng, 4, 3)
    h = dc.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w1, w2 = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))

    def f():
        W, upd = attend(p, h)
        return (W * w1).sum() + (upd * w2).sum()

    assert dc.gradcheck(f, p.parameters() + [h]) <= 1e-4


def test_dynamic_graph_container():
    g = DynamicGraph(np.full((5, 3, 3), 1 / 3))
    assert (g.T, g.n) == (5, 3)
    assert g.max_row_error() < 1e-15
    assert "receiver" in DIRECTION_NOTE
