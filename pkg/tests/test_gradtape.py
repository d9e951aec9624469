import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualball.checks import loss_term_builders
from dualball.errors import ContractError
from dualball.gradtape import MLP, DenseLayer, as_var, backward, grad_check, gradients, parameter
from dualball.gradtape import geometry as G
from dualball.gradtape import tape as T


def test_identity_and_dense_identity():
    x = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(as_var(x).value, x)
    layer = DenseLayer(3, 3)
    layer.weight.value = np.eye(3)
    assert np.array_equal(layer(x).value, x)


def test_dense_rejects_wrong_width():
    with pytest.raises(ContractError):
        DenseLayer(3, 2)(np.ones((1, 4)))


def test_mlp_same_seed_is_bit_identical():
    x = np.random.default_rng(0).standard_normal((5, 4))
    a = MLP([4, 8, 2], "tanh", np.random.default_rng(7))(x).value
    b = MLP([4, 8, 2], "tanh", np.random.default_rng(7))(x).value
    assert np.array_equal(a, b)
    assert np.array_equal(MLP([4, 8, 2], "tanh", np.random.default_rng(7)).numpy_forward(x), a)


def test_scalar_gradients():
    x = parameter(np.array(3.0))
    assert backward(x * x, [x])[0] == pytest.approx(6.0)
    y = parameter(np.array([1.0, 2.0]))
    assert np.allclose(gradients(T.vsum(y * y), [y])[0], [2.0, 4.0])


def test_backward_needs_scalar_root():
    with pytest.raises(ContractError):
        backward(parameter(np.ones(3)) * 2.0)


def test_gradients_do_not_accumulate():
    x = parameter(np.array(2.0))
    first = gradients(x * x * 1.0, [x])[0]
    second = gradients(x * x * 1.0, [x])[0]
    assert first == second == pytest.approx(4.0)


def test_distance_gradient_matches_finite_differences():
    v = parameter(np.array([[0.4, -0.3, 0.2]]))
    rep = grad_check(lambda: T.vsum(G.poincare_dist(np.zeros((1, 3)), G.exp0(v, 1.0), 1.0)), [v])
    assert rep.max_error < 1e-4


def test_linear_layer_grad_check_is_tight():
    layer = DenseLayer(4, 3, rng=np.random.default_rng(1))
    x = np.random.default_rng(2).standard_normal((6, 4))
    rep = grad_check(lambda: T.vsum(layer(x)), layer.parameters())
    assert rep.max_error < 1e-7


def test_zero_parameter_graph_passes():
    rep = grad_check(lambda: as_var(np.array(1.0)), [])
    assert rep.passed and not rep.errors


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("term", ["task", "fus", "cycle", "inv", "score", "prop", "orth"])
def test_loss_term_gradients(seed, term):
    fn, params = loss_term_builders(seed)[term]
    rep = grad_check(fn, params, tol=1e-4)
    assert rep.passed, rep.errors


@given(arrays(np.float64, (2, 3), elements=st.floats(-1.5, 1.5)))
def test_geometry_ops_match_numpy(v):
    from dualball import hypmath as hm

    h = G.exp0(v, 0.8).value
    assert np.allclose(h, hm.exp0(v, 0.8), atol=1e-14)
    assert np.allclose(G.log0(h, 0.8).value, hm.log0(h, 0.8), atol=1e-12)
    assert np.allclose(G.isometric_rescale(h, 0.8, 1.0).value, hm.isometric_rescale(h, 0.8, 1.0), atol=1e-12)
