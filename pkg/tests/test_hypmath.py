import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualball import hypmath as hm
from dualball.errors import DomainError

mp.mp.dps = 40

curv = st.floats(0.25, 4.0)
vec3 = arrays(np.float64, 3, elements=st.floats(-2.0, 2.0))


def ball_point(v, c):
    return hm.exp0(v, c, None)


# -- examples -------------------------------------------------------------------------

def test_exp0_origin():
    assert np.array_equal(hm.exp0(np.zeros(2), 1.0), np.zeros(2))


def test_exp0_unit_vector_matches_high_precision_tanh():
    h = hm.exp0(np.array([1.0, 0.0]), 1.0)
    assert np.linalg.norm(h) == pytest.approx(float(mp.tanh(1)), abs=1e-15)
    assert h[1] == 0.0


def test_exp0_far_vector_is_clipped_to_margin():
    h = hm.exp0(np.array([10.0, 0.0]), 1.0, 0.05)
    assert np.linalg.norm(h) == pytest.approx(0.95, abs=1e-15)


def test_exp0_rejects_non_finite():
    with pytest.raises(DomainError):
        hm.exp0(np.array([np.nan, 0.0]), 1.0)


def test_log0_inverts_exp0_example():
    h = np.array([float(mp.tanh(1)), 0.0])
    assert np.allclose(hm.log0(h, 1.0), [1.0, 0.0], atol=1e-14)
    assert np.array_equal(hm.log0(np.zeros(3), 1.0), np.zeros(3))


def test_log0_rejects_boundary():
    with pytest.raises(DomainError):
        hm.log0(np.array([1.0, 0.0]), 1.0)


def test_log0_round_trip_random_c08(rng):
    v = rng.standard_normal((1000, 4))
    v *= 2.0 * rng.uniform(size=(1000, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
    assert np.abs(hm.log0(hm.exp0(v, 0.8, None), 0.8) - v).max() <= 1e-9


def test_mobius_collinear_example():
    out = hm.mobius_add(np.array([0.3, 0.0]), np.array([0.3, 0.0]), 1.0)
    expected = mp.mpf("0.6") / mp.mpf("1.09")
    assert out[0] == pytest.approx(float(expected), abs=1e-15)


def test_mobius_curvature_mismatch():
    with pytest.raises(DomainError):
        hm.mobius_add(np.zeros(2), np.zeros(2), 1.0, c_y=0.8)
    with pytest.raises(DomainError):
        hm.poincare_dist(np.zeros(2), np.zeros(2), 1.0, c_y=0.8)


def test_distance_examples():
    x = np.array([0.5, 0.0])
    assert hm.poincare_dist(x, x, 1.0) == 0.0
    assert hm.poincare_dist(np.zeros(2), x, 1.0) == pytest.approx(float(2 * mp.atanh(0.5)), abs=1e-15)


def test_triangle_inequality(rng):
    pts = [hm.exp0(rng.standard_normal((100, 3)), 1.0) for _ in range(3)]
    a, b, c = pts
    d = lambda x, y: hm.poincare_dist(x, y, 1.0)
    assert np.all(d(a, c) <= d(a, b) + d(b, c) + 1e-9)


def test_exp_at_reduces_to_exp0_and_fixes_base():
    v = np.array([0.3, -0.4])
    assert np.allclose(hm.exp_at(np.zeros(2), v, 1.0), hm.exp0(v, 1.0), atol=1e-15)
    w = np.array([0.2, 0.1])
    assert np.allclose(hm.exp_at(w, np.zeros(2), 1.0), w, atol=1e-15)


def test_exp_at_geodesic_distance_is_conformal_length():
    # geodesic length of the exponential image equals lambda_w |v| = 2/0.75 * 0.1
    w, v = np.array([0.5, 0.0]), np.array([0.1, 0.0])
    out = hm.exp_at(w, v, 1.0)
    assert out[1] == 0.0 and out[0] > 0.5
    assert hm.poincare_dist(w, out, 1.0) == pytest.approx(0.1 * 2 / 0.75, abs=1e-3)


def test_conformal_factor_examples():
    assert hm.conformal_factor(np.zeros(2), 1.0) == 2.0
    h = np.array([np.sqrt(0.5), 0.0])
    assert hm.conformal_factor(h, 1.0) == pytest.approx(4.0, rel=1e-14)
    with pytest.raises(DomainError):
        hm.conformal_factor(np.array([1.0, 0.0]), 1.0)
    r = np.linspace(0, 0.9, 50)[:, None] * np.array([[1.0, 0.0]])
    assert np.all(np.diff(hm.conformal_factor(r, 1.0)) > 0)


@pytest.mark.parametrize("norm,c,expected,flag", [(0.5, 1.0, 0.5, False), (0.98, 1.0, 0.95, True),
                                                  (1.2, 4.0, 0.475, True)])
def test_clip_examples(norm, c, expected, flag):
    h, clipped = hm.clip_to_ball(np.array([0.0, norm]), c, 0.05)
    assert np.linalg.norm(h) == pytest.approx(expected, abs=1e-15)
    assert bool(clipped) is flag


def test_linear_rescale_examples():
    x = np.array([0.3, 0.4])
    assert np.array_equal(hm.linear_rescale(x, 1.0, 1.0), x)
    assert np.linalg.norm(hm.linear_rescale(x, 1.0, 4.0)) == pytest.approx(0.25)
    back = hm.linear_rescale(hm.linear_rescale(x, 1.0, 4.0), 4.0, 1.0)
    assert np.abs(back - x).max() <= 1e-12


def test_isometric_rescale_example():
    y = hm.isometric_rescale(np.array([0.5, 0.0]), 1.0, 4.0)
    assert np.allclose(y, [0.4, 0.0], atol=1e-15)
    assert hm.poincare_dist(np.zeros(2), y, 4.0) == pytest.approx(float(2 * mp.atanh(0.5)), abs=1e-14)
    assert np.array_equal(hm.isometric_rescale(np.zeros(2), 1.0, 4.0), np.zeros(2))


def test_isometric_rescale_boundary_limit():
    r = 1.0 - 1e-12
    y = hm.isometric_rescale(np.array([r, 0.0]), 1.0, 4.0)
    assert y[0] == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(DomainError):
        hm.isometric_rescale(np.array([1.0, 0.0]), 1.0, 4.0)


def test_volume_weight_examples():
    assert hm.volume_weight(np.zeros(2), 1.0) == 1.0
    h = np.array([np.sqrt(0.5), 0.0])
    assert hm.volume_weight(h, 1.0, 2) == pytest.approx(4.0, rel=1e-14)
    assert hm.volume_weight(h, 1.0, 2, inverted=True) == pytest.approx(0.25, rel=1e-14)
    assert hm.log_volume_weight(h, 1.0, 2) == pytest.approx(np.log(4.0), rel=1e-14)


def test_curvature_ratio_guard():
    assert hm.check_curvature_ratio(1.0, 0.8) == pytest.approx(1.25)
    with pytest.raises(DomainError):
        hm.check_curvature_ratio(1.0, 0.3)


def test_squash_tangent_bound():
    u = np.array([[100.0, 0.0], [1e-3, 0.0]])
    out = hm.squash_tangent(u, 2.0)
    assert np.linalg.norm(out[0]) <= 2.0
    assert out[1, 0] == pytest.approx(1e-3, rel=1e-6)
    bound = hm.tangent_bound(1.0, 0.05, 1.0)
    assert np.linalg.norm(hm.exp0(np.array([bound, 0.0]), 1.0, None)) == pytest.approx(0.95)


# -- properties -----------------------------------------------------------------------

@given(vec3, st.sampled_from([1.0, 0.8]))
def test_round_trip_property(v, c):
    v = v * min(1.0, 3.0 / max(np.linalg.norm(v), 1e-300))
    assert np.abs(hm.log0(hm.exp0(v, c, None), c) - v).max() <= 1e-9


@given(arrays(np.float64, 3, elements=st.floats(-1e6, 1e6)), curv)
def test_clip_output_within_margin(h, c):
    out, _ = hm.clip_to_ball(h, c, 0.05)
    assert np.linalg.norm(out) <= hm.max_radius(c, 0.05) * (1 + 1e-15)


@given(vec3, curv, st.floats(0.5, 2.0))
def test_isometric_rescale_preserves_origin_distance(v, c1, ratio):
    c2 = c1 * ratio
    x = ball_point(v * 0.5, c1)
    y = hm.isometric_rescale(x, c1, c2)
    d1 = hm.poincare_dist(np.zeros(3), x, c1)
    d2 = hm.poincare_dist(np.zeros(3), y, c2)
    assert abs(d1 - d2) <= 1e-9


@given(vec3, curv, curv)
def test_linear_rescale_maps_into_target_ball(v, c1, c2):
    x = ball_point(v, c1) * (1 - 1e-9)
    y = hm.linear_rescale(x, c1, c2)
    assert np.linalg.norm(y) * np.sqrt(c2) < 1.0


@given(vec3, curv)
def test_mobius_identity_and_inverse(v, c):
    x = ball_point(v, c)
    assert np.abs(hm.mobius_add(np.zeros(3), x, c, None) - x).max() <= 1e-12
    assert np.abs(hm.mobius_add(-x, x, c, None)).max() <= 1e-12


@given(vec3, curv)
def test_distance_from_origin_closed_form(v, c):
    x = ball_point(v * 0.5, c)
    expected = 2 / np.sqrt(c) * np.arctanh(np.sqrt(c) * np.linalg.norm(x))
    assert hm.poincare_dist(np.zeros(3), x, c) == pytest.approx(expected, abs=1e-12)


@given(vec3, curv)
def test_volume_weight_is_scaled_conformal_power(v, c):
    x = ball_point(v * 0.5, c)
    lam = hm.conformal_factor(x, c)
    assert hm.volume_weight(x, c) == pytest.approx((lam / 2) ** 3, rel=1e-12)


@given(vec3, vec3)
def test_log_at_inverts_exp_at(w, v):
    w = ball_point(w * 0.3, 1.0)
    v = 0.2 * v
    y = hm.exp_at(w, v, 1.0, None)
    assert np.allclose(hm.log_at(w, y, 1.0), v, atol=1e-8)
