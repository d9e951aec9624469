import numpy as np
import pytest

from dualball import hypmath as hm
from dualball.errors import ContractError
from dualball.fusion import MaskTokens, PredictionHead, SetFuser, build_slots, task_loss
from dualball.gradtape import grad_check, parameter


@pytest.fixture
def fuser(rng):
    return SetFuser(4, d_model=16, heads=4, rng=rng)


def test_output_shape_under_every_pattern(fuser, rng):
    tokens = MaskTokens(4, 4, rng=rng)
    slots_t = rng.standard_normal((5, 4, 4))
    for bits in range(16):
        mask = np.tile([(bits >> j) & 1 for j in range(4)], (5, 1)).astype(bool)
        slots, empty = build_slots(slots_t, mask, tokens.tangents())
        out = fuser(slots).value
        assert out.shape == (5, 4) and np.all(np.isfinite(out))
        assert np.all(np.linalg.norm(out, axis=1) <= hm.max_radius(1.0) + 1e-15)
        assert empty.all() == (bits == 0)


def test_mask_tokens_fill_missing_slots(rng):
    tokens = MaskTokens(2, 3, rng=rng)
    slots_t = np.ones((1, 3, 2))
    slots, _ = build_slots(slots_t, np.array([[True, False, True]]), tokens.tangents())
    assert np.array_equal(slots.value[0, 0], [1.0, 1.0])
    assert np.allclose(slots.value[0, 1], tokens.tangents().value[1])
    with pytest.raises(ContractError):
        build_slots(slots_t, np.ones((1, 2), dtype=bool), tokens.tangents())


def test_permutation_invariance(fuser, rng):
    x = rng.standard_normal((6, 4, 4))
    perm = [2, 0, 3, 1]
    assert np.abs(fuser(x).value - fuser(x[:, perm]).value).max() <= 1e-12


def test_position_encodings_break_invariance(rng):
    f = SetFuser(4, 16, 4, n_slots=4, rng=rng)
    x = rng.standard_normal((3, 4, 4))
    assert np.abs(f(x).value - f(x[:, [1, 0, 2, 3]]).value).max() > 1e-6


def test_mean_pool_duplicate_slots(rng):
    f = SetFuser(4, 16, 4, pooling="mean", rng=rng)
    one = rng.standard_normal((2, 1, 4))
    assert np.allclose(f(one).value, f(np.concatenate([one, one], axis=1)).value, atol=1e-15)


def test_bad_configuration():
    with pytest.raises(ContractError):
        SetFuser(4, d_model=10, heads=4)
    with pytest.raises(ContractError):
        SetFuser(4, pooling="max")


def test_prediction_head_shape_and_bias(rng):
    head = PredictionHead(4, 7, hidden=8, rng=rng)
    h = hm.exp0(rng.standard_normal((3, 4)), 1.0)
    assert head(h).shape == (3, 7)
    for p in head.parameters():
        p.value = np.zeros_like(p.value)
    head.net.layers[-1].bias.value = np.arange(7.0)
    assert np.array_equal(head(h).value, np.tile(np.arange(7.0), (3, 1)))


def test_prediction_gradient_wrt_point(rng):
    head = PredictionHead(3, 4, hidden=5, rng=rng)
    h = parameter(hm.exp0(0.5 * rng.standard_normal((2, 3)), 1.0))
    rep = grad_check(lambda: head(h).sum(), [h])
    assert rep.max_error < 1e-4


def test_task_loss_examples():
    y = np.array([0, 3])
    assert task_loss(np.zeros((2, 7)), y).value == pytest.approx(np.log(7))
    logits = np.full((2, 7), -1e3)
    logits[0, 0] = logits[1, 3] = 1e3
    assert task_loss(logits, y).value == pytest.approx(0.0, abs=1e-12)
    assert task_loss(np.array([[0.5], [2.0]]), np.array([0.5, 2.0]), "regression").value == 0.0


def test_task_loss_label_errors():
    with pytest.raises(ContractError):
        task_loss(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ContractError):
        task_loss(np.zeros((2, 3)), np.array([0.5, 1.0]))
    with pytest.raises(ContractError):
        task_loss(np.zeros((2, 3)), np.array([0, 1]), "ranking")
