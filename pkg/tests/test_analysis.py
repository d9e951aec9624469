import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualball.analysis import (adam_rate_probe, clipping_stats, cochran_armitage, cochran_armitage_permutation,
                               generalization_bound, lipschitz_check, loglog_slope, nearest_rank,
                               rademacher_bound, spearman_rho)
from dualball.errors import ContractError, DomainError

mp.mp.dps = 30


def test_spearman_examples():
    x = np.arange(10.0)
    assert spearman_rho(x, x)[0] == pytest.approx(1.0)
    assert spearman_rho(x, -x)[0] == pytest.approx(-1.0)
    assert spearman_rho([1, 2, 3, 4], [1, 3, 2, 4])[0] == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(ContractError):
        spearman_rho([1, 2, 3], [1, 2])


def test_spearman_agrees_with_scipy(rng):
    from scipy import stats

    x, y = rng.standard_normal(50), rng.standard_normal(50)
    ref = stats.spearmanr(x, y)
    rho, p = spearman_rho(x, y)
    assert rho == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)


def test_cochran_armitage_hand_example():
    res = cochran_armitage([[8, 2], [2, 8]], [0, 1])
    assert res.T == 3.0 and res.z > 0
    with pytest.raises(ContractError):
        cochran_armitage([[1, 0], [2, 0]])


def test_cochran_armitage_null_is_small():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = rng.integers(20, 60, size=4)
        events = rng.binomial(n, 0.3)
        res = cochran_armitage([n - events, events])
        assert abs(res.z) < 4


def test_cochran_armitage_increasing_trend_detected():
    n = np.array([2000, 2000, 2000])
    events = (n * np.array([0.2, 0.3, 0.4])).astype(int)
    assert cochran_armitage([n - events, events]).z > 5


def test_cochran_armitage_sign_matches_permutation():
    rng = np.random.default_rng(7)
    done = 0
    while done < 20:
        n = rng.integers(1, 13, size=3)
        events = rng.binomial(n, rng.uniform(0.1, 0.9, size=3))
        if events.sum() in (0, n.sum()):
            continue
        tab = np.array([n - events, events])
        asym = cochran_armitage(tab)
        exact = cochran_armitage_permutation(tab)
        assert np.sign(round(asym.T, 9)) == np.sign(round(exact.z, 9))
        # exact null variance carries the finite-population factor N / (N - 1)
        N = n.sum()
        assert exact.z == pytest.approx(asym.z * np.sqrt((N - 1) / N), abs=1e-9)
        done += 1


def test_permutation_matches_brute_force():
    import itertools

    tab = np.array([[2, 1, 3], [1, 2, 1]])
    units = np.repeat([0.0, 1.0, 2.0], tab.sum(axis=0))
    obs = float(np.sum([0, 1, 2] * tab[1]))
    sums = [units[list(c)].sum() for c in itertools.combinations(range(units.size), 4)]
    exact = cochran_armitage_permutation(tab)
    assert exact.p == pytest.approx(np.mean(np.array(sums) >= obs - 1e-12))
    assert exact.p_lower == pytest.approx(np.mean(np.array(sums) <= obs + 1e-12))


def test_rademacher_examples():
    assert rademacher_bound(0.5, 1.0, 4, 100) == pytest.approx(0.754247, abs=1e-6)
    exact = 4 * mp.sqrt(2) * mp.mpf("0.5") / mp.mpf("0.75") * mp.sqrt(mp.mpf(4) / 100)
    assert rademacher_bound(0.5, 1.0, 4, 100) == pytest.approx(float(exact), rel=1e-14)
    with pytest.raises(DomainError):
        rademacher_bound(1.0, 1.0, 4, 100)
    assert rademacher_bound(0.5, 1.0, 4, 10**12) < 1e-4


@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_rademacher_monotone_in_gamma(a, b):
    lo, hi = sorted((a, b))
    assert rademacher_bound(lo, 1.0, 4, 100) <= rademacher_bound(hi, 1.0, 4, 100)


def test_generalization_examples():
    assert generalization_bound(0.5, 1.0, 4, 100, 1.0, 0.0) == pytest.approx(1.508494, abs=1e-6)
    extra = generalization_bound(0.5, 1.0, 4, 100, 0.05, 0.0) - generalization_bound(0.5, 1.0, 4, 100, 1.0, 0.0)
    assert extra == pytest.approx(float(mp.sqrt(mp.log(20) / 200)), abs=1e-12)
    assert generalization_bound(0.3, 0.8, 3, 50, 0.1, 0.25) >= 0.25


def test_lipschitz_examples():
    rep = lipschitz_check(1.0, 0.5, trials=20_000, rng=np.random.default_rng(0))
    assert rep.tight_bound == pytest.approx(2 / 0.75)
    assert rep.within_stated and rep.within_tight
    near = lipschitz_check(1.0, 0.9, trials=20_000, rng=np.random.default_rng(0))
    assert near.empirical_max > rep.empirical_max


def test_clipping_stats_examples():
    assert clipping_stats([0.0, 0.0, 0.0]) == (0.0, 0.0)
    assert clipping_stats([0.0, 0.0, 0.01]) == (0.0, 0.01)
    assert nearest_rank(np.arange(1, 101), 0.95) == 95
    with pytest.raises(ContractError):
        nearest_rank([], 0.5)


def test_adam_rate_probe_short_run():
    T, trace = adam_rate_probe(0, steps=3000, starts=8)
    assert np.all(np.diff(trace) <= 0)
    assert -0.6 < loglog_slope(T, trace, 300, 3000, 7) < -0.4
