import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from shadowconv.errors import DataError, ParameterError
from shadowconv.geometry import gen_hexagonal
from shadowconv.poisson_limit import LimitModel, lstar_cdf, sample_lstar
from shadowconv.stats import (
    KS_CONSTANTS,
    Protocol,
    critical_sigma_from_counts,
    critical_sigma_search,
    dkw_epsilon,
    ecdf,
    ks_distance,
    ks_test,
    ks_two_sample_distance,
    lstar_pass_counts,
    sigma_db_grid,
    sir_experiment,
)


def test_ecdf_basics():
    F = ecdf([1.0])
    assert F(0.999) == 0.0 and F(1.0) == 1.0 and F(5.0) == 1.0
    assert ecdf([1, 2, 3])(2) == pytest.approx(2 / 3)
    with pytest.raises(DataError):
        ecdf([])


def test_ecdf_uniform_band_frequency():
    hits = 0
    for s in range(100):
        x = np.random.default_rng(s).random(10_000)
        hits += ks_distance(ecdf(x), lambda t: np.clip(t, 0, 1)) < 1.63 / 100
    assert hits >= 99


def test_ks_distance_constructions():
    n = 50
    q = (np.arange(1, n + 1) - 0.5) / n
    assert ks_distance(ecdf(q), lambda t: np.clip(t, 0, 1)) == pytest.approx(1 / (2 * n))
    assert ks_distance(ecdf([0.0]), lambda t: np.clip(t, 0, 1)) == pytest.approx(1.0)


def test_ks_distance_matches_scipy():
    x = np.random.default_rng(3).normal(size=777)
    assert ks_distance(ecdf(x), sps.norm.cdf) == pytest.approx(sps.kstest(x, "norm").statistic, abs=1e-12)
    y = np.random.default_rng(4).normal(0.1, 1, size=500)
    assert ks_two_sample_distance(x, y) == pytest.approx(sps.ks_2samp(x, y).statistic, abs=1e-12)


def test_frechet_min_loss_below_critical():
    m = LimitModel(1.0, 4.0)
    ok = sum(ks_distance(ecdf(sample_lstar(m, 10_000, seed=s)), lambda t: lstar_cdf(t, m)) < 0.0163 for s in range(100))
    assert ok >= 99


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_ks_invariant_under_increasing_transform(seed, scale):
    x = np.random.default_rng(seed).exponential(size=200)
    d1 = ks_distance(ecdf(x), lambda t: 1 - np.exp(-t))
    # log transform of both the data and the reference CDF, plus an affine map
    y = scale * np.log(x) + 1.0
    d2 = ks_distance(ecdf(y), lambda s: 1 - np.exp(-np.exp((s - 1.0) / scale)))
    assert d1 == pytest.approx(d2, abs=1e-12)


def test_ks_test_examples():
    assert ks_test(0.0, 300, 0.01).critical == pytest.approx(0.09399, abs=1e-5)
    assert not ks_test(0.0, 17, 0.10).reject
    r = ks_test(0.12, 300, 0.01)
    assert r.reject and r.critical == pytest.approx(1.628 / math.sqrt(300))
    two = ks_test(0.1, 500, 0.10, m=500)
    assert two.n == 250 and two.critical == pytest.approx(1.224 / math.sqrt(250))
    with pytest.raises(ParameterError, match="0.01"):
        ks_test(0.1, 100, 0.2)
    assert set(KS_CONSTANTS) == {0.01, 0.05, 0.10}


def test_dkw_epsilon():
    assert dkw_epsilon(1000, 0.01) == pytest.approx(math.sqrt(math.log(200) / 2000))


def test_grid():
    g = sigma_db_grid()
    assert g[0] == 0 and g[-1] == 30 and len(g) == 61


def test_critical_sigma_quota_relaxation_and_sentinel():
    grid = (0.0, 4.0, 8.0, 12.0)
    pat = gen_hexagonal(6)
    proto9 = Protocol(100, 10, 9, 0.01, grid)
    counts = lstar_pass_counts(pat, 3.0, 1.0, proto9, seed=1)
    s9 = critical_sigma_from_counts(grid, counts, 9)
    s8 = critical_sigma_from_counts(grid, counts, 8)
    assert s8 is None or (s9 is None or s8 <= s9)
    res = critical_sigma_search(pat, 3.0, 1.0, Protocol(100, 10, 9, 0.01, (0.0, 0.5)), seed=1)
    assert res.above_grid and res.to_dict()["above_grid_max"]
    assert res.pass_counts == [0, 0]


def test_critical_sigma_reproducible_and_worker_independent():
    pat = gen_hexagonal(6)
    proto = Protocol(60, 4, 3, 0.01, (6.0, 12.0))
    a = critical_sigma_search(pat, 3.0, 1.0, proto, seed=5)
    b = critical_sigma_search(pat, 3.0, 1.0, proto, seed=5, workers=2)
    assert a.to_dict() == b.to_dict()


@pytest.mark.xfail(strict=True, reason="measured mean sigma* over 5 seeds: N=30 11.8 dB vs N=6 10.6 dB (see decisions ledger)")
def test_critical_sigma_larger_network_not_worse():
    grid = tuple(np.arange(8.0, 14.01, 1.0))
    proto = Protocol(sigma_db_grid=grid)
    # single searches are noisy near the threshold; compare means over master seeds
    small = [critical_sigma_search(gen_hexagonal(6), 3.0, 1.0, proto, seed=s).sigma_db_star for s in range(5)]
    large = [critical_sigma_search(gen_hexagonal(30), 3.0, 1.0, proto, seed=s).sigma_db_star for s in range(5)]
    assert None not in small and None not in large
    assert np.mean(large) <= np.mean(small)


@pytest.mark.xfail(strict=True, reason="measured 6/10 passes at 10 dB; first 9/10 at 11 dB (see decisions ledger)")
def test_hexagonal_n6_beta3_at_10db_passes_nine_of_ten():
    counts = lstar_pass_counts(gen_hexagonal(6), 3.0, 1.0, Protocol(sigma_db_grid=(10.0,)), seed=0)
    assert counts[0] >= 9


def test_sir_experiment_determinism_and_shapes():
    pat = gen_hexagonal(10)
    a = sir_experiment(pat, 10.0, 4.0, 1.0, 200, seed=3)
    b = sir_experiment(pat, 10.0, 4.0, 1.0, 200, seed=3)
    assert a.to_dict() == b.to_dict()
    assert len(a.thresholds) == len(a.pattern_ccdf) == len(a.limit_ccdf)
    assert np.all(np.diff(a.pattern_ccdf) <= 0)
    with pytest.raises(ParameterError):
        sir_experiment(pat, 10.0, 4.0, 1.0, 50)


def test_sir_no_shadowing_hexagonal_rejected():
    pat = gen_hexagonal(30)
    rejects = sum(sir_experiment(pat, 0.0, 4.0, 1.0, 500, seed=s).ks.reject for s in range(5))
    assert rejects == 5
