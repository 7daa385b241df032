import json
import math

import numpy as np
import pytest
from scipy import stats as sps
from scipy.integrate import quad
from scipy.special import ndtr

from shadowconv.errors import EmptyProcessError, ParameterError
from shadowconv.geometry import Metric, PointPattern, gen_hexagonal, gen_poisson
from shadowconv.propagation import (
    GenericSamples,
    MarkKernel,
    RayleighPower,
    ShadowingSpec,
    continuum_mean_measure,
    db_from_sigma,
    default_truncation,
    exact_mean_measure,
    k_sigma,
    log_lambda_measure,
    lognormal_annulus_count,
    moment_s_2beta,
    nu_n,
    path_loss,
    propagation_process,
    rescaled_distance,
    sample_poisson_lstar,
    sample_shadowing,
    sample_user_losses,
    sigma_from_db,
)


def test_db_conversion_round_trip():
    assert db_from_sigma(sigma_from_db(12.5)) == pytest.approx(12.5)
    assert sigma_from_db(10) == pytest.approx(math.log(10))


@pytest.mark.parametrize("r,K,beta,expected", [(1, 1, 4, 1), (2, 1, 4, 16), (0.5, 2, 3, 1)])
def test_path_loss(r, K, beta, expected):
    assert path_loss(r, K, beta) == pytest.approx(expected)


def test_path_loss_rejects_bad_input():
    with pytest.raises(ParameterError):
        path_loss(0.0, 1, 4)
    with pytest.raises(ParameterError):
        path_loss(1.0, 1, 2.0)


def test_moment_closed_form_cases():
    assert moment_s_2beta(0, 4) == 1
    assert moment_s_2beta(1.7, 2) == pytest.approx(1.0)
    assert moment_s_2beta(1, 4) == pytest.approx(math.exp(-1 / 8))
    assert moment_s_2beta(1, 4) == pytest.approx(0.88250, abs=5e-6)


def test_moment_monte_carlo():
    s = sample_shadowing(ShadowingSpec(1.0), 1_000_000, seed=1)
    x = np.sqrt(s)
    assert abs(x.mean() - math.exp(-1 / 8)) < 3 * x.std() / math.sqrt(len(x))


def test_k_sigma():
    assert k_sigma(2.5, 4, 0) == 2.5
    assert k_sigma(2.5, 2, 3.0) == pytest.approx(2.5)
    assert k_sigma(1, 4, math.sqrt(2)) == pytest.approx(math.exp(-1 / 8))
    # K^(sigma)^2 = K^2 E[S^(2/beta)]
    assert k_sigma(1.3, 3.5, 2.0) ** 2 == pytest.approx(1.3**2 * moment_s_2beta(2.0, 3.5))


def test_shadowing_samples():
    assert np.all(sample_shadowing(ShadowingSpec(0.0), 10, seed=0) == 1)
    s = sample_shadowing(ShadowingSpec(1.0), 1_000_000, seed=2)
    assert abs(s.mean() - 1) < 3 * s.std() / 1000
    with pytest.raises(ParameterError):
        ShadowingSpec(-1.0)


def test_rayleigh_extra_reduces_to_exponential():
    s = sample_shadowing(ShadowingSpec(0.0, RayleighPower()), 20_000, seed=3)
    assert sps.kstest(s, "expon").pvalue > 0.01


def test_rescaled_distance():
    sigma, beta = 2.0, 4.0
    assert rescaled_distance(1.0, sigma, beta) == pytest.approx(-sigma / beta)
    assert rescaled_distance(math.exp(sigma**2 / beta**2), sigma, beta) == pytest.approx(0.0, abs=1e-12)
    assert rescaled_distance(math.e, sigma, beta) == pytest.approx(1.5)
    with pytest.raises(ParameterError):
        rescaled_distance(1.0, 0.0, 4.0)


def test_propagation_deterministic_cases():
    one = propagation_process(PointPattern([[1.0, 0.0]]), (0, 0), ShadowingSpec(0.0), 1.0, 4.0)
    np.testing.assert_allclose(one.losses, [1.0])
    two = propagation_process(PointPattern([[0.0, 2.0], [1.0, 0.0]]), (0, 0), ShadowingSpec(0.0), 1.0, 3.0)
    np.testing.assert_allclose(two.losses, [1.0, 8.0])
    np.testing.assert_allclose(two.raw_distances, [1.0, 2.0])


def test_propagation_sorted_marked_and_reproducible():
    pat = gen_hexagonal(6)
    spec = ShadowingSpec.from_db(10)
    kern = MarkKernel.indicator()
    a = propagation_process(pat, (0.1, 0.2), spec, 1.0, 3.0, marks=kern, seed=5)
    b = propagation_process(pat, (0.1, 0.2), spec, 1.0, 3.0, marks=kern, seed=5)
    assert len(a) == 36
    assert np.all(np.diff(a.losses) >= 0)
    np.testing.assert_array_equal(a.losses, b.losses)
    np.testing.assert_array_equal(a.types, b.types)
    # log loss = beta ln(K_sigma r) - mu - sigma z
    ke = k_sigma(1.0, 3.0, spec.sigma)
    np.testing.assert_allclose(a.log_losses, 3 * np.log(ke * a.raw_distances) - spec.mu - spec.sigma * a.z)


def test_propagation_types_use_shifted_driver():
    # threshold kernel: type 1 iff z - 2 sigma / beta > 0
    pat = gen_hexagonal(20)
    sigma, beta = 2.0, 4.0
    out = propagation_process(pat, (0.1, 0.1), ShadowingSpec(sigma), 1.0, beta, marks=MarkKernel.indicator(), seed=1)
    np.testing.assert_array_equal(out.types == 1, out.z - 2 * sigma / beta > 1e-12)


def test_truncation():
    pat = gen_hexagonal(10)
    out = propagation_process(pat, (0.1, 0.1), ShadowingSpec(1.0), 1.0, 4.0, truncation=(1.0, 3.0), seed=0)
    assert np.all((out.raw_distances > 1) & (out.raw_distances < 3))
    with pytest.raises(EmptyProcessError):
        propagation_process(pat, (0.1, 0.1), ShadowingSpec(1.0), 1.0, 4.0, truncation=(50.0, 60.0))
    with pytest.raises(ParameterError):
        propagation_process(pat, (0.1, 0.1), ShadowingSpec(1.0), 1.0, 4.0, truncation=(3.0, 1.0))
    a, b = default_truncation(4.0)
    assert a == pytest.approx(math.e**4 - 1) and b == pytest.approx(math.exp(64))


def test_user_on_station_rejected():
    with pytest.raises(ParameterError):
        propagation_process(PointPattern([[0.0, 0.0]]), (0, 0), ShadowingSpec(1.0), 1.0, 4.0)


def test_sample_csv_export(tmp_path):
    out = propagation_process(gen_hexagonal(4), (0.1, 0.1), ShadowingSpec(1.0), 1.0, 4.0, marks=MarkKernel.indicator(), seed=0)
    path = tmp_path / "s.csv"
    out.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "loss,log_loss,distance,rescaled_distance,type"
    assert len(lines) == 17
    assert json.loads(path.with_suffix(".json").read_text())["beta"] == 4.0


def test_user_losses_matrix():
    pat = gen_hexagonal(4)
    m = sample_user_losses(pat, ShadowingSpec(0.0), 1.0, 4.0, 50, seed=1)
    assert m.shape == (50, 16)
    with pytest.raises(ParameterError):
        sample_user_losses(PointPattern([[1, 1]]), ShadowingSpec(0.0), 1.0, 4.0, 5)


def test_nu_n_examples():
    assert nu_n(1e6, 1.0, 1.0, 4.0, 4.0) == pytest.approx(1.0)
    K, beta, r, n = 1.5, 3.0, 2.0, 9.0
    assert nu_n(beta * math.log(K * r) + n / beta, r, K, beta, n) == pytest.approx(0.5)
    assert nu_n(2.0, 1.0, 1.0, 4.0, 4.0) == pytest.approx(ndtr(0.5))
    assert nu_n(2.0, 1.0, 1.0, 4.0, 4.0) == pytest.approx(0.69146, abs=5e-6)


def test_nu_n_matches_simulation():
    pat = PointPattern([[2.0, 0.0]])
    n = 4.0
    logs = np.array([propagation_process(pat, (0, 0), ShadowingSpec(2.0), 1.0, 4.0, seed=s).log_losses[0] for s in range(4000)])
    p = nu_n(3.0, 2.0, 1.0, 4.0, n)
    assert abs(np.mean(logs <= 3.0) - p) < 3 * math.sqrt(p * (1 - p) / 4000)


def test_exact_mean_measure_trivial_cases():
    empty = PointPattern(np.empty((0, 2)))
    assert exact_mean_measure(empty, 0.0, 1.0, 4.0, 4.0) == 0.0
    one = PointPattern([[3.0, 0.0]])
    assert exact_mean_measure(one, 1.3, 1.0, 4.0, 4.0) == pytest.approx(nu_n(1.3, 3.0, 1.0, 4.0, 4.0))


def test_exact_mean_measure_approaches_limit_periodically():
    pat = gen_hexagonal(50)
    target = log_lambda_measure(0.0, pat.density, 1.0, 4.0)
    assert target == pytest.approx(2 * math.pi / math.sqrt(3))
    errs = [abs(exact_mean_measure(pat, 0.0, 1.0, 4.0, n, periodic=True) / target - 1) for n in (25, 100, 400)]
    assert errs[2] < 0.1
    assert errs[0] >= errs[1] >= errs[2] - 1e-9


def test_annulus_count_matches_quadrature():
    lam, log_t, K, beta, sigma = 0.7, 2.0, 1.3, 3.5, 1.8
    mu = -sigma**2 / 2

    def integrand(r):
        return 2 * math.pi * r * lam * ndtr((log_t - beta * math.log(K * r) + mu) / sigma)

    for inner, outer in [(0.0, 4.0), (1.0, 30.0), (2.0, math.inf)]:
        ref = quad(integrand, inner, outer if math.isfinite(outer) else 1e4, limit=400)[0]
        got = lognormal_annulus_count(lam, log_t, K, beta, mu, sigma, inner, outer)
        assert got == pytest.approx(ref, rel=1e-8)


def test_continuum_measure_full_plane_equals_limit():
    s = np.array([-2.0, 0.0, 1.5])
    np.testing.assert_allclose(
        continuum_mean_measure(1.2, s, 0.8, 4.0, 9.0), log_lambda_measure(s, 1.2, 0.8, 4.0), rtol=1e-10
    )


def test_mark_kernel_validation_and_io(tmp_path):
    with pytest.raises(ParameterError):
        MarkKernel((0, 1), np.array([0.0]), np.array([[0.4, 0.4]]))
    k = MarkKernel((0, 1), np.array([-1.0, 1.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(k(0.0), [0.5, 0.5])
    np.testing.assert_allclose(k(-5.0), [1.0, 0.0])
    path = tmp_path / "k.json"
    path.write_text(json.dumps(k.to_dict()))
    assert MarkKernel.load(path).to_dict() == k.to_dict()


def test_poisson_lstar_sampler_matches_frechet_law():
    lam, K, beta = 1.0, 1.0, 4.0
    spec = ShadowingSpec.from_db(10)
    x = sample_poisson_lstar(lam, K, beta, spec, 10_000, 3.0, seed=1)
    a = lam * math.pi * moment_s_2beta(spec.sigma, beta) / K**2
    assert sps.kstest(x, lambda t: -np.expm1(-a * t ** (2 / beta))).pvalue > 0.01


def test_poisson_lstar_sampler_generic_extra():
    spec = ShadowingSpec(1.0, GenericSamples(np.random.default_rng(0).exponential(size=4000)))
    x = sample_poisson_lstar(1.0, 1.0, 4.0, spec, 5_000, 2.0, seed=2)
    a = math.pi * moment_s_2beta(1.0, 4.0) * math.gamma(1.5)
    assert sps.kstest(x, lambda t: -np.expm1(-a * t**0.5)).pvalue > 0.01
