"""Large-shadowing convergence diagnostics for a periodic (torus-tiled) pattern.

For each sigma the strongest stations are sampled with :class:`PeriodicSampler`
inside a loss window holding ``window_mean`` points of the limit process on
average, and five quantities are compared with their limits.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from ._rng import make_rng
from .geometry import PointPattern
from .periodic import PeriodicSampler
from .poisson_limit import LimitModel, limit_mark_law, lstar_cdf
from .propagation import MarkKernel, ShadowingSpec, exact_mean_measure, log_lambda_measure
from .stats import ecdf, ks_distance, ks_test


@dataclass
class ConvergenceReport:
    sigma_db: float
    replications: int
    n_points: int
    y_max: float
    lstar_ks: dict
    log_loss_ks: dict
    mean_count: float
    exact_mean_count: float
    limit_mean_count: float
    rescaled_gaussian_ks: dict
    abs_corr: float
    corr_bound: float
    type_freq: dict
    type_limit: dict
    type_max_z: float

    def to_dict(self) -> dict:
        return asdict(self)


def _cdf_on_grid(fn, lo, hi, size=256):
    grid = np.linspace(lo, hi, size)
    vals = np.maximum.accumulate(np.asarray(fn(grid), dtype=float))
    return lambda s: np.interp(s, grid, vals)


def convergence_report(
    pattern: PointPattern,
    sigma_db: float,
    beta: float,
    K: float = 1.0,
    replications: int = 100,
    window_mean: float = 10.0,
    kernel: MarkKernel | None = None,
    alpha: float = 0.01,
    seed=0,
) -> ConvergenceReport:
    kernel = MarkKernel.indicator() if kernel is None else kernel
    spec = ShadowingSpec.from_db(sigma_db)
    lam = len(pattern) / pattern.metric.area
    # K is rescaled to K^(sigma), so the limit constant is lam pi / K^2
    model = LimitModel(lam * math.pi / K**2, beta, spec.sigma, K, lam)
    log_y = 0.5 * beta * math.log(window_mean / model.a)
    y_max = math.exp(log_y)
    rng = make_rng(seed)
    w, h = pattern.metric.width, pattern.metric.height
    users = (rng.random((replications, 2)) - 0.5) * np.array([w, h])
    sampler = PeriodicSampler(pattern, spec, K, beta, y_max)
    reps = sampler.sample(replications, rng, users=users, marks=kernel)

    lstar = np.array([r.losses[0] if len(r) else np.inf for r in reps])
    d1 = ks_distance(ecdf(lstar), lambda t: lstar_cdf(t, model))

    log_l = np.concatenate([r.log_losses for r in reps])
    resc = np.concatenate([r.rescaled_distances for r in reps])
    types = np.concatenate([r.types for r in reps])
    n = len(log_l)
    sq = spec.sigma**2

    # counting measure of log-losses, normalised on the window
    lo = float(log_l.min()) if n else log_y - 1.0
    exact = lambda s: exact_mean_measure(pattern, s, K, beta, sq, periodic=True)
    exact_total = float(exact(log_y))
    cdf2 = _cdf_on_grid(lambda s: exact(s) / exact_total, lo, log_y)
    d2 = ks_distance(ecdf(log_l), cdf2)

    d3 = ks_distance(ecdf(resc), ndtr)
    corr = float(abs(np.corrcoef(log_l, resc)[0, 1])) if n > 2 else math.nan

    freq, limit, zmax = {}, {}, 0.0
    for label in kernel.types:
        p = limit_mark_law(kernel, math.inf, label)
        f = float(np.mean(types == label)) if n else math.nan
        se = math.sqrt(max(p * (1 - p), 1e-300) / n) if n else math.inf
        freq[str(label)] = f
        limit[str(label)] = p
        zmax = max(zmax, abs(f - p) / se)

    return ConvergenceReport(
        sigma_db=sigma_db,
        replications=replications,
        n_points=n,
        y_max=y_max,
        lstar_ks=ks_test(d1, replications, alpha).to_dict(),
        log_loss_ks=ks_test(d2, n, alpha).to_dict(),
        mean_count=n / replications,
        exact_mean_count=exact_total,
        limit_mean_count=float(log_lambda_measure(log_y, lam, K, beta)),
        rescaled_gaussian_ks=ks_test(d3, n, alpha).to_dict(),
        abs_corr=corr,
        corr_bound=3.0 / math.sqrt(n) if n else math.inf,
        type_freq=freq,
        type_limit=limit,
        type_max_z=zmax,
    )
