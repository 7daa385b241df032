"""Empirical CDFs, Kolmogorov-Smirnov machinery and the hexagonal-vs-Poisson protocols."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._rng import make_rng, parallel_map
from .errors import DataError, ParameterError
from .geometry import PointPattern
from .poisson_limit import LimitModel, lstar_cdf, sample_limit_sir
from .propagation import ShadowingSpec, sample_user_losses

# asymptotic Kolmogorov quantiles c(alpha): P(sqrt(n) D > c) = alpha
KS_CONSTANTS = {0.01: 1.628, 0.05: 1.358, 0.10: 1.224}


@dataclass(frozen=True)
class EmpiricalCdf:
    sorted_values: np.ndarray
    n: int

    def __call__(self, x):
        out = np.searchsorted(self.sorted_values, x, side="right") / self.n
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, x):
        out = np.searchsorted(self.sorted_values, x, side="left") / self.n
        return float(out) if np.ndim(out) == 0 else out

    def survival_ge(self, t):
        """P(X >= t)."""
        out = 1.0 - np.searchsorted(self.sorted_values, t, side="left") / self.n
        return float(out) if np.ndim(out) == 0 else out


def ecdf(samples) -> EmpiricalCdf:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if len(x) == 0:
        raise DataError("empirical CDF of an empty sample")
    x.setflags(write=False)
    return EmpiricalCdf(x, len(x))


def ks_distance(F: EmpiricalCdf, cdf: Callable) -> float:
    """sup |F_n - F| for a continuous reference CDF, checked on both sides of every jump."""
    x = F.sorted_values
    ref = np.asarray(cdf(x), dtype=float)
    upper = np.searchsorted(x, x, side="right") / F.n
    lower = np.searchsorted(x, x, side="left") / F.n
    return float(max(np.max(upper - ref), np.max(ref - lower), 0.0))


def ks_two_sample_distance(x, y) -> float:
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / len(x)
    fy = np.searchsorted(y, pts, side="right") / len(y)
    return float(np.max(np.abs(fx - fy)))


@dataclass(frozen=True)
class KsReport:
    statistic: float
    n: float
    alpha: float
    critical: float
    reject: bool

    def to_dict(self) -> dict:
        return asdict(self)


def ks_critical(n: float, alpha: float) -> float:
    if alpha not in KS_CONSTANTS:
        raise ParameterError(f"unsupported alpha {alpha}; supported levels: {sorted(KS_CONSTANTS)}")
    if not n > 0:
        raise ParameterError("sample size must be positive")
    return KS_CONSTANTS[alpha] / math.sqrt(n)


def ks_test(D: float, n: int, alpha: float = 0.01, m: int | None = None) -> KsReport:
    """Asymptotic K-S decision; with ``m`` the two-sample effective size nm/(n+m) is used."""
    n_eff = n if m is None else n * m / (n + m)
    crit = ks_critical(n_eff, alpha)
    return KsReport(float(D), float(n_eff), alpha, crit, bool(D > crit))


def dkw_epsilon(n: int, alpha: float = 0.01) -> float:
    """Half-width of the Dvoretzky-Kiefer-Wolfowitz band (Massart constant)."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


def sigma_db_grid(step: float = 0.5, top: float = 30.0) -> np.ndarray:
    return np.round(np.arange(0.0, top + step / 2, step), 10)


@dataclass(frozen=True)
class Protocol:
    obs_per_realization: int = 300
    realizations: int = 10
    pass_quota: int = 9
    alpha: float = 0.01
    sigma_db_grid: tuple = tuple(sigma_db_grid())


@dataclass
class CriticalSigmaResult:
    beta: float
    n_stations: int
    sigma_db_star: float | None
    grid: list
    pass_counts: list
    protocol: dict = field(default_factory=dict)

    @property
    def above_grid(self) -> bool:
        return self.sigma_db_star is None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["above_grid_max"] = self.above_grid
        return d


def _lstar_pass(args) -> bool:
    pattern, beta, K, sigma_db, protocol, seed, g, r = args
    spec = ShadowingSpec.from_db(sigma_db)
    rng = make_rng(seed, g, r)
    losses = sample_user_losses(pattern, spec, K, beta, protocol.obs_per_realization, rng)
    model = LimitModel.from_network(pattern.density, K, beta, spec)
    D = ks_distance(ecdf(losses.min(axis=1)), lambda t: lstar_cdf(t, model))
    return not ks_test(D, protocol.obs_per_realization, protocol.alpha).reject


def lstar_pass_counts(pattern, beta, K, protocol: Protocol, seed=0, workers=1) -> list[int]:
    grid = list(protocol.sigma_db_grid)
    jobs = [
        (pattern, beta, K, float(s), protocol, seed, g, r)
        for g, s in enumerate(grid)
        for r in range(protocol.realizations)
    ]
    passed = parallel_map(_lstar_pass, jobs, workers)
    counts = np.asarray(passed, dtype=int).reshape(len(grid), protocol.realizations).sum(axis=1)
    return counts.tolist()


def critical_sigma_search(
    pattern: PointPattern, beta: float, K: float = 1.0, protocol: Protocol = Protocol(), seed=0, workers: int = 1
) -> CriticalSigmaResult:
    """Smallest grid sigma_dB at which L* of the pattern passes the K-S test against
    the equivalent Poisson law in at least ``pass_quota`` realisations.

    Every grid point is evaluated (the pass counts are part of the result) and
    the first passing point is reported; ``None`` means no grid point passed.
    """
    counts = lstar_pass_counts(pattern, beta, K, protocol, seed, workers)
    grid = [float(s) for s in protocol.sigma_db_grid]
    star = next((s for s, c in zip(grid, counts) if c >= protocol.pass_quota), None)
    proto = asdict(protocol)
    proto["sigma_db_grid"] = grid
    return CriticalSigmaResult(beta, len(pattern), star, grid, counts, proto)


def critical_sigma_from_counts(grid: Sequence[float], counts: Sequence[int], quota: int) -> float | None:
    return next((float(s) for s, c in zip(grid, counts) if c >= quota), None)


def hex_sir_samples(pattern: PointPattern, spec: ShadowingSpec, K: float, beta: float, n: int, seed=None) -> np.ndarray:
    """Strongest-server SIR (power ratio) for uniform users on a torus pattern."""
    losses = sample_user_losses(pattern, spec, K, beta, n, seed)
    power = 1.0 / losses
    top = power.max(axis=1)
    return top / (power.sum(axis=1) - top)


def periodic_sir_samples(
    pattern: PointPattern, spec: ShadowingSpec, K: float, beta: float, n: int, seed=None, window_mean: float = 200.0
) -> np.ndarray:
    """SIR for uniform users in the infinite periodic extension of a torus pattern.

    Stations with loss up to the level holding ``window_mean`` limit-process
    points on average are simulated exactly; the interference beyond it is
    replaced by its continuum mean, as in :func:`sample_limit_sir`.
    """
    from .periodic import PeriodicSampler
    from .poisson_limit import interference_tail_mean

    rng = make_rng(seed)
    # the sampler rescales K, so the limit constant is lam pi / K^2
    model = LimitModel(pattern.density * np.pi / K**2, beta, spec.sigma, K)
    y_max = (window_mean / model.a) ** (beta / 2)
    tail = interference_tail_mean(model, y_max)
    users = (rng.random((n, 2)) - 0.5) * np.array([pattern.metric.width, pattern.metric.height])
    reps = PeriodicSampler(pattern, spec, K, beta, y_max).sample(n, rng, users=users)
    out = np.empty(n)
    for i, r in enumerate(reps):
        p = 1.0 / r.losses
        out[i] = p.max() / (p.sum() - p.max() + tail) if len(p) else 0.0
    return out


def default_sir_thresholds() -> np.ndarray:
    return np.logspace(-2, 3, 51)


@dataclass
class SirComparison:
    thresholds: np.ndarray
    pattern_ccdf: np.ndarray
    limit_ccdf: np.ndarray
    ks: KsReport
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "pattern_ccdf": self.pattern_ccdf.tolist(),
            "limit_ccdf": self.limit_ccdf.tolist(),
            "ks": self.ks.to_dict(),
            "meta": self.meta,
        }


def sir_experiment(
    pattern: PointPattern,
    sigma_db: float,
    beta: float,
    K: float = 1.0,
    replications: int = 500,
    seed=0,
    thresholds=None,
    limit_replications: int | None = None,
    l_max: float | None = None,
    alpha: float = 0.10,
    periodic: bool = False,
) -> SirComparison:
    """SIR of the torus pattern vs the limit model, with a two-sample K-S report.

    With ``periodic`` the pattern is tiled over the whole plane instead of
    being wrapped, which restores the far interferers a finite torus lacks.
    """
    if replications < 100:
        raise ParameterError("sir_experiment needs at least 100 replications")
    thresholds = default_sir_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    spec = ShadowingSpec.from_db(sigma_db)
    if periodic:
        hex_sir = periodic_sir_samples(pattern, spec, K, beta, replications, make_rng(seed, 0))
    else:
        hex_sir = hex_sir_samples(pattern, spec, K, beta, replications, make_rng(seed, 0))
    model = LimitModel.from_network(pattern.density, K, beta, spec)
    m = limit_replications or replications
    lim_sir = sample_limit_sir(model, m, l_max, make_rng(seed, 1))
    D = ks_two_sample_distance(hex_sir, lim_sir)
    report = ks_test(D, replications, alpha, m)

    def ccdf(x):
        x = np.sort(x)
        return 1.0 - np.searchsorted(x, thresholds, side="right") / len(x)

    meta = {"sigma_db": sigma_db, "beta": beta, "K": K, "replications": replications,
            "limit_replications": m, "n_stations": len(pattern), "seed": seed, "periodic": periodic}
    return SirComparison(thresholds, ccdf(hex_sir), ccdf(lim_sir), report, meta)
