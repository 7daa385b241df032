"""Path loss, log-normal shadowing and the propagation-loss process of a user.

Conventions: shadowing ``S = exp(mu + sigma Z)`` with ``mu = -sigma^2/2`` so
that ``E[S] = 1``; ``sigma`` is on the natural-log scale (use
:func:`sigma_from_db` for decibels).  A propagation loss is
``L = (K r)^beta / S``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from ._rng import make_rng
from .errors import EmptyProcessError, ParameterError
from .geometry import PointPattern, check_user, distances

DB_PER_NEPER = 10.0 / math.log(10.0)


def sigma_from_db(sigma_db: float) -> float:
    return sigma_db / DB_PER_NEPER


def db_from_sigma(sigma: float) -> float:
    return sigma * DB_PER_NEPER


def _check_beta(beta: float) -> None:
    if not beta > 2:
        raise ParameterError(f"path-loss exponent must exceed 2, got {beta}")


def path_loss(r, K: float, beta: float):
    """(K r)^beta."""
    if not K > 0:
        raise ParameterError("path-loss constant K must be positive")
    _check_beta(beta)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ParameterError("path loss is singular at r = 0")
    out = (K * r_arr) ** beta
    return float(out) if out.ndim == 0 else out


def moment_s_2beta(sigma: float, beta: float) -> float:
    """E[S^(2/beta)] for unit-mean log-normal S."""
    return math.exp(-sigma**2 / beta + 2.0 * sigma**2 / beta**2)


def k_sigma(K: float, beta: float, sigma: float) -> float:
    """Path-loss constant rescaled by sqrt(E[S^(2/beta)])."""
    return K * math.exp(sigma**2 * (2.0 - beta) / (2.0 * beta**2))


@dataclass(frozen=True)
class RayleighPower:
    """Exponentially distributed power factor (Rayleigh amplitude)."""

    mean: float = 1.0

    def __post_init__(self):
        if not self.mean > 0:
            raise ParameterError("Rayleigh power mean must be positive")


@dataclass(frozen=True)
class GenericSamples:
    """Empirical distribution of the extra factor, resampled with replacement."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals or min(vals) <= 0:
            raise ParameterError("generic extra-factor samples must be positive and non-empty")
        object.__setattr__(self, "values", vals)


ExtraFactor = RayleighPower | GenericSamples


@dataclass(frozen=True)
class ShadowingSpec:
    sigma: float = 0.0
    extra_factor: ExtraFactor | None = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ParameterError("sigma must be non-negative")

    @property
    def mu(self) -> float:
        return -0.5 * self.sigma**2

    @classmethod
    def from_db(cls, sigma_db: float, extra_factor: ExtraFactor | None = None) -> "ShadowingSpec":
        return cls(sigma_from_db(sigma_db), extra_factor)


def sample_extra(extra: ExtraFactor, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(extra, RayleighPower):
        return rng.exponential(extra.mean, n)
    return rng.choice(np.asarray(extra.values), n)


def sample_shadowing(spec: ShadowingSpec, n: int, seed=None, return_z: bool = False):
    """i.i.d. propagation effects; with an extra factor the draws are ``S * F``.

    ``return_z`` also returns the Gaussian drivers ``Z`` of the log-normal part.
    """
    if n < 0:
        raise ParameterError("n must be non-negative")
    rng = make_rng(seed)
    z = rng.standard_normal(n)
    s = np.exp(spec.mu + spec.sigma * z)
    if spec.extra_factor is not None:
        s = s * sample_extra(spec.extra_factor, n, rng)
    return (s, z) if return_z else s


def rescaled_distance(r, sigma: float, beta: float):
    """(beta/sigma) ln r - sigma/beta."""
    if not sigma > 0:
        raise ParameterError("rescaled distance needs sigma > 0")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ParameterError("distance must be positive")
    out = beta / sigma * np.log(r_arr) - sigma / beta
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MarkKernel:
    """Conditional type law given the Gaussian driver of the shadowing.

    ``probs[k]`` is the probability vector over ``types`` at ``z_grid[k]``;
    between grid points it is linearly interpolated, outside it is clamped.
    """

    types: tuple
    z_grid: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        z = np.array(self.z_grid, dtype=float).ravel()
        p = np.array(self.probs, dtype=float).reshape(len(z), -1)
        if len(z) == 0 or p.shape[1] != len(self.types):
            raise ParameterError("kernel table shape does not match its type space")
        if np.any(np.diff(z) < 0):
            raise ParameterError("kernel z-grid must be non-decreasing")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise ParameterError("kernel rows must be probability vectors")
        z.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "z_grid", z)
        object.__setattr__(self, "probs", p)

    @classmethod
    def constant(cls, probs: Sequence[float], types: Sequence | None = None) -> "MarkKernel":
        probs = np.asarray(probs, dtype=float)
        types = tuple(range(len(probs))) if types is None else tuple(types)
        return cls(types, np.array([0.0]), probs[None, :])

    @classmethod
    def indicator(cls, threshold: float = 0.0, types: Sequence = (0, 1), width: float = 1e-12) -> "MarkKernel":
        """Type ``types[1]`` iff z > threshold (a ramp of ``width`` stands in for the jump)."""
        return cls(tuple(types), np.array([threshold, threshold + width]), np.array([[1.0, 0.0], [0.0, 1.0]]))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        cols = [np.interp(z, self.z_grid, self.probs[:, k]) for k in range(len(self.types))]
        return np.stack(cols, axis=-1)

    def sample_index(self, z, rng: np.random.Generator) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        cum = np.cumsum(self(z), axis=-1)
        u = rng.random(len(z))
        return np.minimum((u[:, None] >= cum).sum(axis=1), len(self.types) - 1)

    def index_of(self, label) -> int:
        return self.types.index(label)

    def to_dict(self) -> dict:
        return {"types": list(self.types), "z_grid": self.z_grid.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MarkKernel":
        return cls(tuple(d["types"]), np.asarray(d["z_grid"]), np.asarray(d["probs"]))

    @classmethod
    def load(cls, path) -> "MarkKernel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MarkedPropagationSample:
    """One realisation of the marked propagation process, sorted by loss."""

    losses: np.ndarray
    raw_distances: np.ndarray
    rescaled_distances: np.ndarray | None
    types: np.ndarray | None
    z: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.losses)

    @property
    def log_losses(self) -> np.ndarray:
        return np.log(self.losses)

    def to_csv(self, path) -> None:
        path = Path(path)
        n = len(self)
        resc = self.rescaled_distances if self.rescaled_distances is not None else np.full(n, np.nan)
        types = self.types if self.types is not None else [""] * n
        with path.open("w") as fh:
            fh.write("loss,log_loss,distance,rescaled_distance,type\n")
            for row in zip(self.losses, self.log_losses, self.raw_distances, resc, types):
                fh.write(",".join([repr(float(v)) for v in row[:4]] + [str(row[4])]) + "\n")
        path.with_suffix(".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))


def default_truncation(sigma: float) -> tuple[float, float]:
    """Inner/outer truncation radii satisfying the asymptotic conditions.

    ``log(max(a, 1)) / sigma^2 -> 0`` and ``log(b) / sigma^2 -> inf``.
    """
    return max(math.exp(sigma) - 1.0, 0.0), math.exp(sigma**3)


def _resolve_truncation(truncation, sigma):
    if truncation is None:
        return 0.0, math.inf
    if truncation == "default":
        return default_truncation(sigma)
    a, b = truncation
    a = 0.0 if a is None else float(a)
    b = math.inf if b is None else float(b)
    if not 0 <= a < b:
        raise ParameterError("truncation needs 0 <= a < b")
    return a, b


def propagation_process(
    pattern: PointPattern,
    user,
    spec: ShadowingSpec,
    K: float,
    beta: float,
    truncation=None,
    marks: MarkKernel | None = None,
    seed=None,
    rescale: bool = True,
) -> MarkedPropagationSample:
    """Marked propagation losses seen by ``user`` from every retained station.

    With ``rescale`` the path-loss constant is replaced by ``k_sigma(K, beta, sigma)``.
    Types are drawn from ``marks`` at ``z - 2 sigma / beta``.
    ``truncation`` is ``None``, ``"default"`` or ``(a, b)``; stations with
    ``a < |X - user| < b`` are kept.
    """
    if not K > 0:
        raise ParameterError("path-loss constant K must be positive")
    _check_beta(beta)
    check_user(user, pattern)
    sigma = spec.sigma
    a, b = _resolve_truncation(truncation, sigma)
    d = distances(user, pattern)
    d = d[(d > a) & (d < b)]
    if len(d) == 0:
        raise EmptyProcessError("no station left after truncation")
    rng = make_rng(seed)
    s, z = sample_shadowing(spec, len(d), rng, return_z=True)
    k_eff = k_sigma(K, beta, sigma) if rescale else K
    losses = (k_eff * d) ** beta / s
    types = None
    if marks is not None:
        idx = marks.sample_index(z - 2.0 * sigma / beta, rng)
        types = np.asarray(marks.types, dtype=object)[idx]
    order = np.argsort(losses, kind="stable")
    meta = {
        "K": K, "K_eff": k_eff, "beta": beta, "sigma": sigma, "sigma_db": db_from_sigma(sigma),
        "truncation": [a, b if math.isfinite(b) else None],
        "seed": seed if isinstance(seed, (int, type(None))) else "generator",
    }
    return MarkedPropagationSample(
        losses=losses[order],
        raw_distances=d[order],
        rescaled_distances=rescaled_distance(d[order], sigma, beta) if sigma > 0 else None,
        types=None if types is None else types[order],
        z=z[order],
        meta=meta,
    )


def sample_user_losses(
    pattern: PointPattern,
    spec: ShadowingSpec,
    K: float,
    beta: float,
    n_users: int,
    seed=None,
    rescale: bool = False,
) -> np.ndarray:
    """Loss matrix ``(n_users, len(pattern))``: fresh uniform user and shadowing per row.

    The user is dropped uniformly in the pattern's rectangle (the torus for
    wrap-around patterns).
    """
    _check_beta(beta)
    metric = pattern.metric
    if not metric.is_torus:
        raise ParameterError("uniform user placement needs a torus pattern")
    rng = make_rng(seed)
    users = (rng.random((n_users, 2)) - 0.5) * np.array([metric.width, metric.height])
    d = distances(users[:, None, :], pattern)
    s = sample_shadowing(spec, d.size, rng).reshape(d.shape)
    k_eff = k_sigma(K, beta, spec.sigma) if rescale else K
    return (k_eff * d) ** beta / s


def nu_n(s, r, K: float, beta: float, n: float):
    """P(log-loss <= s) for a station at distance r, with sigma^2 = n and rescaled K."""
    if not n > 0:
        raise ParameterError("n = sigma^2 must be positive")
    r = np.asarray(r, dtype=float)
    out = ndtr((np.asarray(s, dtype=float) - beta * np.log(K * r) - n / beta) / math.sqrt(n))
    return float(out) if np.ndim(out) == 0 else out


def _call_spread(m, v, log_c):
    """E[(exp(Y) - c)^+] for Y ~ N(m, v^2), evaluated in log space."""
    m, v, log_c = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (m, v, log_c)))
    out = np.zeros(m.shape)
    det = v == 0
    if det.any():
        out[det] = np.maximum(np.exp(m[det]) - np.exp(log_c[det]), 0.0)
    st = ~det & np.isfinite(log_c)
    if st.any():
        mm, vv, lc = m[st], v[st], log_c[st]
        big = mm + vv**2 / 2 + log_ndtr((mm + vv**2 - lc) / vv)
        small = lc + log_ndtr((mm - lc) / vv)
        out[st] = np.exp(big) * -np.expm1(np.minimum(small - big, 0.0))
    zero_c = ~det & np.isneginf(log_c)
    out[zero_c] = np.exp(m[zero_c] + v[zero_c] ** 2 / 2)
    return out


def lognormal_annulus_count(lam, log_t, K, beta, mu, sigma, inner=0.0, outer=math.inf):
    """Mean number of stations with log-loss <= log_t in ``inner < |x| < outer``.

    Stations form a density-``lam`` continuum (or Poisson field); losses are
    ``(K r)^beta / S`` with ``ln S ~ N(mu, sigma^2)``.  Closed form: the count
    is ``lam pi E[(min(rho^2, b^2) - a^2)^+]`` with ``rho`` log-normal.
    """
    m = 2.0 * (np.asarray(log_t, dtype=float) + mu) / beta - 2.0 * math.log(K)
    v = 2.0 * sigma / beta
    lo = -math.inf if inner <= 0 else 2.0 * math.log(inner)
    hi = math.inf if math.isinf(outer) else 2.0 * math.log(outer)
    val = lam * math.pi * (_call_spread(m, v, lo) - (_call_spread(m, v, hi) if math.isfinite(hi) else 0.0))
    val = np.maximum(val, 0.0)
    return float(val) if val.ndim == 0 else val


def continuum_mean_measure(lam, s, K, beta, n, inner=0.0, outer=math.inf):
    """lam times the integral of nu_n(s, |x|) over an annulus (closed form)."""
    sigma = math.sqrt(n)
    return lognormal_annulus_count(lam, s, k_sigma(K, beta, sigma), beta, -n / 2.0, sigma, inner, outer)


def log_lambda_measure(s, lam: float, K: float, beta: float):
    """Lambda_log((-inf, s]) = (lam pi / K^2) exp(2 s / beta)."""
    return lam * math.pi / K**2 * np.exp(2.0 * np.asarray(s, dtype=float) / beta)


def _tiled_points(pattern: PointPattern, user, radius: float) -> np.ndarray:
    """All stations of the periodic extension within ``radius`` of ``user``."""
    w, h = pattern.metric.width, pattern.metric.height
    base = pattern.points - np.asarray(user, dtype=float)
    qx = int(math.ceil(radius / w)) + 1
    qy = int(math.ceil(radius / h)) + 1
    sx, sy = np.meshgrid(np.arange(-qx, qx + 1) * w, np.arange(-qy, qy + 1) * h, indexing="ij")
    shifts = np.column_stack([sx.ravel(), sy.ravel()])
    pts = (base[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    r = np.hypot(pts[:, 0], pts[:, 1])
    return r[r < radius]


def exact_mean_measure(
    pattern: PointPattern,
    s,
    K: float,
    beta: float,
    n: float,
    truncation=None,
    user=(0.0, 0.0),
    periodic: bool = False,
    exact_radius: float | None = None,
):
    """Mean number of log-losses <= s: the sum of nu_n over retained stations.

    With ``periodic`` the torus tile is repeated over the whole plane: stations
    closer than ``exact_radius`` are summed exactly and the remainder is
    replaced by the continuum integral at the tile's density.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    a, b = _resolve_truncation(truncation, math.sqrt(n))
    if len(pattern) == 0:
        out = np.zeros_like(s_arr)
    elif not periodic:
        d = distances(user, pattern)
        d = d[(d > a) & (d < b)]
        out = nu_n(s_arr[:, None], d[None, :], K, beta, n).sum(axis=1) if len(d) else np.zeros_like(s_arr)
    else:
        if not pattern.metric.is_torus:
            raise ParameterError("periodic extension needs a torus pattern")
        if exact_radius is None:
            exact_radius = 3.0 * max(pattern.metric.width, pattern.metric.height)
        d = _tiled_points(pattern, user, exact_radius)
        d = d[(d > a) & (d < b)]
        near = nu_n(s_arr[:, None], d[None, :], K, beta, n).sum(axis=1)
        lam = len(pattern) / pattern.metric.area
        inner = max(exact_radius, a)
        far = continuum_mean_measure(lam, s_arr, K, beta, n, inner, b) if inner < b else 0.0
        out = near + far
    return float(out[0]) if np.ndim(s) == 0 else out


def _extra_log_nodes(extra: ExtraFactor | None):
    """Quadrature nodes/weights for E over ln F."""
    if extra is None:
        return np.zeros(1), np.ones(1)
    if isinstance(extra, RayleighPower):
        x, w = np.polynomial.laguerre.laggauss(80)
        return np.log(extra.mean * x), w
    vals = np.asarray(extra.values)
    if len(vals) > 128:
        vals = np.quantile(vals, (np.arange(128) + 0.5) / 128)
    return np.log(vals), np.full(len(vals), 1.0 / len(vals))


def sample_poisson_lstar(
    lam: float,
    K: float,
    beta: float,
    spec: ShadowingSpec,
    size: int,
    radius: float,
    seed=None,
    rescale: bool = False,
) -> np.ndarray:
    """Strongest-station loss L* in independent infinite Poisson networks.

    Stations inside ``radius`` are simulated explicitly.  Losses from the
    stations outside form an independent Poisson process whose mean measure
    is known in closed form, so its minimum is drawn by inversion; no
    truncation bias remains.
    """
    if not lam > 0 or not radius > 0:
        raise ParameterError("density and radius must be positive")
    _check_beta(beta)
    rng = make_rng(seed)
    k_eff = k_sigma(K, beta, spec.sigma) if rescale else K

    counts = rng.poisson(lam * math.pi * radius**2, size)
    total = int(counts.sum())
    r = radius * np.sqrt(rng.random(total))
    losses = (k_eff * r) ** beta / sample_shadowing(spec, total, rng)
    inner_min = np.full(size, np.inf)
    nonempty = counts > 0
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    if total:
        inner_min[nonempty] = np.minimum.reduceat(losses, starts[nonempty])

    nodes, weights = _extra_log_nodes(spec.extra_factor)

    def outer_count(log_t):
        c = lognormal_annulus_count(lam, log_t[:, None] + nodes[None, :], k_eff, beta, spec.mu, spec.sigma, radius)
        return c @ weights

    target = rng.exponential(size=size)
    lo = np.full(size, -60.0)
    hi = np.full(size, 60.0)
    while np.any(bad := outer_count(hi) < target):
        hi[bad] *= 2
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = outer_count(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.minimum(inner_min, np.exp(0.5 * (lo + hi)))
