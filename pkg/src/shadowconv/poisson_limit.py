"""The limiting inhomogeneous Poisson propagation process and its marks.

The process has mean measure ``Lambda([0, y)) = a y^(2/beta)``; the
propagation constant ``a`` collects density, path-loss constant and the
``2/beta`` moment of the propagation effects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import ndtr

from ._rng import make_rng
from .errors import AccuracyError, MomentConditionError, ParameterError
from .propagation import (
    ExtraFactor,
    GenericSamples,
    MarkKernel,
    RayleighPower,
    ShadowingSpec,
    moment_s_2beta,
)


@dataclass(frozen=True)
class LimitModel:
    a: float
    beta: float
    sigma: float | None = None
    K: float = 1.0
    lam: float | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ParameterError("propagation constant a must be positive")
        if not self.beta >= 2:
            raise ParameterError("beta must be at least 2")
        if not self.K > 0:
            raise ParameterError("K must be positive")

    @classmethod
    def from_network(
        cls, lam: float, K: float, beta: float, spec: ShadowingSpec | None = None, rescaled: bool = False
    ) -> "LimitModel":
        """``a = lam pi E[S^(2/beta)] / K^2``; with ``rescaled`` K is already K^(sigma) so the moment cancels."""
        sigma = 0.0 if spec is None else spec.sigma
        moment = 1.0 if rescaled else moment_s_2beta(sigma, beta)
        if spec is not None and spec.extra_factor is not None:
            moment *= suzuki_scale(spec.extra_factor, beta)
        return cls(lam * math.pi * moment / K**2, beta, sigma, K, lam)


def intensity(y, model: LimitModel):
    """Lambda([0, y)) = a y^(2/beta)."""
    y = np.asarray(y, dtype=float)
    out = model.a * np.maximum(y, 0.0) ** (2.0 / model.beta)
    return float(out) if out.ndim == 0 else out


def sample_limit_process(model: LimitModel, l_max: float, seed=None) -> np.ndarray:
    """Sorted losses on (0, l_max] from unit-rate arrivals mapped by (G/a)^(beta/2)."""
    if not l_max > 0:
        raise ParameterError("l_max must be positive")
    rng = make_rng(seed)
    g_max = intensity(l_max, model)
    arrivals = []
    last = 0.0
    block = max(16, int(g_max * 1.1) + 16)
    while last <= g_max:
        g = last + np.cumsum(rng.exponential(size=block))
        arrivals.append(g)
        last = g[-1]
    g = np.concatenate(arrivals)
    g = g[g <= g_max]
    return (g / model.a) ** (model.beta / 2.0)


def sample_limit_marked_process(model: LimitModel, l_max: float, kernel: MarkKernel | None = None, seed=None):
    """Limit marked process on (0, l_max]: losses with i.i.d. marks.

    Each point carries a standard normal rescaled distance ``W`` and, with a
    kernel, a type drawn from ``kernel(W)``; marks are independent of losses.
    Returns ``(losses, rescaled_distances, types)``.
    """
    rng = make_rng(seed)
    losses = sample_limit_process(model, l_max, rng)
    w = rng.standard_normal(len(losses))
    types = None
    if kernel is not None:
        types = np.asarray(kernel.types, dtype=object)[kernel.sample_index(w, rng)] if len(w) else np.empty(0, object)
    return losses, w, types


def sample_lstar(model: LimitModel, size: int, seed=None) -> np.ndarray:
    """Strongest-station loss: the first arrival mapped, (E/a)^(beta/2)."""
    rng = make_rng(seed)
    return (rng.exponential(size=size) / model.a) ** (model.beta / 2.0)


def lstar_ccdf(t, model: LimitModel):
    """P(L* >= t) = exp(-a t^(2/beta))."""
    out = np.exp(-intensity(t, model))
    return float(out) if np.ndim(out) == 0 else out


def lstar_cdf(t, model: LimitModel):
    out = -np.expm1(-intensity(t, model))
    return float(out) if np.ndim(out) == 0 else out


def _sigma(model: LimitModel) -> float:
    return 0.0 if model.sigma is None else model.sigma


def conditional_distance_cdf(rho, u, model: LimitModel):
    """P(R <= rho | L = u): distance law of a station received with loss u."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or not u > 0:
        raise ParameterError("rho and u must be positive")
    sigma, beta = _sigma(model), model.beta
    gap = beta * np.log(model.K * rho) - math.log(u)
    if sigma == 0:
        out = (gap >= 0).astype(float)
    else:
        out = ndtr((gap + sigma**2 / 2 - 2 * sigma**2 / beta) / sigma)
    return float(out) if out.ndim == 0 else out


def sample_conditional_distance(u: float, model: LimitModel, size=None, seed=None):
    """R_u = (u^(1/beta)/K) exp(2 sigma^2/beta^2) S^(1/beta) with unit-mean log-normal S."""
    if not u > 0:
        raise ParameterError("u must be positive")
    rng = make_rng(seed)
    sigma, beta = _sigma(model), model.beta
    z = rng.standard_normal(size)
    log_s = -sigma**2 / 2 + sigma * z
    return u ** (1 / beta) / model.K * np.exp(2 * sigma**2 / beta**2 + log_s / beta)


def gaussian_kernel_integral(kernel: MarkKernel, mean: float = 0.0, upper: float = math.inf) -> np.ndarray:
    """Integral of kernel(w) against the N(mean, 1) density over (-inf, upper].

    The kernel is piecewise linear in w, so each segment integrates in closed
    form with the normal CDF and density.
    """
    g = kernel.z_grid
    p = kernel.probs
    edges = np.concatenate([[-np.inf], g, [np.inf]])
    total = np.zeros(len(kernel.types))

    def piece(lo, hi, p_lo, slope, g_lo):
        hi = min(hi, upper)
        if hi <= lo:
            return 0.0
        a, b = lo - mean, hi - mean
        mass = ndtr(b) - ndtr(a)
        if slope is None:
            return p_lo * mass
        # p(w) = p_lo + slope (w - g_lo)
        dens = (math.exp(-a * a / 2) if np.isfinite(a) else 0.0) - (math.exp(-b * b / 2) if np.isfinite(b) else 0.0)
        return (p_lo + slope * (mean - g_lo)) * mass + slope * dens / math.sqrt(2 * math.pi)

    total += piece(edges[0], edges[1], p[0], None, None)
    for k in range(len(g) - 1):
        lo, hi = g[k], g[k + 1]
        if hi == lo:
            continue
        if hi - lo < 1e-6:
            # ramp narrower than the integration error: use its midpoint value
            total += piece(lo, hi, 0.5 * (p[k] + p[k + 1]), None, None)
        else:
            total += piece(lo, hi, p[k], (p[k + 1] - p[k]) / (hi - lo), lo)
    total += piece(edges[-2], edges[-1], p[-1], None, None)
    return total


def _type_select(kernel: MarkKernel, values: np.ndarray, tau):
    if tau is None:
        return float(values.sum())
    labels = tau if isinstance(tau, (set, frozenset, list, tuple)) else [tau]
    return float(sum(values[kernel.index_of(lbl)] for lbl in labels))


def tilted_type_law(kernel: MarkKernel, sigma: float, beta: float) -> np.ndarray:
    """Type law of a station given its loss, E[kernel(Z + 2 sigma / beta)].

    This is for a kernel applied to the raw shadowing driver; given the loss
    that driver is N(2 sigma / beta, 1).  The propagation process draws types
    at the shifted driver instead, whose law is :func:`limit_mark_law`.
    """
    law = gaussian_kernel_integral(kernel, mean=2.0 * sigma / beta)
    if abs(law.sum() - 1.0) > 1e-9:
        raise AccuracyError(f"type law sums to {law.sum()!r}")
    return law


def limit_mark_law(kernel: MarkKernel, rho: float = math.inf, tau=None) -> float:
    """G(rho, tau): P(Z <= rho, T in tau) with T drawn from kernel(Z)."""
    vals = gaussian_kernel_integral(kernel, 0.0, rho)
    if math.isinf(rho) and rho > 0 and abs(vals.sum() - 1.0) > 1e-9:
        raise AccuracyError(f"mark law sums to {vals.sum()!r}")
    return _type_select(kernel, vals, tau)


def conditional_mark_law(rho: float, tau, u: float, model: LimitModel, kernel: MarkKernel) -> float:
    """P(R <= rho, T in tau | L = u) for log-normal shadowing.

    Types follow the shifted kernel used by the propagation process: T is
    drawn at ``Z - 2 sigma / beta``, which given the loss is standard normal.
    """
    sigma = _sigma(model)
    if not sigma > 0:
        raise ParameterError("conditional mark law needs sigma > 0")
    if not (rho > 0 and u > 0):
        raise ParameterError("rho and u must be positive")
    shift = 2.0 * sigma / model.beta
    upper = (model.beta * math.log(model.K * rho) - math.log(u) + sigma**2 / 2) / sigma - shift
    vals = gaussian_kernel_integral(kernel, 0.0, upper)
    return _type_select(kernel, vals, tau)


def suzuki_scale(extra: ExtraFactor | None, beta: float) -> float:
    """E[F^(2/beta)] of the extra propagation factor."""
    if extra is None:
        return 1.0
    if isinstance(extra, RayleighPower):
        return extra.mean ** (2.0 / beta) * float(gamma_fn(1.0 + 2.0 / beta))
    if isinstance(extra, GenericSamples):
        val = float(np.mean(np.asarray(extra.values) ** (2.0 / beta)))
    else:
        val = float(np.mean(np.asarray(extra, dtype=float) ** (2.0 / beta)))
    if not math.isfinite(val):
        raise MomentConditionError("E[F^(2/beta)] is not finite")
    return val


def interference_tail_mean(model: LimitModel, l_max: float) -> float:
    """E[sum of 1/L over losses beyond l_max] = 2a/(beta-2) l_max^(2/beta - 1)."""
    if not model.beta > 2:
        raise ParameterError("interference diverges for beta <= 2")
    return 2 * model.a / (model.beta - 2) * l_max ** (2 / model.beta - 1)


def sir_from_losses(losses, tail: float = 0.0) -> float:
    """Strongest-server SIR as a received-power ratio; inf without interference."""
    p = 1.0 / np.asarray(losses, dtype=float)
    if len(p) == 0:
        return 0.0
    interference = p.sum() - p.max() + tail
    return math.inf if interference == 0 else float(p.max() / interference)


def default_l_max(model: LimitModel, mean_count: float = 2000.0) -> float:
    return (mean_count / model.a) ** (model.beta / 2)


def sample_limit_sir(model: LimitModel, size: int, l_max: float | None = None, seed=None) -> np.ndarray:
    """SIR samples of the limit process truncated at l_max with mean tail compensation."""
    if not model.beta > 2:
        raise ParameterError("interference diverges for beta <= 2")
    rng = make_rng(seed)
    l_max = default_l_max(model) if l_max is None else l_max
    g_max = intensity(l_max, model)
    tail = interference_tail_mean(model, l_max)
    out = np.empty(size)
    chunk = max(1, int(4e6 // max(g_max, 1.0)))
    for start in range(0, size, chunk):
        n = min(chunk, size - start)
        counts = rng.poisson(g_max, n)
        g = g_max * rng.random(int(counts.sum()))
        power = (model.a / g) ** (model.beta / 2)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        top = np.zeros(n)
        tot = np.zeros(n)
        ok = counts > 0
        if ok.any():
            top[ok] = np.maximum.reduceat(power, starts[ok])
            tot[ok] = np.add.reduceat(power, starts[ok])
        interf = tot - top + tail
        out[start:start + n] = np.where(ok, top / interf, 0.0)
    return out


def sir_ccdf_mc(model: LimitModel, thresholds, replications: int, l_max: float | None = None, seed=None) -> np.ndarray:
    """Monte Carlo P(SIR > t) for each threshold t."""
    t = np.asarray(thresholds, dtype=float)
    if np.any(t <= 0):
        raise ParameterError("SIR thresholds must be positive")
    sir = np.sort(sample_limit_sir(model, replications, l_max, seed))
    return 1.0 - np.searchsorted(sir, t, side="right") / len(sir)
