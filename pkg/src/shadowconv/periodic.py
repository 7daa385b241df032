"""Exact simulation of the strongest stations of an infinite periodic pattern.

A torus pattern repeated over the whole plane is empirically homogeneous,
which is the setting of the large-shadowing convergence results.  Under
strong shadowing the stations heard with small loss sit at distances of
order ``exp(sigma^2 / beta^2)``, far beyond any enumerable patch, so only
the stations with loss ``<= y_max`` are generated.

Each station is retained independently with probability
``p(r) = P(loss <= y_max)``, decreasing in its distance ``r``.  Tiles are
grouped into blocks; in a block every station is first proposed with the
block's largest probability (binomial count, uniform positions) and then
kept with ``p(r) / p_max``.  The Gaussian driver of a retained station is
drawn from its conditional law ``Z | Z >= z_thr(r)``.  Both steps are exact.
Blocks are visited outwards until the continuum mean number of stations
left is below ``tol``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

from ._rng import make_rng
from .errors import ParameterError
from .geometry import PointPattern
from .propagation import (
    MarkKernel,
    MarkedPropagationSample,
    ShadowingSpec,
    _check_beta,
    k_sigma,
    lognormal_annulus_count,
    rescaled_distance,
)


def _blocks(q_inner: int, q_outer: int, growth: float):
    """Rectangular tile-index blocks covering Chebyshev radii (q_inner, q_outer]."""
    q = q_inner
    while q < q_outer:
        q_next = min(max(q + 1, int(math.ceil(q * growth))), q_outer)
        width = q_next - q
        strips = [
            (-q_next, q_next, q + 1, q_next),      # top
            (-q_next, q_next, -q_next, -q - 1),    # bottom
            (-q_next, -q - 1, -q, q),              # left
            (q + 1, q_next, -q, q),                # right
        ]
        for p0, p1, r0, r1 in strips:
            if p1 - p0 >= r1 - r0:
                for a in range(p0, p1 + 1, width):
                    yield q, a, min(a + width - 1, p1), r0, r1
            else:
                for a in range(r0, r1 + 1, width):
                    yield q, p0, p1, a, min(a + width - 1, r1)
        q = q_next


class PeriodicSampler:
    """Strongest-station sampler for the periodic extension of a torus pattern."""

    def __init__(
        self,
        pattern: PointPattern,
        spec: ShadowingSpec,
        K: float,
        beta: float,
        y_max: float,
        rescale: bool = True,
        tol: float = 1e-7,
        growth: float = 1.25,
    ):
        if not pattern.metric.is_torus or len(pattern) == 0:
            raise ParameterError("periodic extension needs a non-empty torus pattern")
        if spec.extra_factor is not None:
            raise ParameterError("periodic sampler supports pure log-normal shadowing only")
        if not spec.sigma > 0:
            raise ParameterError("periodic sampler needs sigma > 0")
        if not (K > 0 and y_max > 0):
            raise ParameterError("K and y_max must be positive")
        _check_beta(beta)
        self.pattern = pattern
        self.w = pattern.metric.width
        self.h = pattern.metric.height
        self.tile = pattern.points
        self.m = len(pattern)
        self.lam = self.m / (self.w * self.h)
        self.sigma = spec.sigma
        self.mu = spec.mu
        self.beta = beta
        self.K = K
        self.k_eff = k_sigma(K, beta, spec.sigma) if rescale else K
        self.log_y = math.log(y_max)
        self.tol = tol
        self.growth = growth
        self.xmin, self.ymin = self.tile.min(axis=0)
        self.xmax, self.ymax = self.tile.max(axis=0)
        self.q_outer = self._outer_index()

    def z_threshold(self, r):
        return (self.beta * np.log(self.k_eff * r) - self.mu - self.log_y) / self.sigma

    def _tail_count(self, radius: float) -> float:
        return lognormal_annulus_count(self.lam, self.log_y, self.k_eff, self.beta, self.mu, self.sigma, radius)

    def _outer_index(self) -> int:
        side = min(self.w, self.h)
        q = 2
        while self._tail_count((q - 1) * side) > self.tol:
            q = int(q * 1.5) + 1
        return q

    def _block_rmin(self, p0, p1, q0, q1) -> float:
        # any user in the central tile, any station in the block
        hw, hh = self.w / 2, self.h / 2
        dx = max(0.0, p0 * self.w + self.xmin - hw, -hw - (p1 * self.w + self.xmax))
        dy = max(0.0, q0 * self.h + self.ymin - hh, -hh - (q1 * self.h + self.ymax))
        return math.hypot(dx, dy)

    def _keep(self, r, rng, p_ratio_den=None):
        """Thin candidates at distances ``r``; returns mask and Gaussian drivers."""
        zt = self.z_threshold(r)
        log_p = log_ndtr(-zt)
        if p_ratio_den is None:
            keep = np.log(rng.random(len(r))) < log_p
        else:
            keep = np.log(rng.random(len(r))) < log_p - p_ratio_den
        u = rng.random(int(keep.sum()))
        z = -ndtri_exp(np.log(u) + log_p[keep])
        return keep, z

    def sample(self, n_rep: int, seed=None, users=None, marks: MarkKernel | None = None) -> list[MarkedPropagationSample]:
        """``n_rep`` independent realisations seen from ``users`` (default: origin).

        ``users`` may be an ``(n_rep, 2)`` array of points in the central tile.
        """
        rng = make_rng(seed)
        if users is None:
            users = np.zeros((n_rep, 2))
        users = np.asarray(users, dtype=float).reshape(n_rep, 2)
        if np.any(np.abs(users) > [self.w / 2, self.h / 2]):
            raise ParameterError("users must lie in the central tile")
        reps, dists, zs = [], [], []

        # central 3x3 tiles: every station individually
        sx, sy = np.meshgrid(np.arange(-1, 2) * self.w, np.arange(-1, 2) * self.h, indexing="ij")
        near = (self.tile[None, :, :] + np.column_stack([sx.ravel(), sy.ravel()])[:, None, :]).reshape(-1, 2)
        chunk = max(1, 2_000_000 // len(near))
        for start in range(0, n_rep, chunk):
            stop = min(start + chunk, n_rep)
            d = near[None, :, :] - users[start:stop, None, :]
            r = np.hypot(d[..., 0], d[..., 1])
            if np.any(r < 1e-9):
                raise ParameterError("a station coincides with the user location")
            rep = np.repeat(np.arange(start, stop), len(near))
            keep, z = self._keep(r.ravel(), rng)
            reps.append(rep[keep])
            dists.append(r.ravel()[keep])
            zs.append(z)

        for _, p0, p1, q0, q1 in _blocks(1, self.q_outer, self.growth):
            n_p = p1 - p0 + 1
            size = n_p * (q1 - q0 + 1) * self.m
            log_pmax = float(log_ndtr(-self.z_threshold(max(self._block_rmin(p0, p1, q0, q1), 1e-300))))
            counts = rng.binomial(size, math.exp(log_pmax), n_rep)
            total = int(counts.sum())
            if total == 0:
                continue
            rep = np.repeat(np.arange(n_rep), counts)
            idx = _distinct_indices(rng, rep, size)
            j = idx % self.m
            t = idx // self.m
            tp = t % n_p + p0
            tq = t // n_p + q0
            x = self.tile[j, 0] + tp * self.w - users[rep, 0]
            y = self.tile[j, 1] + tq * self.h - users[rep, 1]
            r = np.hypot(x, y)
            keep, z = self._keep(r, rng, p_ratio_den=log_pmax)
            reps.append(rep[keep])
            dists.append(r[keep])
            zs.append(z)

        rep = np.concatenate(reps)
        r = np.concatenate(dists)
        z = np.concatenate(zs)
        log_l = self.beta * np.log(self.k_eff * r) - self.mu - self.sigma * z
        types = None
        if marks is not None:
            types = np.asarray(marks.types, dtype=object)[marks.sample_index(z - 2.0 * self.sigma / self.beta, rng)]
        order = np.lexsort((log_l, rep))
        rep, r, z, log_l = rep[order], r[order], z[order], log_l[order]
        if types is not None:
            types = types[order]
        bounds = np.searchsorted(rep, np.arange(n_rep + 1))
        meta = {
            "K": self.K, "K_eff": self.k_eff, "beta": self.beta, "sigma": self.sigma,
            "y_max": math.exp(self.log_y), "periodic": True, "tol": self.tol,
        }
        out = []
        for i in range(n_rep):
            sl = slice(bounds[i], bounds[i + 1])
            out.append(MarkedPropagationSample(
                losses=np.exp(log_l[sl]),
                raw_distances=r[sl],
                rescaled_distances=rescaled_distance(r[sl], self.sigma, self.beta) if len(r[sl]) else np.empty(0),
                types=None if types is None else types[sl],
                z=z[sl],
                meta=dict(meta, replication=i),
            ))
        return out


def _distinct_indices(rng: np.random.Generator, rep: np.ndarray, size: int) -> np.ndarray:
    """Uniform indices in ``[0, size)``, distinct within each replication."""
    idx = rng.integers(0, size, len(rep))
    while True:
        order = np.lexsort((idx, rep))
        dup = np.zeros(len(idx), dtype=bool)
        same = (rep[order][1:] == rep[order][:-1]) & (idx[order][1:] == idx[order][:-1])
        dup[order[1:][same]] = True
        if not dup.any():
            return idx
        idx[dup] = rng.integers(0, size, int(dup.sum()))
