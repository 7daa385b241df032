"""Regression estimate of the path-loss exponent from strongest-station losses.

Under the limit model ``log(-log P(L* >= t)) = log a + (2/beta) log t``, so an
ordinary least-squares line through the linearised empirical CCDF gives
``beta = 2 / slope`` and ``a = exp(intercept)``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import DataError, ParameterError
from .stats import EmpiricalCdf, ecdf, ks_distance

log = logging.getLogger(__name__)

DEFAULT_LEVELS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 10))
MIN_SAMPLES = 30


@dataclass(frozen=True)
class BetaFit:
    beta_hat: float
    a_hat: float
    slope: float
    intercept: float
    ci_beta: tuple[float, float]
    ks_D: float
    n: int
    n_points: int
    dropped: int
    residual_rms: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci_beta"] = list(self.ci_beta)
        return d


def linearize(F: EmpiricalCdf, t_grid) -> tuple[np.ndarray, np.ndarray, int]:
    """``(ln t, ln(-ln P(L* >= t)))`` on the grid points with 0 < P < 1.

    Returns the two coordinate arrays and the number of dropped grid points.
    """
    t = np.asarray(t_grid, dtype=float)
    t = t[t > 0] if np.all(np.isfinite(t)) else t[np.isfinite(t) & (t > 0)]
    dropped = len(np.asarray(t_grid)) - len(t)
    surv = np.asarray(F.survival_ge(t), dtype=float).reshape(-1)
    ok = (surv > 0) & (surv < 1)
    dropped += int((~ok).sum())
    if ok.sum() < 3:
        raise DataError(f"only {int(ok.sum())} usable grid points; need at least 3")
    return np.log(t[ok]), np.log(-np.log(surv[ok])), dropped


def quantile_grid(samples, levels=DEFAULT_LEVELS) -> np.ndarray:
    return np.unique(np.quantile(np.asarray(samples, dtype=float), levels))


def _slope_se(A, lx, resid, surv, n, method):
    if method == "ols":
        k = len(lx)
        s2 = float(resid @ resid) / (k - 2) if k > 2 else math.inf
        return math.sqrt(s2 / float(((lx - lx.mean()) ** 2).sum()))
    if method != "ecdf":
        raise ParameterError(f"unknown ci_method {method!r}")
    # Cov(P_i, P_j) = (min - P_i P_j) / n for an empirical survival function;
    # d/dP log(-log P) = 1 / (P log P)
    P = np.asarray(surv, dtype=float)
    cov = (np.minimum.outer(P, P) - np.outer(P, P)) / n
    g = 1.0 / (P * np.log(P))
    cov_y = cov * np.outer(g, g)
    H = np.linalg.pinv(A)
    return math.sqrt(float((H @ cov_y @ H.T)[1, 1]))


def fit_beta(
    samples, t_grid=None, levels=DEFAULT_LEVELS, confidence: float = 0.95, ci_method: str = "ecdf"
) -> BetaFit:
    """OLS fit of the linearised CCDF with a delta-method CI on beta = 2 / slope.

    ``ci_method="ecdf"`` takes the slope's variance from the binomial
    covariance of the empirical CCDF carried through the log-log transform;
    ``"ols"`` uses the textbook residual variance, which ignores that the
    regression points are correlated and so undercovers badly.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < MIN_SAMPLES:
        raise DataError(f"need at least {MIN_SAMPLES} samples, got {len(x)}")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise DataError("losses must be positive and finite")
    F = ecdf(x)
    grid = quantile_grid(x, levels) if t_grid is None else t_grid
    lx, ly, dropped = linearize(F, grid)
    k = len(lx)
    A = np.column_stack([np.ones(k), lx])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    intercept, slope = float(coef[0]), float(coef[1])
    if not slope > 0:
        raise DataError("non-positive regression slope: data inconsistent with the model")
    resid = ly - A @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    beta_hat = 2.0 / slope
    se_slope = _slope_se(A, lx, resid, F.survival_ge(np.exp(lx)), len(x), ci_method)
    z = float(norm.ppf(0.5 + confidence / 2))
    se_beta = 2.0 * se_slope / slope**2
    ci = (beta_hat - z * se_beta, beta_hat + z * se_beta)
    a_hat = math.exp(intercept)
    D = ks_distance(F, lambda t: -np.expm1(-a_hat * t ** slope))
    return BetaFit(beta_hat, a_hat, slope, intercept, ci, D, len(x), k, dropped, rms)


@dataclass(frozen=True)
class Ingested:
    losses: np.ndarray
    invalid_rows: int
    total_rows: int
    column: str


def ingest_measurements(path, column: str | None = None) -> Ingested:
    """Read losses from CSV column ``loss`` (natural) or ``loss_db`` (L = 10^(dB/10)).

    Rows that do not parse or give a non-positive loss are counted as invalid;
    more than half invalid is an error.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            if column is None:
                column = "loss" if "loss" in fields else "loss_db" if "loss_db" in fields else None
            if column not in ("loss", "loss_db") or column not in fields:
                raise DataError(f"{path}: need a 'loss' or 'loss_db' column, found {fields}")
            raw = [row.get(column) for row in reader]
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    values, bad = [], 0
    for cell in raw:
        try:
            v = float(cell)
        except (TypeError, ValueError):
            bad += 1
            continue
        if column == "loss_db":
            v = 10.0 ** (v / 10.0)
        if not (math.isfinite(v) and v > 0):
            bad += 1
            continue
        values.append(v)
    if not raw:
        raise DataError(f"{path}: no data rows")
    if bad > 0.5 * len(raw):
        raise DataError(f"{path}: {bad} of {len(raw)} rows invalid")
    if bad:
        log.warning("%s: skipped %d invalid rows of %d", path, bad, len(raw))
    return Ingested(np.asarray(values), bad, len(raw), column)
