"""Base-station layouts and distances on the plane or a flat torus.

Patterns live in a rectangle centred on the origin,
``[-W/2, W/2) x [-H/2, H/2)``.  On a torus the same rectangle is wrapped.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ._rng import make_rng
from .errors import DataError, ParameterError

ORIGIN_TOL = 1e-9


class EmptyPatternWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Metric:
    kind: str = "plane"
    width: float | None = None
    height: float | None = None

    def __post_init__(self):
        if self.kind not in ("plane", "torus"):
            raise ParameterError(f"unknown metric kind {self.kind!r}")
        if self.kind == "torus":
            if self.width is None or self.height is None:
                raise ParameterError("torus metric needs width and height")
            if not (self.width > 0 and self.height > 0):
                raise ParameterError("torus extent must be strictly positive")

    @classmethod
    def plane(cls) -> "Metric":
        return cls("plane")

    @classmethod
    def torus(cls, width: float, height: float) -> "Metric":
        return cls("torus", float(width), float(height))

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    @property
    def area(self) -> float:
        if self.width is None or self.height is None:
            return math.inf
        return self.width * self.height

    def to_dict(self) -> dict:
        if self.is_torus:
            return {"metric": "torus", "width": self.width, "height": self.height}
        return {"metric": "plane"}

    @classmethod
    def from_dict(cls, d: dict) -> "Metric":
        kind = d.get("metric", "plane")
        if kind == "torus":
            return cls.torus(d["width"], d["height"])
        return cls.plane()


@dataclass(frozen=True)
class PointPattern:
    """A finite set of station locations with its metric context."""

    points: np.ndarray
    metric: Metric = field(default_factory=Metric.plane)
    nominal_density: float | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.nominal_density is not None and self.nominal_density < 0:
            raise ParameterError("nominal density must be non-negative")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def density(self) -> float:
        """Nominal density, or the empirical one at the largest in-window radius."""
        if self.nominal_density is not None:
            return self.nominal_density
        r = self.max_inner_radius()
        if r > 0:
            (_, dens), = homogeneity_profile(self, [r])
            return dens
        # origin outside the bounding box: fall back to count / box area
        span = np.ptp(self.points, axis=0)
        return len(self) / float(span[0] * span[1]) if span.all() else 0.0

    def max_inner_radius(self) -> float:
        """Radius of the largest origin-centred disk inside the pattern's window."""
        if self.metric.is_torus:
            return 0.5 * min(self.metric.width, self.metric.height)
        if len(self) == 0:
            return 0.0
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return max(float(min(-lo[0], -lo[1], hi[0], hi[1])), 0.0)


def _validate_window(window: Metric) -> tuple[float, float]:
    if window.width is None or window.height is None:
        raise ParameterError("window needs a finite extent")
    return window.width, window.height


def gen_poisson(lam: float, window: Metric, seed=None, metric: str | None = None) -> PointPattern:
    """Homogeneous Poisson pattern of density ``lam`` in the window's rectangle.

    The returned metric is the window itself unless ``metric="plane"``.
    """
    if not lam > 0:
        raise ParameterError("Poisson density must be positive")
    w, h = _validate_window(window)
    rng = make_rng(seed)
    n = rng.poisson(lam * w * h)
    pts = (rng.random((n, 2)) - 0.5) * np.array([w, h])
    out_metric = Metric.plane() if metric == "plane" else window
    return PointPattern(pts, out_metric, float(lam))


def hexagonal_extent(n: int, spacing: float) -> tuple[float, float]:
    return n * spacing, n * math.sqrt(3.0) * spacing / 2.0


def gen_hexagonal(n: int, spacing: float = 1.0) -> PointPattern:
    """N x N triangular lattice on its wrap-around rectangle.

    Rows are ``sqrt(3)/2 * spacing`` apart and odd rows are shifted by half a
    spacing, so for even ``n`` the torus closes into a perfect lattice.
    """
    if n < 1 or int(n) != n:
        raise ParameterError("N must be a positive integer")
    if not spacing > 0:
        raise ParameterError("spacing must be positive")
    n = int(n)
    w, h = hexagonal_extent(n, spacing)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    x = -w / 2 + (i + 0.5 * (j % 2)) * spacing
    y = -h / 2 + j * (math.sqrt(3.0) / 2.0) * spacing
    pts = np.column_stack([x.ravel(), y.ravel()])
    return PointPattern(pts, Metric.torus(w, h), 2.0 / (spacing**2 * math.sqrt(3.0)))


def wrap(points: np.ndarray, metric: Metric) -> np.ndarray:
    """Map coordinates back into the torus rectangle."""
    if not metric.is_torus:
        return points
    ext = np.array([metric.width, metric.height])
    return np.mod(points + ext / 2, ext) - ext / 2


def gen_perturbed_lattice(n: int, spacing: float, jitter_std: float, seed=None) -> PointPattern:
    if jitter_std < 0:
        raise ParameterError("jitter_std must be non-negative")
    base = gen_hexagonal(n, spacing)
    if jitter_std == 0:
        return base
    rng = make_rng(seed)
    pts = base.points + rng.normal(0.0, jitter_std, base.points.shape)
    return PointPattern(wrap(pts, base.metric), base.metric, base.nominal_density)


def distance(p, q, metric: Metric) -> float:
    """Euclidean distance, or on a torus the minimum over the 9 translated copies of q."""
    dx = float(q[0]) - float(p[0])
    dy = float(q[1]) - float(p[1])
    if not metric.is_torus:
        return math.hypot(dx, dy)
    return min(
        math.hypot(dx + sx * metric.width, dy + sy * metric.height)
        for sx in (-1, 0, 1)
        for sy in (-1, 0, 1)
    )


def displacements(user, points: np.ndarray, metric: Metric) -> np.ndarray:
    """Minimum-image displacement vectors from ``user`` to each point.

    Vectorised equivalent of :func:`distance`; for points inside the
    rectangle the per-axis wrap selects the same copy as the 9-copy minimum.
    """
    d = np.asarray(points, dtype=float) - np.asarray(user, dtype=float)
    if metric.is_torus:
        ext = np.array([metric.width, metric.height])
        d = d - ext * np.round(d / ext)
    return d


def distances(user, pattern: PointPattern) -> np.ndarray:
    d = displacements(user, pattern.points, pattern.metric)
    return np.hypot(d[..., 0], d[..., 1])


def check_user(user, pattern: PointPattern) -> None:
    if len(pattern) and distances(user, pattern).min() < ORIGIN_TOL:
        raise ParameterError("a station coincides with the user location")


def homogeneity_profile(pattern: PointPattern, radii: Iterable[float]) -> list[tuple[float, float]]:
    """Empirical density phi(B_0(r)) / (pi r^2) around the origin.

    Torus patterns are evaluated on their unwrapped rectangle.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ParameterError("radii must be positive and increasing")
    if len(pattern) == 0:
        warnings.warn("empty pattern: homogeneity profile is identically zero", EmptyPatternWarning)
        return [(r, 0.0) for r in radii]
    norms = np.sort(np.hypot(pattern.points[:, 0], pattern.points[:, 1]))
    counts = np.searchsorted(norms, radii, side="left")
    return [(r, c / (math.pi * r * r)) for r, c in zip(radii, counts)]


def ripley_k(pattern: PointPattern, radii: Iterable[float]) -> np.ndarray:
    """Ripley's K on a torus (no edge correction needed); compare with pi r^2."""
    if not pattern.metric.is_torus:
        raise ParameterError("ripley_k is only implemented for torus patterns")
    pts = pattern.points
    n = len(pts)
    d = displacements(pts[:, None, :], pts[None, :, :], pattern.metric)
    dist = np.hypot(d[..., 0], d[..., 1])[np.triu_indices(n, k=1)]
    dist.sort()
    radii = np.asarray(list(radii), dtype=float)
    pairs = 2 * np.searchsorted(dist, radii, side="left")
    return pattern.metric.area * pairs / (n * (n - 1))


def save_pattern_csv(pattern: PointPattern, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in pattern.points:
            w.writerow([repr(float(x)), repr(float(y))])
    meta = pattern.metric.to_dict()
    if pattern.nominal_density is not None:
        meta["density"] = pattern.nominal_density
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_pattern_csv(path, sidecar=None) -> PointPattern:
    """Read an ``x,y`` CSV plus its JSON sidecar (defaults to ``<path>.json``).

    Without a density entry the nominal density is estimated from the
    homogeneity profile at the largest in-window radius.
    """
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {"metric": "plane"}
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
                raise DataError(f"{path}: expected header 'x,y'")
            pts = [(float(row["x"]), float(row["y"])) for row in reader]
    except (OSError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: {exc}") from exc
    metric = Metric.from_dict(meta)
    pattern = PointPattern(np.array(pts, dtype=float).reshape(-1, 2), metric, meta.get("density"))
    if pattern.nominal_density is None and len(pattern):
        pattern = PointPattern(pattern.points, metric, pattern.density)
    return pattern
