"""Domains of influence computed from travel-time tables.

For a set of boundary nodes ``gamma`` and a boundary profile ``tau`` the
function ``r(x) = min_{y in gamma} (d(x, y) - tau(y))`` is non-positive
exactly on the domain of influence, the set of points that some boundary
point ``y`` reaches within time ``tau(y)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ShapeError
from .geometry import SpeedField, distance_table, natural_volume


@dataclass(frozen=True)
class BoundarySubset:
    """A nonempty set of boundary node indices."""

    indices: tuple
    n_boundary: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if not idx:
            raise ConfigurationError("boundary subset must be nonempty")
        if idx[0] < 0 or idx[-1] >= self.n_boundary:
            raise ConfigurationError(
                f"boundary indices must lie in [0, {self.n_boundary})")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def whole(cls, n_boundary):
        return cls(tuple(range(n_boundary)), n_boundary)

    @classmethod
    def of(cls, c: SpeedField, indices=None):
        """Subset of the boundary grid of ``c``; all nodes when ``indices`` is None."""
        nb = c.boundary.size
        return cls.whole(nb) if indices is None else cls(tuple(indices), nb)

    @property
    def is_whole(self) -> bool:
        return len(self.indices) == self.n_boundary

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def indicator(self) -> np.ndarray:
        out = np.zeros(self.n_boundary, dtype=bool)
        out[self.array] = True
        return out


def as_profile(values, n_boundary) -> np.ndarray:
    """Validate a boundary profile (scalar broadcast to every node)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_boundary, float(arr))
    if arr.shape != (n_boundary,):
        raise ShapeError(f"profile has shape {arr.shape}, boundary has {n_boundary} nodes")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("profile values must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class InfluenceResult:
    """Indicators and volumes of a domain of influence and its open variant."""

    r_field: np.ndarray
    closed: np.ndarray
    open: np.ndarray
    volume_closed: float
    volume_open: float

    @property
    def gap(self) -> float:
        return self.volume_closed - self.volume_open


def r_gamma_tau(c: SpeedField, gamma: BoundarySubset, tau) -> np.ndarray:
    """Nodal values of ``min_{y in gamma} d(x, y) - tau(y)``."""
    if gamma.n_boundary != c.boundary.size:
        raise ShapeError("boundary subset does not match the speed field's boundary grid")
    tau = as_profile(tau, c.boundary.size)
    table = distance_table(c)
    idx = gamma.array
    return np.min(table[idx] - tau[idx, None], axis=0)


def _tie_guard(c: SpeedField) -> float:
    # travel times are sums of O(1/h) terms; absorb their roundoff
    table = distance_table(c)
    return 64 * np.finfo(float).eps * max(1.0, float(table.max()))


def domain_of_influence(c: SpeedField, gamma: BoundarySubset, tau) -> InfluenceResult:
    """Closed (``r <= 0``) and open (``r < 0``) domains of influence.

    Values of ``r`` within roundoff of zero count as exact ties, which belong
    to the closed set only.
    """
    r = r_gamma_tau(c, gamma, tau)
    guard = _tie_guard(c)
    closed = r <= guard
    open_ = r < -guard
    return InfluenceResult(r, closed, open_, natural_volume(c, closed),
                           natural_volume(c, open_))


def shell_volume(c: SpeedField, gamma: BoundarySubset, tau, width) -> float:
    """Natural volume of the shell ``|r| <= width``."""
    r = r_gamma_tau(c, gamma, tau)
    return natural_volume(c, np.abs(r) <= width)


def simple_approximation(tau, gamma: BoundarySubset, eps: float) -> np.ndarray:
    """Finitely-valued profile strictly between ``tau - eps`` and ``tau`` on ``gamma``.

    Each node takes the midpoint ``tau - eps/2`` rounded to a lattice of
    spacing ``eps/2``; the rounding moves values by at most ``eps/4`` so both
    strict inequalities keep a margin of ``eps/4``.  Nodes outside
    ``gamma`` keep their value.
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    tau = as_profile(tau, gamma.n_boundary)
    out = tau.copy()
    idx = gamma.array
    mid = tau[idx] - eps / 2
    lo = float(mid.min())
    q = eps / 2
    levels = np.round((mid - lo) / q)
    out[idx] = lo + levels * q
    return out


def simple_levels(step_profile, gamma: BoundarySubset) -> int:
    """Number of distinct values a profile takes on ``gamma``."""
    return len(np.unique(np.asarray(step_profile)[gamma.array]))


# ---------------------------------------------------------------------------
# export


def write_influence_csv(path, c: SpeedField, result: InfluenceResult):
    """Write node coordinates with r-field and both indicators."""
    coords = ["x", "y"][: c.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", *coords, "r", "closed", "open"])
        for i, p in enumerate(c.interior.points):
            w.writerow([i, *map(repr, map(float, p)), repr(float(result.r_field[i])),
                        int(result.closed[i]), int(result.open[i])])


def influence_summary(result: InfluenceResult, tau=None, gamma: Optional[BoundarySubset] = None):
    out = {"volume_closed": result.volume_closed, "volume_open": result.volume_open,
           "gap": result.gap}
    if tau is not None:
        out["tau"] = [float(v) for v in np.atleast_1d(tau)]
    if gamma is not None:
        out["gamma"] = list(gamma.indices)
    return out


def write_influence_json(path, result: InfluenceResult, tau=None, gamma=None):
    with open(path, "w") as fh:
        json.dump(influence_summary(result, tau, gamma), fh, indent=2, sort_keys=True)
