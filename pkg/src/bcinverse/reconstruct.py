"""Boundary distance functions as maximal elements of a volume-defined order.

A profile ``tau`` belongs to the closed set ``Qbar`` when the retracted
profile ``tau - eps`` leaves part of the domain uncovered, i.e. its
domain-of-influence volume stays below the total volume ``m_inf``.  The set
is closed under pointwise minimum, and its maximal elements are the
boundary distance functions ``r_x(y) = d(x, y)``.  Any oracle mapping a
profile to a volume can drive the search: the travel-time oracle of
:mod:`bcinverse.influence` or the boundary-data pipeline of
:mod:`bcinverse.minimize`.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, OracleInconsistencyError, PreconditionError, ShapeError
from .forward import MeasurementDevice
from .geometry import SpeedField, distance_table
from .influence import BoundarySubset, as_profile, domain_of_influence
from .minimize import DEFAULT_SCHEDULE, alpha_continuation, projector_P


class VolumeOracle:
    """Maps boundary profiles to volumes, caching every evaluation.

    Subclasses implement :meth:`_evaluate`.  ``horizon`` is the largest
    profile value considered; ``m_inf`` is the oracle value of the constant
    profile ``horizon``.
    """

    def __init__(self, n_boundary: int, horizon: float):
        if not horizon > 0:
            raise ConfigurationError("oracle horizon must be positive")
        self.n_boundary = int(n_boundary)
        self.horizon = float(horizon)
        self._cache = {}
        self._lock = threading.Lock()
        self._m_inf = None
        self.evaluations = 0

    def __call__(self, tau) -> float:
        tau = as_profile(tau, self.n_boundary)
        key = tau.tobytes()
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        value = float(self._evaluate(tau))
        with self._lock:
            self.evaluations += 1
            return self._cache.setdefault(key, value)

    @property
    def m_inf(self) -> float:
        if self._m_inf is None:
            self._m_inf = self(np.full(self.n_boundary, self.horizon))
        return self._m_inf

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    def _evaluate(self, tau) -> float:
        raise NotImplementedError


class GeometricOracle(VolumeOracle):
    """Closed domain-of-influence volume from travel-time tables."""

    def __init__(self, c: SpeedField, gamma: Optional[BoundarySubset] = None,
                 horizon: Optional[float] = None):
        self.c = c
        self.gamma = gamma if gamma is not None else BoundarySubset.of(c)
        if horizon is None:
            horizon = float(distance_table(c).max())
        super().__init__(c.boundary.size, horizon)

    def _evaluate(self, tau):
        return domain_of_influence(self.c, self.gamma, tau).volume_closed


class PDEOracle(VolumeOracle):
    """Volume estimate from boundary measurements via alpha-continuation.

    The horizon is the device's ``T``.  Each query warm-starts its first
    solve from the previous query's first minimiser (projected onto the new
    support), which saves iterations when consecutive profiles are close.
    """

    def __init__(self, device: MeasurementDevice, gamma: Optional[BoundarySubset] = None,
                 schedule: Sequence[float] = DEFAULT_SCHEDULE, tol: float = 1e-8,
                 max_iters: int = 500, warm_start: bool = True):
        self.device = device
        self.gamma = gamma if gamma is not None else BoundarySubset.whole(device.n_boundary)
        self.schedule = tuple(schedule)
        self.tol = tol
        self.max_iters = max_iters
        self.warm_start = warm_start
        self._guess = None
        self._guess_lock = threading.Lock()
        super().__init__(device.n_boundary, device.T)

    def _evaluate(self, tau):
        mask = projector_P(self.gamma, tau, self.device.T, self.device.n_steps, self.device.dt)
        with self._guess_lock:
            guess = self._guess
        rep = alpha_continuation(self.device, mask, self.schedule, self.tol,
                                 self.max_iters, x0=guess if self.warm_start else None)
        if self.warm_start:
            with self._guess_lock:
                self._guess = rep.records[0].minimizer
        return rep.volume


@dataclass(frozen=True, eq=False)
class SemilatticeElement:
    """A profile with its membership margin and, after ascent, its headroom."""

    tau: np.ndarray
    margin: float
    headroom: Optional[np.ndarray] = None
    cycles: int = 0

    @property
    def certified(self) -> bool:
        return self.headroom is not None


def meet(tau, sigma) -> np.ndarray:
    """Pointwise minimum of two profiles on the same boundary grid."""
    a, b = np.asarray(tau, dtype=float), np.asarray(sigma, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"profiles on different grids: {a.shape} vs {b.shape}")
    return np.minimum(a, b)


def _retract(tau, eps):
    return np.maximum(np.asarray(tau, dtype=float) - eps, 0.0)


def membership_margin(oracle: VolumeOracle, tau, eps: float) -> float:
    """``m_inf - m(tau - eps)``."""
    return oracle.m_inf - oracle(_retract(tau, eps))


def member_Qbar(oracle: VolumeOracle, tau, eps: float, margin_tol: float = 0.0) -> bool:
    """Whether ``tau - eps`` (clamped at 0) leaves volume above ``margin_tol`` uncovered."""
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    return membership_margin(oracle, tau, eps) > margin_tol


def ascend_to_maximal(oracle: VolumeOracle, tau0, eps: float, step_tol: float,
                      margin_tol: float = 0.0, order: Optional[Sequence[int]] = None,
                      bisection_steps: int = 12, max_cycles: int = 50) -> SemilatticeElement:
    """Cyclic coordinate ascent to a maximal element above ``tau0``.

    Each node in turn is raised to the largest value that keeps membership,
    located by bisection between its current value and the oracle horizon.
    Cycles repeat until no node moves by more than ``step_tol``.  The
    default node order visits the smallest seed values first.

    Raises
    ------
    PreconditionError
        If ``tau0`` is not a member.
    OracleInconsistencyError
        If membership fails at a value already accepted for a node.
    """
    if not step_tol > 0:
        raise ConfigurationError("step_tol must be positive")
    tau = as_profile(tau0, oracle.n_boundary).copy()

    def member(t):
        return member_Qbar(oracle, t, eps, margin_tol)

    if not member(tau):
        raise PreconditionError("initial profile is not in the closed semilattice")
    if order is None:
        order = np.argsort(tau, kind="stable")
    order = [int(j) for j in order]
    if sorted(order) != list(range(oracle.n_boundary)):
        raise ConfigurationError("node order must be a permutation of the boundary nodes")
    top = oracle.horizon
    steps = max(bisection_steps, math.ceil(math.log2(max(top, step_tol) / (step_tol / 2))))
    headroom = np.zeros(oracle.n_boundary)
    for cycle in range(1, max_cycles + 1):
        moved = 0.0
        for j in order:
            lo = tau[j]
            hi = top
            trial = tau.copy()
            trial[j] = hi
            if hi <= lo or member(trial):
                new, gap = max(lo, hi), 0.0
            else:
                for _ in range(steps):
                    if hi - lo <= step_tol / 2:
                        break
                    mid = 0.5 * (lo + hi)
                    trial[j] = mid
                    if member(trial):
                        lo = mid
                    else:
                        hi = mid
                new, gap = lo, hi - lo
            moved = max(moved, new - tau[j])
            tau[j] = new
            headroom[j] = gap
        if moved <= step_tol:
            break
    if not member(tau):
        raise OracleInconsistencyError("ascended profile lost membership")
    return SemilatticeElement(tau, membership_margin(oracle, tau, eps), headroom, cycle)


def certify(oracle: VolumeOracle, element: SemilatticeElement, eps: float, step_tol: float,
            margin_tol: float = 0.0, factor: float = 3.0) -> np.ndarray:
    """Per-node check that raising a single node by ``factor * step_tol`` exits ``Qbar``."""
    out = np.zeros(oracle.n_boundary, dtype=bool)
    for j in range(oracle.n_boundary):
        bumped = element.tau.copy()
        bumped[j] += factor * step_tol
        out[j] = not member_Qbar(oracle, bumped, eps, margin_tol)
    return out


def _dedupe(elements, tol):
    kept = []
    for el in elements:
        if all(np.max(np.abs(el.tau - k.tau)) > tol for k in kept):
            kept.append(el)
    return kept


def extract_RM(oracle: VolumeOracle, seeds, eps: float, step_tol: float, dedupe_tol: float,
               margin_tol: float = 0.0, jobs: int = 1, **ascent) -> List[SemilatticeElement]:
    """Ascend every seed and keep one representative per cluster of results.

    Seeds are processed concurrently when ``jobs > 1``; the returned list
    follows seed order either way.
    """
    seeds = [as_profile(s, oracle.n_boundary) for s in seeds]
    if not seeds:
        raise ConfigurationError("at least one seed profile is required")

    def run(s):
        return ascend_to_maximal(oracle, s, eps, step_tol, margin_tol, **ascent)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    return _dedupe(results, dedupe_tol)


def travel_time_diameter_1d(elements: Sequence[SemilatticeElement]) -> float:
    """Median of ``r(0) + r(1)`` over recovered interval profiles."""
    if not elements:
        raise ConfigurationError("no recovered elements")
    sums = [float(e.tau[0] + e.tau[-1]) for e in elements]
    return float(np.median(sums))


def nearest_distance_function(c: SpeedField, tau):
    """Grid node ``x`` minimising ``max_y |tau(y) - d(x, y)|`` and that residual."""
    tau = as_profile(tau, c.boundary.size)
    table = distance_table(c)
    err = np.max(np.abs(table - tau[:, None]), axis=0)
    i = int(np.argmin(err))
    return i, float(err[i])


# ---------------------------------------------------------------------------
# export


def write_elements_csv(path, elements: Sequence[SemilatticeElement]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element_id", "boundary_node_id", "value"])
        for e, el in enumerate(elements):
            for j, v in enumerate(el.tau):
                w.writerow([e, j, repr(float(v))])


def elements_summary(elements: Sequence[SemilatticeElement], c: Optional[SpeedField] = None,
                     oracle: Optional[VolumeOracle] = None) -> dict:
    out = {"n_elements": len(elements),
           "margins": [float(e.margin) for e in elements],
           "cycles": [int(e.cycles) for e in elements]}
    if elements and elements[0].tau.size == 2:
        out["diameter"] = travel_time_diameter_1d(elements)
    if c is not None:
        nearest = [nearest_distance_function(c, e.tau) for e in elements]
        out["nearest_node"] = [int(i) for i, _ in nearest]
        out["nearest_residual"] = [float(r) for _, r in nearest]
    if oracle is not None:
        out["m_inf"] = float(oracle.m_inf)
        out["oracle_evaluations"] = int(oracle.evaluations)
    return out


def write_elements_json(path, elements, c=None, oracle=None):
    with open(path, "w") as fh:
        json.dump(elements_summary(elements, c, oracle), fh, indent=2, sort_keys=True)
