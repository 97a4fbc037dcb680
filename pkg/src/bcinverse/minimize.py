"""Regularised control problem and volume estimation from boundary data.

The minimiser of ``E(f) = (f, K f) - 2 (I f, 1) + alpha |f|^2`` over sources
supported in a boundary slab solves ``(P K P + alpha) f = P I* 1``.  The
system is solved by conjugate gradients where each operator application
costs two measurements; ``(f_alpha, K f_alpha)`` then approximates the
natural volume of the domain of influence as ``alpha -> 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .control import InnerProductWeights, apply_K, inner, norm, op_I_adjoint
from .errors import ConfigurationError, CurvatureError
from .forward import MeasurementDevice, SimulatedDevice, SpaceTimeField
from .influence import BoundarySubset, as_profile, domain_of_influence

DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4)


@dataclass(frozen=True, eq=False)
class SupportMask:
    """Indicator of the slab ``{(t, y): y in gamma, T - min(tau(y), T) <= t <= T}``."""

    mask: np.ndarray
    gamma: BoundarySubset
    tau: np.ndarray
    T: float

    def apply(self, f: SpaceTimeField) -> SpaceTimeField:
        return f.like(f.values * self.mask)

    __call__ = apply

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()


def projector_P(gamma: BoundarySubset, tau, T: float, n_steps: int, dt: float) -> SupportMask:
    """Support mask for the time grid ``k * dt``, ``k = 0..n_steps``.

    ``tau`` is clamped to ``[0, T]``; nodes with negative ``tau`` get an
    empty slab.  The lower end ``T - tau`` is included when it falls on a
    grid node (up to roundoff).
    """
    if not T > 0:
        raise ConfigurationError("T must be positive")
    tau = as_profile(tau, gamma.n_boundary)
    n = n_steps // 2
    t = np.arange(n_steps + 1) * dt
    mask = np.zeros((n_steps + 1, gamma.n_boundary), dtype=bool)
    guard = 1e-9 * dt
    for j in gamma.indices:
        if tau[j] < 0:
            continue
        start = T - min(tau[j], T)
        mask[:, j] = (t >= start - guard) & (np.arange(n_steps + 1) <= n)
    return SupportMask(mask, gamma, tau, T)


def mask_for_device(device: MeasurementDevice, gamma: BoundarySubset, tau) -> SupportMask:
    return projector_P(gamma, tau, device.T, device.n_steps, device.dt)


def rhs(mask: SupportMask, dt: float) -> SpaceTimeField:
    """``P I* 1`` on the grid of ``mask``."""
    one = SpaceTimeField(np.ones(mask.mask.shape), dt)
    return mask.apply(op_I_adjoint(one))


@dataclass
class CGResult:
    """Outcome of a conjugate-gradient solve.

    ``k_solution`` is ``P K P x`` tracked through the iteration, so the
    volume ``(x, K x)`` needs no extra measurement.
    """

    solution: SpaceTimeField
    k_solution: SpaceTimeField
    iterations: int
    residual: float
    converged: bool
    measurements: int
    min_rayleigh: float = math.inf


def solve_normal_equation(device: MeasurementDevice, mask: SupportMask, alpha: float,
                          tol: float = 1e-8, max_iters: int = 500,
                          x0: Optional[SpaceTimeField] = None,
                          weights: Optional[InnerProductWeights] = None,
                          b: Optional[SpaceTimeField] = None) -> CGResult:
    """Conjugate gradients for ``(P K P + alpha) f = P I* 1``.

    Stops when the weighted residual norm drops below ``tol * |rhs|``.  A
    nonzero initial guess costs one extra operator application.

    Raises
    ------
    CurvatureError
        If a search direction has non-positive curvature.
    """
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    if weights is None:
        weights = InnerProductWeights.for_device(device)
    if b is None:
        b = rhs(mask, device.dt)
    start = device.count
    P = mask.apply

    def op(x):
        return P(apply_K(device, P(x)))

    zero = b * 0.0
    b_norm = norm(b, weights)
    if x0 is None or not np.any(x0.values * mask.mask):
        x, kx = zero, zero
        r = b
    else:
        x = P(x0)
        kx = op(x)
        r = b - kx - alpha * x
    if b_norm == 0.0:
        return CGResult(zero, zero, 0, 0.0, True, device.count - start)
    p = r
    rr = inner(r, r, weights)
    it = 0
    min_rq = math.inf
    converged = math.sqrt(rr) <= tol * b_norm
    while not converged and it < max_iters:
        kp = op(p)
        pp = inner(p, p, weights)
        pkp = inner(p, kp, weights)
        curv = pkp + alpha * pp
        rq = curv / pp
        min_rq = min(min_rq, rq)
        if curv <= 0:
            raise CurvatureError(rq, it)
        step = rr / curv
        x = x + step * p
        kx = kx + step * kp
        r = r - step * (kp + alpha * p)
        rr_new = inner(r, r, weights)
        it += 1
        converged = math.sqrt(rr_new) <= tol * b_norm
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x, kx, it, math.sqrt(rr) / b_norm, converged,
                    device.count - start, min_rq)


def volume_estimate(device: MeasurementDevice, f_alpha: SpaceTimeField,
                    weights: Optional[InnerProductWeights] = None,
                    k_f: Optional[SpaceTimeField] = None) -> float:
    """``(f, K f)``, reusing ``k_f`` when the caller already has ``K f``."""
    if weights is None:
        weights = InnerProductWeights.for_device(device)
    if not np.any(f_alpha.values):
        return 0.0
    if k_f is None:
        k_f = apply_K(device, f_alpha)
    return inner(f_alpha, k_f, weights)


def energy(f: SpaceTimeField, k_f: SpaceTimeField, alpha: float,
           weights: InnerProductWeights) -> float:
    """``(f, K f) - 2 (I f, 1) + alpha |f|^2``."""
    one = f.like(np.ones_like(f.values))
    cross = inner(f, op_I_adjoint(one), weights)
    return inner(f, k_f, weights) - 2.0 * cross + alpha * inner(f, f, weights)


@dataclass
class AlphaRecord:
    alpha: float
    minimizer: SpaceTimeField = field(repr=False)
    iterations: int
    residual: float
    converged: bool
    energy: float
    volume: float
    measurements: int
    interior_l2_error: Optional[float] = None


@dataclass
class MinimizeReport:
    """Per-alpha results of a continuation run."""

    records: List[AlphaRecord]
    measurements: int
    oracle_volume: Optional[float] = None

    @property
    def final(self) -> AlphaRecord:
        return self.records[-1]

    @property
    def volume(self) -> float:
        return self.final.volume

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.records)

    def volume_drops(self, slack: float = 0.01) -> List[int]:
        """Schedule positions where the volume fell by more than ``slack * max volume``.

        Growth along the schedule is expected but not guaranteed, so a drop
        is reported rather than raised.
        """
        vols = np.array([r.volume for r in self.records])
        if vols.size < 2:
            return []
        tol = slack * float(np.abs(vols).max())
        return [int(i) + 1 for i in np.flatnonzero(np.diff(vols) < -tol)]

    def extrapolated_volume(self) -> float:
        """Fit ``v = m - C sqrt(alpha)`` through the last two records.

        Volumes approach the limit from below at a rate close to
        ``sqrt(alpha)`` when the slab edges are sharp; the fit is an optional
        diagnostic, never the default estimate.
        """
        if len(self.records) < 2:
            return self.volume
        a, b = self.records[-2], self.records[-1]
        sa, sb = math.sqrt(a.alpha), math.sqrt(b.alpha)
        return b.volume + (b.volume - a.volume) * sb / (sa - sb)

    def to_dict(self) -> dict:
        out = {
            "alpha": [r.alpha for r in self.records],
            "volume": [r.volume for r in self.records],
            "cg_iters": [r.iterations for r in self.records],
            "residual": [r.residual for r in self.records],
            "converged": [r.converged for r in self.records],
            "energy": [r.energy for r in self.records],
            "measurements": self.measurements,
            "volume_drops": self.volume_drops(),
        }
        if self.oracle_volume is not None:
            out["oracle_volume"] = self.oracle_volume
        errs = [r.interior_l2_error for r in self.records]
        if any(e is not None for e in errs):
            out["interior_l2_error"] = errs
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def alpha_continuation(device: MeasurementDevice, mask: SupportMask,
                       schedule: Sequence[float] = DEFAULT_SCHEDULE, tol: float = 1e-8,
                       max_iters: int = 500, warm_start: bool = True,
                       x0: Optional[SpaceTimeField] = None,
                       weights: Optional[InnerProductWeights] = None) -> MinimizeReport:
    """Solve along a decreasing ``alpha`` schedule, warm-starting each solve."""
    schedule = [float(a) for a in schedule]
    if not schedule or any(a <= 0 for a in schedule):
        raise ConfigurationError("alpha schedule must be nonempty and positive")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigurationError("alpha schedule must be strictly decreasing")
    if weights is None:
        weights = InnerProductWeights.for_device(device)
    b = rhs(mask, device.dt)
    start = device.count
    records = []
    guess = x0
    for alpha in schedule:
        res = solve_normal_equation(device, mask, alpha, tol, max_iters,
                                    x0=guess, weights=weights, b=b)
        vol = inner(res.solution, res.k_solution, weights)
        e = vol - 2.0 * inner(res.solution, b, weights) + alpha * inner(
            res.solution, res.solution, weights)
        records.append(AlphaRecord(alpha, res.solution, res.iterations, res.residual,
                                   res.converged, e, vol, res.measurements))
        if warm_start:
            guess = res.solution
    return MinimizeReport(records, device.count - start)


def verify_theorem2(device: SimulatedDevice, f_alpha: SpaceTimeField,
                    gamma: BoundarySubset, tau) -> float:
    """Natural-measure L2 distance between ``u^f(T)`` and the domain indicator.

    Uses the device's verification channel and the travel-time oracle for
    ``tau`` clamped to ``[0, T]``.  Nodes whose slab has zero duration
    carry no control and are left out of the target set.
    """
    c = device.c
    tau = np.minimum(as_profile(tau, c.boundary.size), device.T)
    snap = device.snapshot(f_alpha)
    active = [j for j in gamma.indices if tau[j] > 0]
    if active:
        sub = BoundarySubset(tuple(active), gamma.n_boundary)
        target = domain_of_influence(c, sub, tau).closed.astype(float)
    else:
        target = np.zeros_like(snap)
    diff = snap - target
    return math.sqrt(max(device.natural_inner(diff, diff), 0.0))
