"""Cross-module consistency checks with measured values and tolerances.

Every check returns a :class:`CheckResult`; the command-line ``verify``
command runs the whole suite and exits nonzero if any check fails.
Checks that need interior fields read them through the simulated device's
verification channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .control import (InnerProductWeights, apply_K, estimate_K_norm, inner, k_symmetry_defect,
                      norm, op_I, op_I_adjoint, op_R)
from .forward import SimulatedDevice, SpaceTimeField, bandlimited_source
from .influence import BoundarySubset, domain_of_influence
from .minimize import alpha_continuation, mask_for_device, verify_theorem2

DEFAULT_TOLERANCES = {
    "blagovestchenskii": 0.02,
    "cross_term": 0.02,
    "adjoint": 1e-12,
    "finite_speed": 1e-6,
    "k_symmetry": 1e-3,
}


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "passed": bool(self.passed), **self.detail}

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e})"


def _random_source(device, rng, window=None):
    return bandlimited_source(device.n_steps, device.n_boundary, device.dt, rng, window=window)


def blagovestchenskii_errors(device: SimulatedDevice, pairs, weights=None) -> np.ndarray:
    """``|(f, K h) - (u^f(T), u^h(T))| / (|u^f(T)| |u^h(T)|)`` for each pair."""
    if weights is None:
        weights = InnerProductWeights.for_device(device)
    out = []
    for f, h in pairs:
        boundary_side = inner(f, apply_K(device, h), weights)
        uf, uh = device.snapshot(f), device.snapshot(h)
        interior_side = device.natural_inner(uf, uh)
        scale = math.sqrt(device.natural_inner(uf, uf) * device.natural_inner(uh, uh))
        out.append(abs(boundary_side - interior_side) / scale)
    return np.array(out)


def check_blagovestchenskii(device, rng, n_pairs=10, tol=0.02) -> CheckResult:
    pairs = [(_random_source(device, rng), _random_source(device, rng)) for _ in range(n_pairs)]
    errs = blagovestchenskii_errors(device, pairs)
    return CheckResult("blagovestchenskii", float(errs.max()), tol, bool(errs.max() <= tol),
                       {"pairs": n_pairs})


def cross_term_errors(device: SimulatedDevice, sources, weights=None) -> np.ndarray:
    """``|(I f, 1) - (u^f(T), 1)| / (|u^f(T)| |1|)`` for each source."""
    if weights is None:
        weights = InnerProductWeights.for_device(device)
    out = []
    for f in sources:
        one = f.like(np.ones_like(f.values))
        boundary_side = inner(op_I(f), one, weights)
        uf = device.snapshot(f)
        ones = np.ones_like(uf)
        interior_side = device.natural_inner(uf, ones)
        scale = math.sqrt(device.natural_inner(uf, uf) * device.natural_inner(ones, ones))
        out.append(abs(boundary_side - interior_side) / scale)
    return np.array(out)


def check_cross_term(device, rng, n_sources=10, tol=0.02) -> CheckResult:
    errs = cross_term_errors(device, [_random_source(device, rng) for _ in range(n_sources)])
    return CheckResult("cross_term", float(errs.max()), tol, bool(errs.max() <= tol))


def check_adjoint(device, rng, n_pairs=10, tol=1e-12) -> CheckResult:
    """Transpose identity of ``I`` and bit-exact involution of ``R``."""
    weights = InnerProductWeights.for_device(device)
    shape = (device.n_steps + 1, device.n_boundary)
    worst = 0.0
    involution = True
    for _ in range(n_pairs):
        f = device.field(rng.standard_normal(shape))
        h = device.field(rng.standard_normal(shape))
        a = inner(op_I(f), h, weights)
        b = inner(f, op_I_adjoint(h), weights)
        worst = max(worst, abs(a - b) / (norm(op_I(f), weights) * norm(h, weights)))
        involution &= bool(np.array_equal(op_R(op_R(f)).values, f.values))
    return CheckResult("adjoint", worst, tol, worst <= tol and involution,
                       {"r_involution_exact": involution})


def dilated_complement(c, closed: np.ndarray, radius: float) -> np.ndarray:
    """Nodes farther than ``radius`` (Euclidean) from every node of ``closed``."""
    pts = c.interior.points
    if not closed.any():
        return np.ones(len(pts), dtype=bool)
    d, _ = cKDTree(pts[closed]).query(pts)
    return d > radius * (1 + 1e-9)


def finite_speed_leak(device: SimulatedDevice, gamma: BoundarySubset, tau, f: SpaceTimeField):
    """Fraction of snapshot mass outside the domain of influence dilated by ``2h``."""
    c = device.c
    dom = domain_of_influence(c, gamma, np.minimum(tau, device.T))
    outside = dilated_complement(c, dom.closed, 2 * c.interior.spacing)
    u = device.snapshot(f)
    total = device.natural_inner(u, u)
    leak = device.natural_inner(u * outside, u * outside)
    return leak / total if total > 0 else 0.0


def check_finite_speed(device, gamma, tau, rng, n_sources=3, tol=1e-6) -> CheckResult:
    mask = mask_for_device(device, gamma, tau).mask
    ratios = [finite_speed_leak(device, gamma, tau, _random_source(device, rng, window=mask))
              for _ in range(n_sources)]
    return CheckResult("finite_speed", float(max(ratios)), tol, bool(max(ratios) <= tol))


def check_k_symmetry(device, seed=0, pairs=3, tol=1e-3) -> CheckResult:
    weights = InnerProductWeights.for_device(device)
    k_norm = estimate_K_norm(device, weights, seed=seed)
    defect = k_symmetry_defect(device, weights, pairs=pairs, seed=seed, k_norm=k_norm)
    return CheckResult("k_symmetry", defect, tol, defect <= tol, {"k_norm": k_norm})


def check_interior_error_trend(device, gamma, tau, schedule) -> CheckResult:
    """Interior error at the smallest alpha must be below that at the largest."""
    mask = mask_for_device(device, gamma, tau)
    rep = alpha_continuation(device, mask, schedule)
    first = verify_theorem2(device, rep.records[0].minimizer, gamma, tau)
    last = verify_theorem2(device, rep.final.minimizer, gamma, tau)
    return CheckResult("interior_error_trend", last - first, 0.0, last < first,
                       {"error_first_alpha": first, "error_last_alpha": last})


def run_suite(device: SimulatedDevice, gamma, tau, seed: int = 0, schedule=(1e-1, 1e-4),
              tolerances: Optional[Dict[str, float]] = None) -> List[CheckResult]:
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    rng = np.random.default_rng(seed)
    return [
        check_blagovestchenskii(device, rng, tol=tol["blagovestchenskii"]),
        check_cross_term(device, rng, tol=tol["cross_term"]),
        check_adjoint(device, rng, tol=tol["adjoint"]),
        check_finite_speed(device, gamma, tau, rng, tol=tol["finite_speed"]),
        check_k_symmetry(device, seed=seed, tol=tol["k_symmetry"]),
        check_interior_error_trend(device, gamma, tau, schedule),
    ]
