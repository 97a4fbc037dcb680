"""Time-axis operators and the connecting operator ``K``.

All operators act on :class:`~bcinverse.forward.SpaceTimeField` samples on
``[0, 2T]`` with ``2N`` steps.  The inner product uses trapezoidal time
weights and boundary weights ``ds * c**(1-n)``.

``J`` integrates over ``[t, 2T - t]`` with the composite midpoint rule on
panels of width ``2 dt`` (the nodes ``t_{k+1}, t_{k+3}, ..., t_{2N-k-1}``).
With this rule and the leapfrog solver the discrete identity
``(f, K h) = (u^f(T), u^h(T))`` holds to roundoff, so ``K`` is exactly
symmetric on the grid.  ``I`` is the trapezoidal running integral and
``I_adjoint`` its transpose with respect to the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .forward import MeasurementDevice, SpaceTimeField


@dataclass(frozen=True, eq=False)
class InnerProductWeights:
    """Trapezoidal time weights and boundary quadrature weights."""

    time: np.ndarray
    boundary: np.ndarray

    @classmethod
    def build(cls, n_steps, dt, boundary_weights):
        w = np.full(n_steps + 1, float(dt))
        w[0] = w[-1] = dt / 2
        return cls(w, np.asarray(boundary_weights, dtype=float))

    @classmethod
    def for_device(cls, device: MeasurementDevice):
        return cls.build(device.n_steps, device.dt, device.boundary_weights)

    @property
    def matrix(self) -> np.ndarray:
        return np.outer(self.time, self.boundary)

    def check(self, f: SpaceTimeField):
        if f.values.shape != (len(self.time), len(self.boundary)):
            raise ShapeError(
                f"field shape {f.values.shape} does not match the weights "
                f"({len(self.time)}, {len(self.boundary)})")


@dataclass(frozen=True)
class TriangleL:
    """Integration region ``{(t, s): t + s <= 2T, s > t > 0}`` on the time grid."""

    n_steps: int

    def bounds(self, k):
        """Node range ``[k, 2N - k]`` integrated for output node ``k`` (empty for ``k >= N``)."""
        n = self.n_steps // 2
        return (k, self.n_steps - k) if k < n else None

    def contains(self, t, s, horizon):
        return (t + s <= horizon) & (s > t) & (t > 0)


def op_R(f: SpaceTimeField) -> SpaceTimeField:
    """Time reversal ``t -> 2T - t``."""
    return f.like(f.values[::-1])


def op_J(f: SpaceTimeField) -> SpaceTimeField:
    """Half the integral of ``f`` over ``[t, 2T - t]`` for ``t < T``, else 0."""
    n = f.half_steps
    v = f.values
    out = np.zeros_like(v)
    # suffix sums over each parity class; a midpoint sum is a difference of two
    odd = _suffix(v[1::2])    # odd[m] = sum_{i >= m} v[2i + 1]
    even = _suffix(v[0::2])   # even[m] = sum_{i >= m} v[2i]
    k = np.arange(n)
    p = k // 2
    ev = k % 2 == 0
    # k = 2p uses nodes 2p+1 .. 2N-2p-1, k = 2p+1 uses nodes 2p+2 .. 2N-2p-2
    out[k[ev]] = odd[p[ev]] - odd[n - p[ev]]
    out[k[~ev]] = even[p[~ev] + 1] - even[n - p[~ev]]
    return f.like(f.dt * out)


def _suffix(a):
    out = np.zeros((len(a) + 1, a.shape[1]))
    out[:-1] = np.cumsum(a[::-1], axis=0)[::-1]
    return out


def op_I(f: SpaceTimeField) -> SpaceTimeField:
    """Trapezoidal running integral ``int_0^t f``, set to 0 for ``t >= T``."""
    v = f.values
    n = f.half_steps
    out = np.zeros_like(v)
    run = np.concatenate([np.zeros((1, v.shape[1])),
                          np.cumsum(0.5 * f.dt * (v[1:] + v[:-1]), axis=0)])
    out[:n] = run[:n]
    return f.like(out)


def op_I_adjoint(h: SpaceTimeField) -> SpaceTimeField:
    """Transpose of :func:`op_I` with respect to the trapezoidal time weights.

    Away from the end points this is ``int_s^T h``; the boundary
    weights cancel because ``I`` acts on each boundary node separately.
    """
    n = h.half_steps
    dt = h.dt
    w = np.full(h.n_steps + 1, dt)
    w[0] = w[-1] = dt / 2
    g = np.zeros_like(h.values)
    g[1:n] = w[1:n, None] * h.values[1:n]
    incl = np.cumsum(g[::-1], axis=0)[::-1]  # sum_{k >= l} g_k
    excl = incl - g  # sum_{k > l} g_k
    out = dt * excl + 0.5 * dt * g
    out[0] = 0.5 * dt * excl[0]
    return h.like(out / w[:, None])


def inner(f: SpaceTimeField, h: SpaceTimeField, weights: InnerProductWeights) -> float:
    """Weighted space-time inner product."""
    f.check_compatible(h)
    weights.check(f)
    return float(np.einsum("k,j,kj->", weights.time, weights.boundary, f.values * h.values))


def norm(f: SpaceTimeField, weights: InnerProductWeights) -> float:
    return math.sqrt(max(inner(f, f, weights), 0.0))


def apply_K(device: MeasurementDevice, f: SpaceTimeField) -> SpaceTimeField:
    """``J Lambda f - R Lambda R J f`` using exactly two measurements."""
    first = device.measure(f)
    second = device.measure(op_R(op_J(f)))
    return op_J(first) - op_R(second)


def estimate_K_norm(device: MeasurementDevice, weights: InnerProductWeights,
                    iters: int = 20, seed: int = 0, rtol: float = 1e-3) -> float:
    """Power-iteration estimate of the operator norm of ``K``.

    Costs two measurements per iteration.
    """
    rng = np.random.default_rng(seed)
    x = device.field(rng.standard_normal((device.n_steps + 1, device.n_boundary)))
    x = x * (1.0 / norm(x, weights))
    est = 0.0
    for _ in range(iters):
        y = apply_K(device, x)
        new = norm(y, weights)
        if new == 0.0:
            return 0.0
        x = y * (1.0 / new)
        if abs(new - est) <= rtol * new:
            return new
        est = new
    return est


def k_symmetry_defect(device: MeasurementDevice, weights: InnerProductWeights,
                      pairs: int = 5, seed: int = 0, k_norm: float = None,
                      sources=None) -> float:
    """Largest ``|(f, K h) - (K f, h)| / (|f| |h| |K|)`` over sampled pairs.

    ``sources`` may supply the pairs as a list of ``(f, h)`` tuples;
    otherwise standard normal fields are drawn.
    """
    if k_norm is None:
        k_norm = estimate_K_norm(device, weights, seed=seed)
    if sources is None:
        rng = np.random.default_rng(seed + 1)
        shape = (device.n_steps + 1, device.n_boundary)
        sources = [(device.field(rng.standard_normal(shape)),
                    device.field(rng.standard_normal(shape))) for _ in range(pairs)]
    worst = 0.0
    for f, h in sources:
        a = inner(f, apply_K(device, h), weights)
        b = inner(apply_K(device, f), h, weights)
        scale = norm(f, weights) * norm(h, weights) * max(k_norm, np.finfo(float).tiny)
        worst = max(worst, abs(a - b) / scale)
    return worst
