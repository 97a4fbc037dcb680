"""Leapfrog solver for the weighted wave equation and measurement devices.

The spatial operator is discretised in weak form: a lumped mass matrix
``M = diag(c**-2 * cell weight)`` and a stiffness matrix assembled from
grid edges.  For the isotropic metric ``c**-2 * delta`` with weight
``c**(n-2)`` the stiffness integrand is the plain ``grad u . grad v``, so
edge conductances do not depend on ``c``.  The Neumann datum enters as a
load at the boundary nodes, ``f * ds * c**(1-n)``, and the trace is the
nodal value.  Time stepping is explicit leapfrog started from rest with a
half-weighted first load, which makes the scheme second-order in time.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve

from .errors import ConfigurationError, InstabilityError, ReplayError, ShapeError
from .geometry import SpeedField


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Samples ``values[k, j]`` at times ``k * dt`` on boundary node ``j``.

    The time grid runs from 0 to the horizon ``2T`` with an even number of
    steps so that ``T`` is a grid node and reversal maps the grid to itself.
    """

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ShapeError("space-time values must be a 2-D array (time, boundary node)")
        if v.shape[0] < 3 or (v.shape[0] - 1) % 2:
            raise ShapeError("number of time steps must be even and positive")
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        if not np.all(np.isfinite(v)):
            raise ShapeError("space-time values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, n_steps, n_boundary, dt):
        return cls(np.zeros((n_steps + 1, n_boundary)), dt)

    @classmethod
    def from_function(cls, fn, n_steps, n_boundary, dt):
        """Sample ``fn(t)`` returning an array broadcastable to ``(nt, nb)``."""
        t = np.arange(n_steps + 1) * dt
        vals = np.broadcast_to(np.asarray(fn(t[:, None]), dtype=float), (n_steps + 1, n_boundary))
        return cls(vals.copy(), dt)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_boundary(self) -> int:
        return self.values.shape[1]

    @property
    def half_steps(self) -> int:
        return self.n_steps // 2

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def T(self) -> float:
        return self.half_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def like(self, values) -> "SpaceTimeField":
        return SpaceTimeField(values, self.dt)

    def check_compatible(self, other: "SpaceTimeField"):
        if self.values.shape != other.values.shape or not math.isclose(
                self.dt, other.dt, rel_tol=1e-12):
            raise ShapeError("space-time fields live on different grids")

    def __add__(self, other):
        self.check_compatible(other)
        return self.like(self.values + other.values)

    def __sub__(self, other):
        self.check_compatible(other)
        return self.like(self.values - other.values)

    def __mul__(self, scalar):
        return self.like(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def digest(self) -> str:
        """Content hash of the grid and values."""
        h = hashlib.sha256()
        h.update(np.asarray(self.values.shape, dtype=np.int64).tobytes())
        h.update(np.float64(self.dt).tobytes())
        h.update(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SolverSettings:
    """Grid spacing, time step and horizon of a simulation.

    ``T`` is half the measurement horizon; the solver runs ``2 * n_half``
    steps of size ``dt = T / n_half``.
    """

    h: float
    dt: float
    T: float
    c_max: float
    dim: int = 1

    def __post_init__(self):
        if not (self.h > 0 and self.dt > 0 and self.T > 0):
            raise ConfigurationError("h, dt and T must be positive")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError(f"dt = {self.dt} does not divide T = {self.T}")
        if self.cfl > self.max_cfl(self.dim) * (1 + 1e-12):
            raise ConfigurationError(
                f"CFL number {self.cfl:.4g} exceeds the stability limit "
                f"{self.max_cfl(self.dim):.4g}")

    @staticmethod
    def max_cfl(dim) -> float:
        return 0.9 / math.sqrt(dim)

    @property
    def cfl(self) -> float:
        return self.c_max * self.dt / self.h

    @property
    def n_half(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def n_steps(self) -> int:
        return 2 * self.n_half

    @classmethod
    def from_cfl(cls, c: SpeedField, T: float, cfl: Optional[float] = None):
        """Largest stable step dividing ``T`` for the given CFL number."""
        if cfl is None:
            cfl = cls.max_cfl(c.dim)
        if not cfl > 0:
            raise ConfigurationError("CFL number must be positive")
        if cfl > cls.max_cfl(c.dim) * (1 + 1e-12):
            raise ConfigurationError(
                f"CFL number {cfl:.4g} exceeds the stability limit {cls.max_cfl(c.dim):.4g}")
        h = c.interior.spacing
        n_half = max(1, math.ceil(T * c.c_max / (cfl * h) - 1e-9))
        return cls(h, T / n_half, T, c.c_max, c.dim)

    @classmethod
    def from_dt(cls, c: SpeedField, T: float, dt: float):
        return cls(c.interior.spacing, dt, T, c.c_max, c.dim)

    def zeros(self, n_boundary) -> SpaceTimeField:
        return SpaceTimeField.zeros(self.n_steps, n_boundary, self.dt)


def _assemble(c: SpeedField):
    """Lumped mass (as a vector), stiffness matrix and boundary load/trace data."""
    grid = c.interior
    dom = c.domain
    h = grid.spacing
    if dom.kind == "interval":
        n = grid.size
        cond = np.full(n - 1, 1.0 / h)
        rows, cols = np.arange(n - 1), np.arange(1, n)
        cell = grid.weights
    else:
        idx = grid.index
        rows, cols, cond = [], [], []
        for axis in (0, 1):
            a = np.take(idx, np.arange(idx.shape[axis] - 1), axis=axis)
            b = np.take(idx, np.arange(1, idx.shape[axis]), axis=axis)
            ok = (a >= 0) & (b >= 0)
            k = np.ones(a.shape)
            if dom.kind == "rectangle":
                # edges lying on the rectangle's sides own half a dual face
                other = 1 - axis
                edge_rows = [0, a.shape[other] - 1]
                sl = [slice(None), slice(None)]
                sl[other] = edge_rows
                k[tuple(sl)] = 0.5
            rows.append(a[ok])
            cols.append(b[ok])
            cond.append(k[ok])
        rows, cols, cond = map(np.concatenate, (rows, cols, cond))
        # staircase cells on the disk keep the lumped mass uniform and stable
        cell = grid.weights if dom.kind == "rectangle" else np.full(grid.size, h * h)
    n = grid.size
    off = sp.coo_matrix((-cond, (rows, cols)), shape=(n, n))
    diag = np.zeros(n)
    np.add.at(diag, rows, cond)
    np.add.at(diag, cols, cond)
    stiff = (off + off.T + sp.diags(diag)).tocsr()
    mass = cell * c.interior_density
    load = c.boundary.weights * c.boundary_density
    return mass, stiff, c.boundary.node_index.astype(np.int64), load


@dataclass
class SimulationResult:
    trace: SpaceTimeField
    snapshot: Optional[np.ndarray]
    energy: Optional[np.ndarray] = None


class WaveSolver:
    """Explicit leapfrog solver bound to a speed field and settings.

    Parameters
    ----------
    c : SpeedField
    settings : SolverSettings
    check_every : int
        Steps between NaN/overflow checks.
    """

    def __init__(self, c: SpeedField, settings: SolverSettings, check_every: int = 64):
        if not math.isclose(settings.h, c.interior.spacing, rel_tol=1e-12):
            raise ConfigurationError("solver spacing does not match the speed grid")
        if settings.c_max < c.c_max * (1 - 1e-12):
            raise ConfigurationError("solver settings were built for a slower medium")
        self.c = c
        self.settings = settings
        self.check_every = check_every
        self.mass, self.stiffness, self.boundary_nodes, self.load_weights = _assemble(c)
        self.inv_mass = 1.0 / self.mass

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_nodes)

    def _check_source(self, f: SpaceTimeField):
        s = self.settings
        if f.n_boundary != self.n_boundary or f.n_steps != s.n_steps:
            raise ShapeError(
                f"source has shape {f.values.shape}, solver expects "
                f"({s.n_steps + 1}, {self.n_boundary})")
        if not math.isclose(f.dt, s.dt, rel_tol=1e-9):
            raise ShapeError(f"source time step {f.dt} differs from solver step {s.dt}")

    def run(self, f: SpaceTimeField, snapshot: bool = True, energy: bool = False,
            stop_at: Optional[int] = None) -> SimulationResult:
        """Step from rest and record the boundary trace at every time node.

        ``stop_at`` truncates the run after that step (the remaining trace is
        left at zero); it is used by the snapshot-only channel.
        """
        self._check_source(f)
        s = self.settings
        dt2 = s.dt ** 2
        nt = s.n_steps + 1
        last = nt if stop_at is None else min(nt, stop_at + 1)
        bn = self.boundary_nodes
        loads = f.values * self.load_weights[None, :]
        loads = loads.copy()
        loads[0] *= 0.5
        u_prev = np.zeros(len(self.mass))
        u = np.zeros(len(self.mass))
        trace = np.zeros((nt, len(bn)))
        snap = None
        history = [] if energy else None
        src = np.zeros(len(self.mass))
        # overflow is reported as InstabilityError below, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(last):
                trace[k] = u[bn]
                if k == s.n_half and snapshot:
                    snap = u.copy()
                if k == last - 1:
                    break
                src[:] = 0.0
                np.add.at(src, bn, loads[k])
                u_next = 2.0 * u - u_prev + dt2 * self.inv_mass * (src - self.stiffness @ u)
                if energy:
                    history.append(self._energy(u, u_next))
                u_prev, u = u, u_next
                if (k + 1) % self.check_every == 0 and not np.isfinite(u).all():
                    raise InstabilityError(k + 1)
        if not np.isfinite(trace).all():
            raise InstabilityError(last - 1)
        return SimulationResult(SpaceTimeField(trace, s.dt), snap,
                                np.array(history) if energy else None)

    def _energy(self, u, u_next):
        # conserved leapfrog energy at the half step between u and u_next
        v = (u_next - u) / self.settings.dt
        return 0.5 * float(np.sum(self.mass * v * v) + u_next @ (self.stiffness @ u))

    def impulse_responses(self) -> np.ndarray:
        """Traces ``G[k, i, j]`` at node ``i`` for a unit load at node ``j`` and step 0.

        The load is applied without the start-up half weight, so the trace of
        a general source is the discrete convolution of ``G`` with the loads.
        """
        s = self.settings
        nt = s.n_steps + 1
        nb = self.n_boundary
        out = np.zeros((nt, nb, nb))
        dt2 = s.dt ** 2
        for j in range(nb):
            u_prev = np.zeros(len(self.mass))
            u = np.zeros(len(self.mass))
            src = np.zeros(len(self.mass))
            np.add.at(src, self.boundary_nodes[j:j + 1], self.load_weights[j])
            for k in range(nt):
                out[k, :, j] = u[self.boundary_nodes]
                if k == nt - 1:
                    break
                load = src if k == 0 else 0.0
                u_next = 2.0 * u - u_prev + dt2 * self.inv_mass * (load - self.stiffness @ u)
                u_prev, u = u, u_next
        return out

    def snapshot_mass(self, snapshot) -> float:
        """Squared norm of an interior field in the natural measure."""
        return float(np.sum(self.mass * np.asarray(snapshot) ** 2))


def simulate(c: SpeedField, f: SpaceTimeField, settings: SolverSettings):
    """Boundary trace on ``[0, 2T]`` and interior snapshot at ``T`` for source ``f``."""
    res = WaveSolver(c, settings).run(f)
    return res.trace, res.snapshot


# ---------------------------------------------------------------------------
# measurement devices


class MeasurementDevice:
    """Black box mapping sources to boundary traces, with call accounting.

    Parameters
    ----------
    n_steps, n_boundary, dt :
        Space-time grid of sources and traces.
    boundary_weights :
        Quadrature weight times boundary measure density at each boundary node.
    noise_level : float
        Relative amplitude of additive Gaussian noise (relative to the trace
        RMS); 0 disables noise.
    seed : int
        Seed of the noise generator.
    """

    def __init__(self, n_steps, n_boundary, dt, boundary_weights,
                 noise_level: float = 0.0, seed: Optional[int] = 0):
        if noise_level < 0:
            raise ConfigurationError("noise level must be non-negative")
        self.n_steps = int(n_steps)
        self.n_boundary = int(n_boundary)
        self.dt = float(dt)
        self.boundary_weights = np.asarray(boundary_weights, dtype=float)
        self.noise_level = float(noise_level)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self) -> int:
        return self._count

    @property
    def T(self) -> float:
        return self.n_steps // 2 * self.dt

    def zeros(self) -> SpaceTimeField:
        return SpaceTimeField.zeros(self.n_steps, self.n_boundary, self.dt)

    def field(self, values) -> SpaceTimeField:
        return SpaceTimeField(values, self.dt)

    def check_source(self, f: SpaceTimeField):
        if f.values.shape != (self.n_steps + 1, self.n_boundary) or not math.isclose(
                f.dt, self.dt, rel_tol=1e-9):
            raise ShapeError(
                f"source grid {f.values.shape}, dt={f.dt} does not match the device grid "
                f"({self.n_steps + 1}, {self.n_boundary}), dt={self.dt}")

    def measure(self, f: SpaceTimeField) -> SpaceTimeField:
        self.check_source(f)
        with self._lock:
            self._count += 1
        trace = self._measure(f)
        if self.noise_level > 0:
            vals = trace.values
            rms = math.sqrt(float(np.mean(vals ** 2)))
            with self._lock:
                noise = self._rng.standard_normal(vals.shape)
            trace = trace.like(vals + self.noise_level * rms * noise)
        return trace

    def _measure(self, f: SpaceTimeField) -> SpaceTimeField:
        raise NotImplementedError


class SimulatedDevice(MeasurementDevice):
    """Device backed by the leapfrog solver.

    ``method="convolution"`` precomputes the boundary impulse responses and
    applies them by FFT convolution, which reproduces the time-stepped trace
    to roundoff and is much faster when many measurements share one medium.
    The interior snapshot is reachable only through :meth:`snapshot`, which
    requires ``verification=True`` and does not count as a measurement.
    """

    def __init__(self, c: SpeedField, settings: SolverSettings, noise_level=0.0, seed=0,
                 method: str = "timestep", verification: bool = True,
                 record_dir: Optional[str] = None):
        if method not in ("timestep", "convolution"):
            raise ConfigurationError(f"unknown simulation method {method!r}")
        self.solver = WaveSolver(c, settings)
        super().__init__(settings.n_steps, self.solver.n_boundary, settings.dt,
                         self.solver.load_weights, noise_level, seed)
        self.c = c
        self.settings = settings
        self.method = method
        self.verification = verification
        self.record_dir = Path(record_dir) if record_dir is not None else None
        self._kernel = None
        self._kernel_lock = threading.Lock()

    def _measure(self, f):
        if self.method == "convolution":
            trace = self._convolve(f)
        else:
            trace = self.solver.run(f, snapshot=False).trace
        if self.record_dir is not None:
            self.record_dir.mkdir(parents=True, exist_ok=True)
            write_trace_csv(self.record_dir / f"{f.digest()}.csv", trace)
        return trace

    def _convolve(self, f):
        with self._kernel_lock:
            if self._kernel is None:
                self._kernel = self.solver.impulse_responses()
        G = self._kernel
        src = np.array(f.values)
        src[0] *= 0.5
        nt = f.n_steps + 1
        out = np.zeros((nt, self.n_boundary))
        for j in range(self.n_boundary):
            if src[:, j].any():
                out += fftconvolve(G[:, :, j], src[:, j:j + 1], axes=0)[:nt]
        return f.like(out)

    def snapshot(self, f: SpaceTimeField) -> np.ndarray:
        """Interior field at ``T`` (verification channel)."""
        if not self.verification:
            raise ConfigurationError("verification channel is disabled on this device")
        self.check_source(f)
        return self.solver.run(f, snapshot=True, stop_at=self.settings.n_half).snapshot

    def natural_inner(self, u, v) -> float:
        """Inner product of interior fields in the natural measure (solver quadrature)."""
        return float(np.sum(self.solver.mass * np.asarray(u) * np.asarray(v)))


class ReplayDevice(MeasurementDevice):
    """Device that returns stored traces keyed by the source's content hash."""

    def __init__(self, directory, n_steps, n_boundary, dt, boundary_weights,
                 noise_level=0.0, seed=0):
        super().__init__(n_steps, n_boundary, dt, boundary_weights, noise_level, seed)
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ConfigurationError(f"replay directory {self.directory} does not exist")

    @classmethod
    def like(cls, device: MeasurementDevice, directory, **kwargs):
        return cls(directory, device.n_steps, device.n_boundary, device.dt,
                   device.boundary_weights, **kwargs)

    def _measure(self, f):
        path = self.directory / f"{f.digest()}.csv"
        if not path.exists():
            raise ReplayError(f"no stored trace for source {f.digest()[:12]}")
        trace = read_trace_csv(path)
        if trace.values.shape != f.values.shape:
            raise ReplayError(f"stored trace {path.name} has the wrong shape")
        return f.like(trace.values)


def measure(device: MeasurementDevice, f: SpaceTimeField) -> SpaceTimeField:
    """Apply the device's Neumann-to-Dirichlet map to ``f``."""
    return device.measure(f)


# ---------------------------------------------------------------------------
# source generators


def bandlimited_source(n_steps, n_boundary, dt, rng, modes: int = 8,
                       window=None) -> SpaceTimeField:
    """Random sum of ``sin(m pi t / 2T)``, ``m = 1..modes``, at every boundary node.

    ``window`` is an optional ``(nt, nb)`` array multiplied into the result,
    e.g. a support mask.
    """
    t = np.arange(n_steps + 1) * dt
    horizon = n_steps * dt
    m = np.arange(1, modes + 1)
    basis = np.sin(np.pi * np.outer(t, m) / horizon)
    vals = basis @ rng.standard_normal((modes, n_boundary))
    if window is not None:
        vals = vals * window
    return SpaceTimeField(vals, dt)


def smooth_bump(t, start, stop):
    """``C^infinity`` bump supported in ``[start, stop]`` with unit peak."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    if stop <= start:
        return out
    s = (t - start) / (stop - start)
    inside = (s > 0) & (s < 1)
    x = 2 * s[inside] - 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x * x))
    return out


def pulse_source(n_steps, n_boundary, dt, duration, node=0, amplitude=1.0) -> SpaceTimeField:
    """Box pulse ``amplitude * 1[0, duration](t)`` on one boundary node.

    The trailing edge is cell-averaged over ``[t - dt/2, t + dt/2]`` so that the
    trapezoid integral of the samples equals ``amplitude * duration``.
    """
    t = np.arange(n_steps + 1) * dt
    vals = np.zeros((n_steps + 1, n_boundary))
    vals[:, node] = amplitude * np.clip((duration - t) / dt + 0.5, 0.0, 1.0)
    return SpaceTimeField(vals, dt)


# ---------------------------------------------------------------------------
# CSV interfaces


def write_trace_csv(path, field: SpaceTimeField):
    """Rows ``(t, boundary_node_id, value)``, time-major."""
    nt, nb = field.values.shape
    t = np.repeat(field.times, nb)
    j = np.tile(np.arange(nb), nt)
    table = np.column_stack([t, j, field.values.ravel()])
    with open(path, "w") as fh:
        fh.write("t,boundary_node_id,value\n")
        np.savetxt(fh, table, fmt=["%.17g", "%d", "%.17g"], delimiter=",")


def read_trace_csv(path) -> SpaceTimeField:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed trace file ({exc})") from None
    if data.shape[1] != 3:
        raise ConfigurationError(f"{path}: expected 3 columns (t, boundary_node_id, value)")
    nodes = data[:, 1].astype(np.int64)
    nb = int(nodes.max()) + 1
    if len(data) % nb:
        raise ConfigurationError(f"{path}: incomplete time rows")
    nt = len(data) // nb
    if not np.array_equal(nodes, np.tile(np.arange(nb), nt)):
        raise ConfigurationError(f"{path}: rows must be time-major with node ids 0..{nb - 1}")
    t = data[::nb, 0]
    dt = t[-1] / (nt - 1)
    return SpaceTimeField(data[:, 2].reshape(nt, nb), dt)
