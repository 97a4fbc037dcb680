"""Grids, wave-speed models and travel-time distances.

Three domain shapes are supported: an interval ``[0, L]``, a rectangle
``[0, w] x [0, h]`` and a disk of radius ``rho`` centred at the origin.
Interior grids are uniform Cartesian grids (masked to the disk when
needed); boundary grids carry Euclidean arc-length weights.

Travel times are distances in the metric ``c(x)**-2 |dx|**2``.  In one
dimension they are slowness integrals evaluated by composite Simpson
quadrature; in two dimensions they come from a first-order fast marching
solver started from an exactly initialised neighbourhood of the source.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from ._fmm import march
from .errors import ConfigurationError, DomainError, ShapeError

_KINDS = ("interval", "rectangle", "disk")


@dataclass(frozen=True)
class DomainSpec:
    """Shape and resolution of the computational domain.

    ``resolution`` is the number of grid cells per unit length, so the grid
    spacing is ``1 / resolution`` (rounded so that the extents are whole
    multiples of it).  ``boundary_resolution`` is the number of boundary
    nodes on the disk; interval and rectangle boundary grids are fixed by
    the interior grid.
    """

    kind: str
    length: float = 1.0
    width: float = 1.0
    height: float = 1.0
    radius: float = 1.0
    resolution: float = 100.0
    boundary_resolution: Optional[int] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        for name in ("length", "width", "height", "radius"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.resolution > 0:
            raise ConfigurationError("resolution must be positive")

    @classmethod
    def interval(cls, length=1.0, resolution=100.0):
        return cls("interval", length=length, resolution=resolution)

    @classmethod
    def rectangle(cls, width=1.0, height=1.0, resolution=100.0):
        return cls("rectangle", width=width, height=height, resolution=resolution)

    @classmethod
    def disk(cls, radius=1.0, resolution=100.0, boundary_resolution=None):
        return cls("disk", radius=radius, resolution=resolution,
                   boundary_resolution=boundary_resolution)

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def diameter(self) -> float:
        """Euclidean diameter of the domain."""
        if self.kind == "interval":
            return self.length
        if self.kind == "rectangle":
            return math.hypot(self.width, self.height)
        return 2.0 * self.radius


@dataclass(frozen=True, eq=False)
class InteriorGrid:
    """Nodes covering the closed domain together with quadrature weights.

    ``shape`` is the shape of the underlying tensor grid and ``index`` maps
    tensor positions to compact node numbers (``-1`` outside the domain).
    ``origin`` is the coordinate of tensor position ``(0, ..., 0)``.
    """

    points: np.ndarray
    weights: np.ndarray
    spacing: float
    shape: tuple
    index: np.ndarray
    origin: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.index >= 0

    def to_tensor(self, values, fill=np.nan):
        """Scatter compact node values onto the tensor grid."""
        out = np.full(self.shape, fill, dtype=float)
        out[self.mask] = np.asarray(values, dtype=float)[self.index[self.mask]]
        return out

    def from_tensor(self, array):
        """Gather tensor-grid values at the domain nodes."""
        array = np.asarray(array)
        out = np.empty(self.size, dtype=array.dtype)
        out[self.index[self.mask]] = array[self.mask]
        return out

    def nearest_node(self, point) -> int:
        """Index of the grid node closest to ``point``."""
        d = np.linalg.norm(self.points - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(d))


@dataclass(frozen=True, eq=False)
class BoundaryGrid:
    """Boundary nodes with Euclidean arc-length weights.

    ``node_index`` is the interior grid node used to represent each boundary
    node in the wave solver (identical positions except on the disk, where
    the nearest interior node is used).
    """

    points: np.ndarray
    weights: np.ndarray
    node_index: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)


def _cells(extent, resolution):
    n = max(int(round(extent * resolution)), 1)
    return n


def build_grids(spec: DomainSpec):
    """Build the interior and boundary grids of ``spec``.

    Returns
    -------
    interior : InteriorGrid
    boundary : BoundaryGrid
    """
    if spec.kind == "interval":
        n = _cells(spec.length, spec.resolution)
        if n + 1 < 2:
            raise ConfigurationError("interval grid needs at least 2 nodes")
        h = spec.length / n
        x = np.linspace(0.0, spec.length, n + 1)
        w = np.full(n + 1, h)
        w[0] = w[-1] = h / 2
        interior = InteriorGrid(x[:, None], w, h, (n + 1,), np.arange(n + 1),
                                np.zeros(1))
        # counting measure on the two end points
        boundary = BoundaryGrid(np.array([[0.0], [spec.length]]), np.ones(2),
                                np.array([0, n]))
        return interior, boundary

    if spec.kind == "rectangle":
        nx = _cells(spec.width, spec.resolution)
        ny = _cells(spec.height, spec.resolution)
        if nx < 2 or ny < 2:
            raise ConfigurationError("rectangle grid needs at least 2 cells per side")
        hx, hy = spec.width / nx, spec.height / ny
        if not math.isclose(hx, hy, rel_tol=1e-9):
            raise ConfigurationError(
                "rectangle sides must be whole multiples of the grid spacing")
        xs = np.linspace(0.0, spec.width, nx + 1)
        ys = np.linspace(0.0, spec.height, ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        wx = np.full(nx + 1, hx)
        wx[[0, -1]] /= 2
        wy = np.full(ny + 1, hy)
        wy[[0, -1]] /= 2
        index = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
        interior = InteriorGrid(np.column_stack([X.ravel(), Y.ravel()]),
                                np.outer(wx, wy).ravel(), hx, (nx + 1, ny + 1),
                                index, np.zeros(2))
        # counter-clockwise walk along the perimeter starting at the origin
        ring = ([(i, 0) for i in range(nx)] + [(nx, j) for j in range(ny)]
                + [(i, ny) for i in range(nx, 0, -1)] + [(0, j) for j in range(ny, 0, -1)])
        ids = np.array([index[i, j] for i, j in ring])
        bw = np.full(len(ids), hx)
        boundary = BoundaryGrid(interior.points[ids], bw, ids)
        return interior, boundary

    # disk
    rho = spec.radius
    n_half = _cells(rho, spec.resolution)
    if n_half < 2:
        raise ConfigurationError("disk grid needs at least 2 cells per radius")
    h = rho / n_half
    xs = np.linspace(-rho, rho, 2 * n_half + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    R = np.hypot(X, Y)
    mask = R <= rho * (1 + 1e-12)
    index = np.full(X.shape, -1, dtype=np.int64)
    index[mask] = np.arange(mask.sum())
    points = np.column_stack([X[mask], Y[mask]])
    weights = _disk_cell_weights(points, xs, h, rho, mask)
    nb = spec.boundary_resolution or max(8, int(round(2 * math.pi * rho * spec.resolution / 4)))
    if nb < 2:
        raise ConfigurationError("disk boundary needs at least 2 nodes")
    theta = 2 * math.pi * np.arange(nb) / nb
    bpts = rho * np.column_stack([np.cos(theta), np.sin(theta)])
    tree = cKDTree(points)
    _, nearest = tree.query(bpts)
    interior = InteriorGrid(points, weights, h, X.shape, index, np.array([-rho, -rho]))
    boundary = BoundaryGrid(bpts, np.full(nb, 2 * math.pi * rho / nb), np.asarray(nearest))
    return interior, boundary


def _disk_cell_weights(points, xs, h, rho, mask, sub=16):
    """Area of each node's dual cell inside the disk.

    Cells cut by the circle are supersampled; sample points inside the disk
    whose own node lies outside are credited to the nearest interior node,
    so the weights sum to the disk area up to the supersampling error.
    """
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    corner = np.hypot(np.abs(X) + h / 2, np.abs(Y) + h / 2)
    inner_edge = np.hypot(np.maximum(np.abs(X) - h / 2, 0), np.maximum(np.abs(Y) - h / 2, 0))
    full = corner <= rho
    cut = (~full) & (inner_edge < rho)
    weights_t = np.where(full & mask, h * h, 0.0)
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    ox, oy = np.meshgrid(offs * h, offs * h, indexing="ij")
    ox, oy = ox.ravel(), oy.ravel()
    ci, cj = np.nonzero(cut)
    sx = (X[ci, cj][:, None] + ox[None, :]).ravel()
    sy = (Y[ci, cj][:, None] + oy[None, :]).ravel()
    inside = np.hypot(sx, sy) <= rho
    sx, sy = sx[inside], sy[inside]
    tree = cKDTree(points)
    _, owner = tree.query(np.column_stack([sx, sy]))
    weights = np.zeros(len(points))
    index = np.full(mask.shape, -1)
    index[mask] = np.arange(mask.sum())
    weights[index[mask & full]] = weights_t[mask & full]
    np.add.at(weights, owner, h * h / sub**2)
    return weights


@dataclass(frozen=True, eq=False)
class SpeedField:
    """Wave speed ``c`` sampled on the interior grid.

    ``func`` evaluates ``c`` at arbitrary points of shape ``(m, dim)``; for
    sampled profiles it interpolates the samples.
    """

    domain: DomainSpec
    interior: InteriorGrid
    boundary: BoundaryGrid
    samples: np.ndarray
    profile: str
    func: Callable = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (self.interior.size,):
            raise ShapeError("speed samples do not match the interior grid")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ConfigurationError("wave speed must be finite and strictly positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    # -- constructors -------------------------------------------------
    @classmethod
    def from_function(cls, domain, fn, profile="smooth"):
        interior, boundary = build_grids(domain)

        def func(points):
            return np.asarray(fn(np.atleast_2d(points)), dtype=float) * np.ones(len(np.atleast_2d(points)))

        return cls(domain, interior, boundary, func(interior.points), profile, func)

    @classmethod
    def constant(cls, domain, value=1.0):
        return cls.from_function(domain, lambda p: np.full(len(p), float(value)), "constant")

    @classmethod
    def linear(cls, domain, c0=1.0, gradient=1.0):
        """``c(x) = c0 + gradient . x``."""
        g = np.atleast_1d(np.asarray(gradient, dtype=float))
        if g.size == 1 and domain.dim == 2:
            g = np.array([g[0], 0.0])
        return cls.from_function(domain, lambda p: c0 + p @ g, "linear")

    @classmethod
    def smooth_bump(cls, domain, c0=1.0, amplitude=0.2):
        """Smooth perturbation of a constant speed vanishing on the boundary.

        Interval: ``c0 + a sin(pi x / L)``; rectangle: product of sines;
        disk: ``c0 + a cos(pi r / (2 rho))**2``.
        """
        if domain.kind == "interval":
            fn = lambda p: c0 + amplitude * np.sin(np.pi * p[:, 0] / domain.length)
        elif domain.kind == "rectangle":
            fn = lambda p: c0 + amplitude * (np.sin(np.pi * p[:, 0] / domain.width)
                                             * np.sin(np.pi * p[:, 1] / domain.height))
        else:
            fn = lambda p: c0 + amplitude * np.cos(
                np.pi * np.hypot(p[:, 0], p[:, 1]) / (2 * domain.radius)) ** 2
        return cls.from_function(domain, fn, "smooth-bump")

    @classmethod
    def sampled(cls, domain, values):
        interior, boundary = build_grids(domain)
        values = np.asarray(values, dtype=float)
        if values.shape != (interior.size,):
            raise ShapeError(f"expected {interior.size} speed samples, got {values.shape}")
        if domain.kind == "interval":
            x = interior.points[:, 0]

            def func(points):
                return np.interp(np.atleast_2d(points)[:, 0], x, values)
        else:
            tree = cKDTree(interior.points)

            def func(points):
                pts = np.atleast_2d(points)
                d, idx = tree.query(pts, k=min(4, interior.size))
                wts = 1.0 / np.maximum(d, 1e-14)
                return np.sum(values[idx] * wts, axis=1) / np.sum(wts, axis=1)
        return cls(domain, interior, boundary, values, "sampled", func)

    # -- derived quantities -------------------------------------------
    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, points):
        return self.func(np.atleast_2d(np.asarray(points, dtype=float)))

    @property
    def c_max(self) -> float:
        return float(self.samples.max())

    @property
    def interior_density(self) -> np.ndarray:
        """Density of the natural measure, ``c**-2``, at the interior nodes."""
        return self.samples ** -2.0

    @property
    def boundary_speed(self) -> np.ndarray:
        return self(self.boundary.points)

    @property
    def boundary_density(self) -> np.ndarray:
        """Density ``c**(1-n)`` of the boundary measure at the boundary nodes."""
        return self.boundary_speed ** (1.0 - self.dim)

    def scaled(self, factor):
        """Speed multiplied by a constant factor."""
        return SpeedField(self.domain, self.interior, self.boundary, self.samples * factor,
                          self.profile, lambda p: factor * self.func(p))


# ---------------------------------------------------------------------------
# one-dimensional travel times


def _simpson(fn, a, b, n):
    n = max(2, n + (n % 2))
    x = np.linspace(a, b, n + 1)
    y = fn(x[:, None])
    return (b - a) / (3 * n) * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


def travel_time_1d(c: SpeedField, x, y) -> float:
    """Travel time ``|int_x^y ds / c(s)|`` on an interval.

    Composite Simpson quadrature on a grid four times finer than the speed
    grid.
    """
    if c.domain.kind != "interval":
        raise ConfigurationError("travel_time_1d needs an interval domain")
    L = c.domain.length
    tol = 1e-12 * L
    for p in (x, y):
        if not (-tol <= p <= L + tol):
            raise DomainError(f"point {p} outside [0, {L}]")
    a, b = sorted((float(x), float(y)))
    if a == b:
        return 0.0
    n = 4 * int(math.ceil((b - a) / c.interior.spacing - 1e-9))
    return float(_simpson(lambda p: 1.0 / c(p), a, b, n))


def _node_travel_times_1d(c: SpeedField):
    """Travel time from 0 to every interior node."""
    if "phi" not in c._cache:
        x = c.interior.points[:, 0]
        sub = np.linspace(0.0, 1.0, 5)
        pts = x[:-1, None] + np.diff(x)[:, None] * sub[None, :]
        s = 1.0 / c(pts.reshape(-1, 1)).reshape(pts.shape)
        # Simpson on the two panels of each cell
        cell = np.diff(x) / 12.0 * (s[:, 0] + 4 * s[:, 1] + 2 * s[:, 2] + 4 * s[:, 3] + s[:, 4])
        c._cache["phi"] = np.concatenate([[0.0], np.cumsum(cell)])
    return c._cache["phi"]


# ---------------------------------------------------------------------------
# two-dimensional travel times


def _init_radius(grid: InteriorGrid, domain: DomainSpec):
    return max(3.0 * grid.spacing, 0.075 * domain.diameter)


def _march_grid(c: SpeedField):
    """Tensor slowness and mask for marching, cached on the speed field.

    On the disk the mask is widened by a band of ``_BAND`` cells outside the
    circle, with the speed formula extended there, so that paths hugging the
    curved boundary are not blocked by the staircase of interior nodes.
    """
    if "march_grid" not in c._cache:
        grid = c.interior
        slow = grid.to_tensor(1.0 / c.samples, fill=1.0)
        mask = grid.mask.copy()
        if c.domain.kind == "disk":
            axes = [grid.origin[k] + grid.spacing * np.arange(grid.shape[k]) for k in range(2)]
            X, Y = np.meshgrid(*axes, indexing="ij")
            band = (np.hypot(X, Y) <= c.domain.radius + _BAND * grid.spacing) & ~mask
            if band.any():
                pts = np.column_stack([X[band], Y[band]])
                if c.profile == "sampled":
                    _, nearest = cKDTree(grid.points).query(pts)
                    vals = c.samples[nearest]
                else:
                    vals = c(pts)
                slow[band] = 1.0 / np.maximum(vals, c.samples.min())
                mask |= band
        c._cache["march_grid"] = (slow, mask)
    return c._cache["march_grid"]


_BAND = 3


def _march_from(c: SpeedField, point, radius=None):
    grid = c.interior
    point = np.asarray(point, dtype=float)
    if radius is None:
        radius = _init_radius(grid, c.domain)
    slow, mask = _march_grid(c)
    s_src = 1.0 / float(c(point[None, :])[0])
    idx = np.argwhere(mask)
    pts = grid.origin + grid.spacing * idx
    dist = np.linalg.norm(pts - point, axis=1)
    near = dist <= radius
    if not near.any():
        near[np.argmin(dist)] = True
    init = np.full(grid.shape, np.inf)
    sel = idx[near]
    init[sel[:, 0], sel[:, 1]] = dist[near] * 0.5 * (slow[sel[:, 0], sel[:, 1]] + s_src)
    times = march(slow, mask, init, grid.spacing)
    return grid.from_tensor(times)


def travel_time_field_2d(c: SpeedField, source) -> np.ndarray:
    """Travel times from a boundary node (or point) to every interior node.

    Parameters
    ----------
    c : SpeedField
        Speed on a rectangle or disk.
    source : int or array_like
        Boundary node index, or a point of the closed domain.
    """
    if c.dim != 2:
        raise ConfigurationError("travel_time_field_2d needs a rectangle or disk domain")
    if np.ndim(source) == 0:
        point = c.boundary.points[int(source)]
    else:
        point = np.asarray(source, dtype=float)
    return _march_from(c, point)


def _evaluate_at(c: SpeedField, times, points):
    """Extend a nodal travel-time field to arbitrary points by one straight step."""
    grid = c.interior
    tree = c._cache.get("tree")
    if tree is None:
        tree = c._cache["tree"] = cKDTree(grid.points)
    slow_nodes = 1.0 / c.samples
    slow_pts = 1.0 / c(points)
    out = np.empty(len(points))
    for k, (p, sp) in enumerate(zip(points, slow_pts)):
        idx = tree.query_ball_point(p, 2.01 * grid.spacing)
        if not idx:
            _, nearest = tree.query(p)
            idx = [nearest]
        idx = np.asarray(idx)
        d = np.linalg.norm(grid.points[idx] - p, axis=1)
        out[k] = np.min(times[idx] + d * 0.5 * (slow_nodes[idx] + sp))
    return out


def distance_table(c: SpeedField) -> np.ndarray:
    """Matrix ``D[j, i] = d(y_j, x_i)`` of boundary-to-interior travel times.

    Cached on the speed field.
    """
    if "table" not in c._cache:
        if c.dim == 1:
            phi = _node_travel_times_1d(c)
            c._cache["table"] = np.abs(phi[None, :] - phi[[0, -1]][:, None])
        else:
            c._cache["table"] = np.vstack(
                [travel_time_field_2d(c, j) for j in range(c.boundary.size)])
    return c._cache["table"]


def boundary_distance_function(c: SpeedField, x) -> np.ndarray:
    """Profile ``y -> d(x, y)`` on the boundary nodes."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if c.dim == 1:
        return np.array([travel_time_1d(c, x[0], y) for y in c.boundary.points[:, 0]])
    if not _inside(c.domain, x):
        raise DomainError(f"point {x} outside the domain")
    times = _march_from(c, x)
    return _evaluate_at(c, times, c.boundary.points)


def _inside(domain, p, tol=1e-9):
    if domain.kind == "rectangle":
        return -tol <= p[0] <= domain.width + tol and -tol <= p[1] <= domain.height + tol
    return math.hypot(p[0], p[1]) <= domain.radius * (1 + tol)


def natural_volume(c: SpeedField, indicator) -> float:
    """Integral of ``indicator * c**-2`` over the domain."""
    ind = np.asarray(indicator, dtype=float)
    if ind.shape != (c.interior.size,):
        raise ShapeError(f"indicator has shape {ind.shape}, grid has {c.interior.size} nodes")
    return float(np.sum(ind * c.interior_density * c.interior.weights))


# ---------------------------------------------------------------------------
# CSV interfaces


def load_speed_csv(path, domain: DomainSpec) -> SpeedField:
    """Read ``(node index, value)`` rows into a sampled speed field."""
    interior, _ = build_grids(domain)
    values = np.full(interior.size, np.nan)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                i, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise ConfigurationError(f"{path}:{lineno}: expected 'node_index,value'")
            if not 0 <= i < interior.size:
                raise ConfigurationError(f"{path}:{lineno}: node index {i} out of range")
            values[i] = v
    if np.isnan(values).any():
        missing = int(np.isnan(values).sum())
        raise ConfigurationError(f"{path}: {missing} grid nodes have no speed value")
    return SpeedField.sampled(domain, values)


def write_speed_csv(path, c: SpeedField):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "value"])
        for i, v in enumerate(c.samples):
            w.writerow([i, repr(float(v))])


def write_grid_csv(path, interior: InteriorGrid, boundary: BoundaryGrid):
    """Export node coordinates and quadrature weights of both grids."""
    dim = interior.dim
    coords = ["x", "y"][:dim]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "node_id", *coords, "weight"])
        for i, (p, wt) in enumerate(zip(interior.points, interior.weights)):
            w.writerow(["interior", i, *map(repr, map(float, p)), repr(float(wt))])
        for i, (p, wt) in enumerate(zip(boundary.points, boundary.weights)):
            w.writerow(["boundary", i, *map(repr, map(float, p)), repr(float(wt))])
