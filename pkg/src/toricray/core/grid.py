"""Grid-sampled functions, moment polytopes and spacetime samples."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline, make_interp_spline
from scipy.optimize import linprog

from toricray.errors import ConvexityError, DomainError, GridError

# Relative tolerance for discrete convexity (scaled by the largest |value|).
DEFAULT_TOL_CVX = 1e-9
MIN_NODES = 4

Box = tuple[tuple[float, float], ...]


def normalize_box(box: Sequence, dim: int | None = None) -> Box:
    """Coerce ``[lo, hi]`` or ``[[lo, hi], ...]`` into a tuple of float pairs."""
    arr = np.asarray(box, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GridError(f"box must be a list of [lo, hi] pairs, got {box!r}")
    if dim is not None and arr.shape[0] != dim:
        raise GridError(f"box has {arr.shape[0]} axes, expected {dim}")
    return tuple((float(lo), float(hi)) for lo, hi in arr)


def normalize_shape(shape: int | Sequence[int]) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(n) for n in shape)


def as_points(x, dim: int) -> np.ndarray:
    """Return ``x`` as an array of points with trailing axis ``dim``.

    In one dimension bare scalars and flat arrays are accepted as lists of points.
    """
    pts = np.asarray(x, dtype=float)
    if dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., np.newaxis]
    if pts.shape[-1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {pts.shape}")
    return pts


def _shifted(arr: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    return arr[tuple(slice(1 + o, arr.shape[k] - 1 + o) for k, o in enumerate(offset))]


def second_difference_margin(values: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Smallest raw second difference along every axis and every diagonal pair.

    Returns the minimum and the (full-array) index of the node where it occurs.
    """
    arr = np.asarray(values, dtype=float)
    n = arr.ndim
    directions: list[tuple[int, ...]] = []
    for k in range(n):
        directions.append(tuple(1 if j == k else 0 for j in range(n)))
    for k, l in itertools.combinations(range(n), 2):
        for sign in (1, -1):
            directions.append(tuple(1 if j == k else (sign if j == l else 0) for j in range(n)))

    center = _shifted(arr, (0,) * n)
    best = np.inf
    where: tuple[int, ...] = (0,) * n
    for v in directions:
        minus = tuple(-c for c in v)
        d2 = _shifted(arr, v) - 2.0 * center + _shifted(arr, minus)
        idx = np.unravel_index(int(np.argmin(d2)), d2.shape)
        if d2[idx] < best:
            best = float(d2[idx])
            where = tuple(int(i) + 1 for i in idx)
    return best, where


@dataclass(frozen=True, eq=False)
class GridFn:
    """A scalar function sampled on a uniform rectangular grid over a box in R^d, d in {1, 2}."""

    box: Box
    values: np.ndarray
    convex_hint: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        box = normalize_box(self.box, values.ndim)
        if values.ndim not in (1, 2):
            raise GridError(f"only dimensions 1 and 2 are supported, got {values.ndim}")
        if min(values.shape) < MIN_NODES:
            raise GridError(f"every axis needs at least {MIN_NODES} nodes, got {values.shape}")
        for lo, hi in box:
            if not hi > lo:
                raise GridError(f"degenerate box axis [{lo}, {hi}]")
        if not np.all(np.isfinite(values)):
            raise GridError("values must be finite at every node")
        values.setflags(write=False)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "values", values)
        if self.convex_hint:
            margin, node = second_difference_margin(values)
            if margin < -self.tol_cvx:
                raise ConvexityError(
                    f"convex_hint set but second difference {margin:.3e} at node {node}", node
                )

    @classmethod
    def from_function(
        cls,
        func: Callable[..., np.ndarray],
        box: Sequence,
        shape: int | Sequence[int],
        *,
        convex_hint: bool = False,
    ) -> GridFn:
        """Sample ``func(*coords)`` on the grid (coordinates broadcast in ij order)."""
        shape = normalize_shape(shape)
        box = normalize_box(box, len(shape))
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        values = np.broadcast_to(np.asarray(func(*mesh), dtype=float), shape)
        return cls(box, values, convex_hint=convex_hint)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.box, self.shape)])

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.box])

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.shape)]

    @property
    def value_scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.values))))

    @property
    def tol_cvx(self) -> float:
        return DEFAULT_TOL_CVX * self.value_scale

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def with_values(self, values: np.ndarray, *, convex_hint: bool = False) -> GridFn:
        return GridFn(self.box, values, convex_hint=convex_hint)

    def same_geometry(self, other: GridFn, *, rtol: float = 1e-12) -> bool:
        return self.shape == other.shape and np.allclose(
            np.array(self.box), np.array(other.box), rtol=rtol, atol=rtol
        )

    def inside(self, points, *, margin_cells: float = 0.0) -> np.ndarray:
        """True where points lie at least ``margin_cells`` cells inside the box."""
        pts = as_points(points, self.dim)
        pad = margin_cells * self.spacing * (1.0 - 1e-9)
        return np.all((pts >= self.lower + pad) & (pts <= self.upper - pad), axis=-1)

    @cached_property
    def _spline(self):
        if self.dim == 1:
            return make_interp_spline(self.axes[0], self.values, k=3)
        ax0, ax1 = self.axes
        return RectBivariateSpline(ax0, ax1, self.values, kx=3, ky=3, s=0)

    def __call__(self, points) -> np.ndarray:
        """Cubic-spline value at arbitrary points (exact at nodes)."""
        pts = as_points(points, self.dim)
        lead = pts.shape[:-1]
        flat = pts.reshape(-1, self.dim)
        if self.dim == 1:
            out = self._spline(flat[:, 0])
        else:
            out = self._spline.ev(flat[:, 0], flat[:, 1])
        return np.asarray(out, dtype=float).reshape(lead)

    def to_dict(self) -> dict:
        """Serialization header (the values go to the CSV body)."""
        return {
            "dim": self.dim,
            "box": [list(pair) for pair in self.box],
            "shape": list(self.shape),
            "convex_hint": self.convex_hint,
        }


@dataclass(frozen=True, eq=False)
class Polytope:
    """Moment polytope ``{y : <y, v_j> <= lambda_j for all j}`` with integer normals."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self) -> None:
        normals = np.atleast_2d(np.array(self.normals, dtype=float))
        offsets = np.array(self.offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0]:
            raise DomainError("polytope needs one offset per normal")
        if not np.allclose(normals, np.round(normals)):
            raise DomainError("polytope normals must be integer vectors")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        # Touch the cached geometry so invalid polytopes fail on construction.
        if self.inradius <= 0.0:
            raise DomainError("polytope has empty interior")

    @classmethod
    def interval(cls, lo: float, hi: float) -> Polytope:
        return cls(np.array([[1.0], [-1.0]]), np.array([hi, -lo]))

    @classmethod
    def box(cls, bounds: Sequence) -> Polytope:
        bounds = normalize_box(bounds)
        normals, offsets = [], []
        for k, (lo, hi) in enumerate(bounds):
            e = np.zeros(len(bounds))
            e[k] = 1.0
            normals.extend([e, -e])
            offsets.extend([hi, -lo])
        return cls(np.array(normals), np.array(offsets))

    @classmethod
    def from_dict(cls, data: dict) -> Polytope:
        try:
            return cls(np.array(data["normals"]), np.array(data["offsets"]))
        except KeyError as exc:
            raise DomainError(f"polytope needs 'normals' and 'offsets' ({exc})") from exc

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @cached_property
    def bounding_box(self) -> Box:
        bounds = []
        for k in range(self.dim):
            ends = []
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[k] = sign
                res = linprog(c, A_ub=self.normals, b_ub=self.offsets, bounds=(None, None))
                if res.status == 3:
                    raise DomainError("polytope is unbounded")
                if res.status != 0:
                    raise DomainError("polytope is empty")
                ends.append(float(res.x[k]))
            bounds.append((ends[0], ends[1]))
        return tuple(bounds)

    @cached_property
    def inradius(self) -> float:
        """Radius of the largest inscribed ball (Chebyshev radius)."""
        _ = self.bounding_box
        norms = np.linalg.norm(self.normals, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        a_ub = np.hstack([self.normals, norms[:, None]])
        bounds = [(None, None)] * self.dim + [(0, None)]
        res = linprog(c, A_ub=a_ub, b_ub=self.offsets, bounds=bounds)
        if res.status != 0:
            raise DomainError("polytope is empty")
        return float(res.x[-1])

    def contains(self, points, *, margin: float = 0.0, tol: float = 1e-9) -> np.ndarray:
        """True where points satisfy every facet inequality with room ``margin``."""
        pts = as_points(points, self.dim)
        norms = np.linalg.norm(self.normals, axis=1)
        slack = pts @ self.normals.T - self.offsets + margin * norms
        return np.all(slack <= tol, axis=-1)

    def contains_box(self, box: Box, *, tol: float = 1e-9) -> bool:
        corners = np.array(list(itertools.product(*box)))
        return bool(np.all(self.contains(corners, tol=tol)))

    def sample(self, spacing: float, *, margin: float = 0.0) -> np.ndarray:
        """Lattice points with the given spacing inside the polytope shrunk by ``margin``."""
        axes = [
            np.arange(lo + margin, hi - margin + 0.5 * spacing, spacing)
            for lo, hi in self.bounding_box
        ]
        if any(len(a) == 0 for a in axes):
            return np.empty((0, self.dim))
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return pts[self.contains(pts, margin=margin)]

    def to_dict(self) -> dict:
        return {
            "normals": [[int(round(v)) for v in row] for row in self.normals],
            "offsets": [float(v) for v in self.offsets],
        }


@dataclass(frozen=True, eq=False)
class SpacetimeFn:
    """Samples of eta(s, x) on a uniform s-grid times a uniform x-grid.

    ``subgradients`` (optional) holds, per node, an exact subgradient ordered (d/ds, d/dx...).
    """

    s_grid: np.ndarray
    x_box: Box
    values: np.ndarray
    subgradients: np.ndarray | None = None
    convex_hint: bool = False
    x_shape: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        s_grid = np.array(self.s_grid, dtype=float)
        values = np.array(self.values, dtype=float)
        x_shape = values.shape[1:]
        x_box = normalize_box(self.x_box, len(x_shape))
        if s_grid.ndim != 1 or s_grid.size != values.shape[0]:
            raise GridError("values must be indexed (s, x...) with one row per s")
        if s_grid.size < 3 or min(x_shape) < 3:
            raise GridError("spacetime grids need at least three nodes per axis")
        steps = np.diff(s_grid)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise GridError("s_grid must be uniform and increasing")
        if not np.all(np.isfinite(values)):
            raise GridError("values must be finite")
        object.__setattr__(self, "s_grid", s_grid)
        object.__setattr__(self, "x_box", x_box)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "x_shape", tuple(x_shape))
        if self.subgradients is not None:
            sub = np.array(self.subgradients, dtype=float)
            if sub.shape != values.shape + (values.ndim,):
                raise GridError("subgradients must have shape values.shape + (d + 1,)")
            object.__setattr__(self, "subgradients", sub)
        if self.convex_hint:
            margin, node = second_difference_margin(values)
            scale = max(1.0, float(np.max(np.abs(values))))
            if margin < -DEFAULT_TOL_CVX * scale:
                raise ConvexityError(
                    f"not jointly convex: second difference {margin:.3e} at node {node}", node
                )

    @property
    def dim(self) -> int:
        """Spatial dimension d (the spacetime dimension is d + 1)."""
        return len(self.x_shape)

    @property
    def ds(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0])

    @property
    def x_spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.x_box, self.x_shape)])

    @property
    def spacing(self) -> np.ndarray:
        return np.concatenate([[self.ds], self.x_spacing])

    @property
    def x_axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.x_box, self.x_shape)]

    @property
    def volume(self) -> float:
        span = float(self.s_grid[-1] - self.s_grid[0])
        return span * float(np.prod([hi - lo for lo, hi in self.x_box]))

    def subsample(self, stride: int) -> SpacetimeFn:
        """Keep every ``stride``-th node along every axis (endpoints included)."""
        for n in (self.s_grid.size, *self.x_shape):
            if (n - 1) % stride:
                raise GridError(f"grid with {n} nodes cannot be coarsened by {stride}")
        sl = (slice(None, None, stride),) * (self.dim + 1)
        sub = None if self.subgradients is None else self.subgradients[sl]
        return SpacetimeFn(
            self.s_grid[::stride], self.x_box, self.values[sl], sub, self.convex_hint
        )
