"""Grid-based convex analysis: discrete Legendre transforms, derivatives and convexity scans."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from toricray.core.grid import (
    DEFAULT_TOL_CVX,
    Box,
    GridFn,
    as_points,
    normalize_box,
    normalize_shape,
)
from toricray.errors import DomainError, GridError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_TOL_NEWTON = 1e-10
MAX_NEWTON_STEPS = 100
MIN_HESSIAN_NODES = 5


@dataclass
class ConvexityReport:
    """Result of scanning interior nodes for the smallest Hessian eigenvalue."""

    min_margin: float
    argmin_node: tuple[int, ...]
    is_convex: bool
    tol: float

    @property
    def is_strictly_convex(self) -> bool:
        return self.min_margin > self.tol

    def to_dict(self) -> dict:
        return {
            "min_margin": self.min_margin,
            "argmin_node": list(self.argmin_node),
            "is_convex": self.is_convex,
            "tol": self.tol,
        }


def _lower_hull(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Indices of the lower hull of sorted points by monotone chain; collinear points dropped."""
    xs = x.tolist()
    fs = f.tolist()
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (fs[i] - fs[a]) - (fs[b] - fs[a]) * (xs[i] - xs[a])
            if cross > 0:
                break
            hull.pop()
        hull.append(i)
    return np.asarray(hull, dtype=np.intp)


def _conjugate_1d(
    x: np.ndarray, f: np.ndarray, y: np.ndarray, dual_lo: float, dual_hi: float, tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """
    Discrete conjugate max_k [x_k y - f_k] of one sampled line, with its argmax.

    The maximizer for slope y is the hull vertex whose outgoing edge is the first one with
    slope >= y, so ties resolve to the smallest node index.
    """
    hull = _lower_hull(x, f)
    slopes = np.diff(f[hull]) / np.diff(x[hull])
    if slopes.size:
        if slopes[0] < dual_lo - tol:
            raise DomainError(
                f"dual domain too small: gradient {slopes[0]:.6g} below {dual_lo:.6g}"
            )
        if slopes[-1] > dual_hi + tol:
            raise DomainError(
                f"dual domain too small: gradient {slopes[-1]:.6g} above {dual_hi:.6g}"
            )
    arg = hull[np.searchsorted(slopes, y, side="left")]
    return y * x[arg] - f[arg], arg


def legendre_transform_with_argmax(
    f: GridFn, dual_box, dual_shape
) -> tuple[GridFn, np.ndarray]:
    """
    Discrete Legendre-Fenchel transform and the maximizing primal node per dual node.

    Args:
        f: Sampled function.
        dual_box: Box of the dual grid; must contain every hull slope of f.
        dual_shape: Node count per dual axis.

    Returns:
        (g, argmax) where g(y) = max over nodes x of [<x, y> - f(x)] and argmax has shape
        ``(*dual_shape, dim)`` holding primal node indices.
    """
    dual_shape = normalize_shape(dual_shape)
    dual_box = normalize_box(dual_box, f.dim)
    if len(dual_shape) != f.dim:
        raise GridError(f"dual shape {dual_shape} does not match dimension {f.dim}")
    y_axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(dual_box, dual_shape)]
    tol = DEFAULT_TOL_CVX * max(1.0, *(abs(v) for pair in dual_box for v in pair))
    x_axes = f.axes

    if f.dim == 1:
        (lo, hi), y = dual_box[0], y_axes[0]
        g, arg = _conjugate_1d(x_axes[0], f.values, y, lo, hi, tol)
        return GridFn(dual_box, g, convex_hint=True), arg[:, np.newaxis]

    # Separable in two passes: conjugate each x1-row over x2, then conjugate -h over x1.
    (lo1, hi1), (lo2, hi2) = dual_box
    n1 = f.shape[0]
    h = np.empty((n1, dual_shape[1]))
    arg2 = np.empty((n1, dual_shape[1]), dtype=np.intp)
    for i in range(n1):
        h[i], arg2[i] = _conjugate_1d(x_axes[1], f.values[i], y_axes[1], lo2, hi2, tol)
    g = np.empty(dual_shape)
    argmax = np.empty(dual_shape + (2,), dtype=np.intp)
    for j in range(dual_shape[1]):
        g[:, j], arg1 = _conjugate_1d(x_axes[0], -h[:, j], y_axes[0], lo1, hi1, tol)
        argmax[:, j, 0] = arg1
        argmax[:, j, 1] = arg2[arg1, j]
    return GridFn(dual_box, g, convex_hint=True), argmax


def legendre_transform(f: GridFn, dual_box, dual_shape) -> GridFn:
    """Discrete Legendre-Fenchel transform g(y) = max over grid nodes of <x, y> - f(x)."""
    return legendre_transform_with_argmax(f, dual_box, dual_shape)[0]


def gradient_range(f: GridFn) -> Box:
    """Per-axis [min, max] of forward differences (the closed discrete gradient range)."""
    out = []
    for k, h in enumerate(f.spacing):
        diffs = np.diff(f.values, axis=k) / h
        out.append((float(diffs.min()), float(diffs.max())))
    return tuple(out)


def biconjugate(f: GridFn) -> GridFn:
    """
    Discrete convex envelope f** on f's own grid.

    The intermediate dual grid spans the discrete gradient range with f's shape.
    """
    box = []
    for lo, hi in gradient_range(f):
        if hi - lo < 1e-12 * max(1.0, abs(lo), abs(hi)):
            lo, hi = lo - 1.0, hi + 1.0
        box.append((lo, hi))
    g = legendre_transform(f, box, f.shape)
    return legendre_transform(g, f.box, f.shape)


def contact_set(f: GridFn) -> np.ndarray:
    """
    Nodes where f touches its convex envelope, as a boolean mask of f's shape.

    These dual nodes are the slopes realized by the conjugate f*, so the mask gives the
    gradient image of f* independently of any primal grid. The envelope is the lower hull
    of the samples: a monotone chain in 1-D, Qhull facets in 2-D.
    """
    v = f.values
    if f.dim == 1:
        x = f.axes[0]
        hull = _lower_hull(x, v)
        envelope = np.interp(x, x[hull], v[hull])
        return v <= envelope + f.tol_cvx
    nodes = f.nodes().reshape(-1, 2)
    flat = v.reshape(-1)
    try:
        hull = ConvexHull(np.column_stack([nodes, flat]))
    except QhullError:
        # Coplanar samples: f is affine.
        return np.ones(f.shape, dtype=bool)
    eq = hull.equations[hull.equations[:, 2] < -1e-12]
    # Each lower facet a.y + c z + d = 0 supports the envelope z = -(a.y + d) / c.
    planes = -(nodes @ eq[:, :2].T + eq[:, 3]) / eq[:, 2]
    envelope = np.max(planes, axis=1)
    return (flat <= envelope + f.tol_cvx).reshape(f.shape)


def _require_inside(f: GridFn, pts: np.ndarray, margin_cells: float) -> None:
    ok = f.inside(pts, margin_cells=margin_cells)
    if not np.all(ok):
        bad = pts[~ok][0]
        raise DomainError(
            f"point {bad.tolist()} is closer than {margin_cells:g} cell(s) to the grid boundary"
        )


def gradient(f: GridFn, x) -> np.ndarray:
    """
    Central-difference gradient at points at least one cell inside the box.

    At a kink on the grid this is the midpoint of the one-sided differences.
    Returns an array of shape ``(..., dim)``.
    """
    pts = as_points(x, f.dim)
    _require_inside(f, pts, 1.0)
    out = np.empty(pts.shape)
    for k, h in enumerate(f.spacing):
        step = np.zeros(f.dim)
        step[k] = h
        out[..., k] = (f(pts + step) - f(pts - step)) / (2.0 * h)
    return out


def hessian(f: GridFn, x, *, margin: float = 2.0) -> np.ndarray:
    """Central second differences ``margin`` cells inside the box; shape ``(..., d, d)``."""
    if min(f.shape) < MIN_HESSIAN_NODES:
        raise GridError(f"grid too coarse for Hessians: shape {f.shape}")
    pts = as_points(x, f.dim)
    _require_inside(f, pts, margin)
    h = f.spacing
    center = f(pts)
    out = np.empty(pts.shape[:-1] + (f.dim, f.dim))
    for k in range(f.dim):
        ek = np.zeros(f.dim)
        ek[k] = h[k]
        out[..., k, k] = (f(pts + ek) - 2.0 * center + f(pts - ek)) / h[k] ** 2
        for l in range(k + 1, f.dim):
            el = np.zeros(f.dim)
            el[l] = h[l]
            mixed = (
                f(pts + ek + el) - f(pts + ek - el) - f(pts - ek + el) + f(pts - ek - el)
            ) / (4.0 * h[k] * h[l])
            out[..., k, l] = out[..., l, k] = mixed
    return out


def hessian_field(f: GridFn) -> np.ndarray:
    """Hessians at every interior node from nodal second differences, shape ``(*inner, d, d)``."""
    if min(f.shape) < MIN_HESSIAN_NODES:
        raise GridError(f"grid too coarse for Hessians: shape {f.shape}")
    v = f.values
    h = f.spacing
    if f.dim == 1:
        d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h[0] ** 2
        return d2[:, np.newaxis, np.newaxis]
    inner = (slice(1, -1), slice(1, -1))
    out = np.empty((v.shape[0] - 2, v.shape[1] - 2, 2, 2))
    out[..., 0, 0] = (v[2:, 1:-1] - 2.0 * v[inner] + v[:-2, 1:-1]) / h[0] ** 2
    out[..., 1, 1] = (v[1:-1, 2:] - 2.0 * v[inner] + v[1:-1, :-2]) / h[1] ** 2
    out[..., 0, 1] = out[..., 1, 0] = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (
        4.0 * h[0] * h[1]
    )
    return out


def min_eigenvalue(hess: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of a stack of 1x1 or symmetric 2x2 matrices."""
    if hess.shape[-1] == 1:
        return hess[..., 0, 0]
    a, b, c = hess[..., 0, 0], hess[..., 0, 1], hess[..., 1, 1]
    return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)


def convexity_report(f: GridFn, *, tol: float | None = None) -> ConvexityReport:
    """
    Scan interior nodes for the smallest Hessian eigenvalue.

    The default tolerance is the relative convexity tolerance of the grid expressed in
    Hessian units (divided by the squared finest spacing).
    """
    margins = min_eigenvalue(hessian_field(f))
    idx = np.unravel_index(int(np.argmin(margins)), margins.shape)
    min_margin = float(margins[idx])
    if tol is None:
        tol = f.tol_cvx / float(np.min(f.spacing)) ** 2
    return ConvexityReport(
        min_margin=min_margin,
        argmin_node=tuple(int(i) + 1 for i in idx),
        is_convex=min_margin >= -tol,
        tol=tol,
    )


def _nodal_gradients(f: GridFn) -> tuple[np.ndarray, np.ndarray]:
    """Interior node coordinates and their central-difference gradients, flattened."""
    inner = tuple(slice(1, -1) for _ in range(f.dim))
    pts = f.nodes()[inner].reshape(-1, f.dim)
    grads = np.stack(
        [
            (np.roll(f.values, -1, axis=k) - np.roll(f.values, 1, axis=k))[inner] / (2.0 * h)
            for k, h in enumerate(f.spacing)
        ],
        axis=-1,
    ).reshape(-1, f.dim)
    return pts, grads


def invert_gradient(f: GridFn, y, *, tol: float = DEFAULT_TOL_NEWTON) -> np.ndarray:
    """
    Solve grad f(x) = y by damped Newton iteration.

    Args:
        f: Strictly convex sampled function.
        y: Target gradient(s), shape ``(..., dim)`` (bare scalars allowed in 1-D).
        tol: Absolute tolerance on the gradient residual.

    Returns:
        Points x with the same leading shape as y.
    """
    targets = as_points(y, f.dim)
    lead = targets.shape[:-1]
    targets = targets.reshape(-1, f.dim)
    ranges = np.array(gradient_range(f))
    outside = np.any((targets < ranges[:, 0]) | (targets > ranges[:, 1]), axis=-1)
    if np.any(outside):
        bad = targets[outside][0]
        raise DomainError(
            f"target gradient {bad.tolist()} outside the gradient range {ranges.tolist()}"
        )

    nodes, grads = _nodal_gradients(f)
    _, nearest = cKDTree(grads).query(targets)
    x = nodes[nearest].copy()
    lo = f.lower + f.spacing
    hi = f.upper - f.spacing

    def residual(points: np.ndarray) -> np.ndarray:
        return gradient(f, points) - targets_active

    active = np.arange(len(targets))
    for step in range(MAX_NEWTON_STEPS):
        targets_active = targets[active]
        r = residual(x[active])
        norm = np.linalg.norm(r, axis=-1)
        done = norm <= tol
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "newton step %d: %d active, max residual %.3e", step, active.size, norm.max()
            )
        active, r, norm = active[~done], r[~done], norm[~done]
        if active.size == 0:
            break
        targets_active = targets[active]
        hess = hessian(f, x[active], margin=1.0)
        delta = np.linalg.solve(hess, r[..., np.newaxis])[..., 0]
        t = np.ones(active.size)
        trial = np.clip(x[active] - delta, lo, hi)
        for _ in range(30):
            worse = np.linalg.norm(residual(trial), axis=-1) >= norm
            if not np.any(worse):
                break
            t[worse] *= 0.5
            trial[worse] = np.clip(x[active][worse] - t[worse, None] * delta[worse], lo, hi)
        x[active] = trial
    else:
        targets_active = targets[active]
        worst = float(np.max(np.linalg.norm(residual(x[active]), axis=-1)))
        if worst > tol:
            raise NumericalError(
                f"Newton did not converge in {MAX_NEWTON_STEPS} steps (residual {worst:.3e})",
                residual=worst,
            )
    return x.reshape(lead + (f.dim,))


def hessian_duality_defect(f: GridFn, points, *, coarsen: int = 10) -> float:
    """
    Sup over points of ||Hess(f*)(grad f(x)) . Hess f(x) - I||.

    The conjugate is sampled on a dual grid ``coarsen`` times coarser than f's so that its
    second differences average over the piecewise-affine structure of the discrete transform.
    """
    pts = as_points(points, f.dim)
    dual_shape = tuple(max(MIN_HESSIAN_NODES + 4, (n - 1) // coarsen + 1) for n in f.shape)
    g = legendre_transform(f, gradient_range(f), dual_shape)
    y = gradient(f, pts)
    product = hessian(g, y) @ hessian(f, pts)
    return float(np.max(np.abs(product - np.eye(f.dim))))
