"""Alexandrov Monge-Ampere measure on spacetime grids and weak-solution checks."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import ConvexHull, QhullError

from toricray.core.grid import DEFAULT_TOL_CVX, SpacetimeFn, second_difference_margin
from toricray.core.hj import stencil_mask
from toricray.core.toric import RaySolution
from toricray.errors import ConvexityError, DomainError, GridError

logger = logging.getLogger(__name__)

DEFAULT_MASS_RATIO = 0.6
# Largest sup |grad eta - subgradient| (relative to the subgradient scale) on interior nodes.
DEFAULT_SUBGRADIENT_GAP = 0.25


def spacetime_from_ray(ray: RaySolution, *, perturbation: float = 0.0) -> SpacetimeFn:
    """
    Join ray slices into eta(s, x) with exact subgradients (-udot0(y*), y*).

    With ``perturbation`` = eps the known-bad control eta + eps (s^2 + |x|^2)/2 is returned,
    its subgradients shifted by eps (s, x). A ray whose maximizers are not finite (a control
    that is not a Legendre ray) carries no subgradients.
    """
    data = ray.data
    values = ray.values
    y_star = ray.maximizers
    x_axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(ray.x_box, ray.x_shape)]
    mesh = np.meshgrid(ray.s_grid, *x_axes, indexing="ij")
    sub = None
    if np.all(np.isfinite(y_star)):
        # udot0 at the maximizing dual nodes, read off the samples rather than the spline.
        axes = data.u0.axes
        index = tuple(
            np.clip(np.rint((y_star[..., k] - ax[0]) / (ax[1] - ax[0])), 0, ax.size - 1).astype(int)
            for k, ax in enumerate(axes)
        )
        sigma = -data.udot0.values[index]
        sub = np.concatenate([sigma[..., np.newaxis], y_star], axis=-1)
        if perturbation:
            sub = sub + perturbation * np.stack(mesh, axis=-1)
    if perturbation:
        values = values + 0.5 * perturbation * sum(m**2 for m in mesh)
    return SpacetimeFn(ray.s_grid, ray.x_box, values, sub, convex_hint=True)


@dataclass
class MAMassReport:
    """Per-cell volumes of corner-gradient hulls and their total."""

    cell_masses: np.ndarray = field(repr=False)
    total: float
    h: float
    level: int = 0
    subgradient_gap: float | None = None

    @property
    def max_cell(self) -> float:
        return float(np.max(self.cell_masses)) if self.cell_masses.size else 0.0

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "total_mass": self.total,
            "max_cell": self.max_cell,
            "level": self.level,
            "subgradient_gap": self.subgradient_gap,
        }


def _value_gradients(eta: SpacetimeFn) -> np.ndarray:
    coords = [eta.s_grid, *eta.x_axes]
    grads = np.gradient(eta.values, *coords, edge_order=2)
    return np.stack(grads, axis=-1)


def subgradient_gap(eta: SpacetimeFn, grads: np.ndarray | None = None) -> float | None:
    """
    Sup over interior nodes of |grad eta - subgradient|, relative to max(1, sup |subgradient|).

    ``grads`` are the finite-difference gradients of the values; None without subgradients.
    """
    if eta.subgradients is None:
        return None
    if grads is None:
        grads = _value_gradients(eta)
    inner = tuple(slice(1, -1) for _ in range(eta.values.ndim))
    sub = eta.subgradients[inner]
    gap = np.max(np.linalg.norm(grads[inner] - sub, axis=-1))
    return float(gap) / max(1.0, float(np.max(np.abs(sub))))


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _quad_hull_area(p: list[np.ndarray]) -> np.ndarray:
    """Area of the convex hull of four planar points per cell (vectorized)."""
    candidates = []
    # A convex quadrilateral has area |d1 x d2|/2 for its diagonals; the right cyclic order
    # maximizes this, and a point inside the other three leaves a triangle as the hull.
    for a, b, c, d in ((0, 1, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2)):
        candidates.append(0.5 * np.abs(_cross(p[c] - p[a], p[d] - p[b])))
    for a, b, c in itertools.combinations(range(4), 3):
        candidates.append(0.5 * np.abs(_cross(p[b] - p[a], p[c] - p[a])))
    return np.maximum.reduce(candidates)


def alexandrov_mass(
    eta: SpacetimeFn, *, level: int = 0, max_gap: float = DEFAULT_SUBGRADIENT_GAP
) -> MAMassReport:
    """
    Alexandrov Monge-Ampere mass: per cell, the volume of the hull of its corner gradients.

    Corner gradients are finite differences of the values. Attached subgradients only
    cross-check them.

    Raises:
        ConvexityError: eta is not jointly convex (the witnessing node is attached).
        DomainError: the subgradients disagree with the values by more than ``max_gap``.
    """
    margin, node = second_difference_margin(eta.values)
    scale = max(1.0, float(np.max(np.abs(eta.values))))
    if margin < -DEFAULT_TOL_CVX * scale:
        raise ConvexityError(
            f"eta is not jointly convex: second difference {margin:.3e} at node {node}", node
        )
    grads = _value_gradients(eta)
    gap = subgradient_gap(eta, grads)
    if gap is not None and gap > max_gap:
        raise DomainError(f"subgradients disagree with the values: gap {gap:.3e} > {max_gap:g}")
    ndim = eta.values.ndim
    corners = []
    for offset in itertools.product((0, 1), repeat=ndim):
        sl = tuple(slice(o, n - 1 + o) for o, n in zip(offset, eta.values.shape))
        corners.append(grads[sl])

    if ndim == 2:
        masses = _quad_hull_area(corners)
    elif ndim == 3:
        stacked = np.stack(corners, axis=-2)
        cells = stacked.reshape(-1, 8, 3)
        masses = np.zeros(cells.shape[0])
        for i, pts in enumerate(cells):
            try:
                masses[i] = ConvexHull(pts).volume
            except QhullError:
                masses[i] = 0.0
        masses = masses.reshape(stacked.shape[:-2])
    else:
        raise DomainError(f"unsupported spacetime dimension {ndim}")
    total = float(np.sum(masses))
    return MAMassReport(masses, total, float(np.max(eta.spacing)), level, gap)


def smooth_mass(eta: SpacetimeFn) -> float:
    """Quadrature of det Hess eta over the grid; equals the Alexandrov mass for smooth eta."""
    coords = [eta.s_grid, *eta.x_axes]
    first = np.gradient(eta.values, *coords, edge_order=2)
    ndim = eta.values.ndim
    hess = np.empty(eta.values.shape + (ndim, ndim))
    for k, g in enumerate(first):
        for l, gl in enumerate(np.gradient(g, *coords, edge_order=2)):
            hess[..., k, l] = gl
    det = np.linalg.det(0.5 * (hess + np.swapaxes(hess, -1, -2)))
    out = det
    for ax in reversed(coords):
        out = trapezoid(out, ax, axis=-1)
    return float(out)


@dataclass
class WeakSolutionReport:
    """Alexandrov masses under grid refinement (coarse to fine)."""

    levels: list[MAMassReport]
    ratios: list[float]
    order_estimate: float
    passed: bool
    mass_ratio: float
    volume: float

    def to_dict(self) -> dict:
        return {
            "levels": [lvl.to_dict() for lvl in self.levels],
            "ratios": self.ratios,
            "order_estimate": self.order_estimate,
            "passed": self.passed,
            "mass_ratio": self.mass_ratio,
            "volume": self.volume,
        }


def weak_solution_check(
    ray: RaySolution,
    *,
    levels: int = 3,
    perturbation: float = 0.0,
    mass_ratio: float = DEFAULT_MASS_RATIO,
    max_gap: float = DEFAULT_SUBGRADIENT_GAP,
) -> WeakSolutionReport:
    """
    Check that the Alexandrov mass of the ray vanishes under refinement.

    The ray grid is the finest level; coarser levels keep every 2nd, 4th, ... node, which
    equals the discrete ray computed on the coarser grid. Passes when every refinement
    shrinks the mass by at least ``mass_ratio`` (or the mass is already zero). The
    subgradient cross-check runs on the finest level.
    """
    if levels < 2:
        raise DomainError("weak_solution_check needs at least two refinement levels")
    eta = spacetime_from_ray(ray, perturbation=perturbation)
    floor = 1e-14 * eta.volume
    reports = []
    for k in range(levels):
        stride = 2 ** (levels - 1 - k)
        gap = max_gap if stride == 1 else np.inf
        reports.append(alexandrov_mass(eta.subsample(stride), level=k, max_gap=gap))
    ratios = []
    orders = []
    for coarse, fine in zip(reports, reports[1:]):
        if coarse.total <= floor:
            ratios.append(0.0 if fine.total <= floor else np.inf)
            continue
        ratio = fine.total / coarse.total
        ratios.append(float(ratio))
        if ratio > 0:
            orders.append(-np.log2(ratio))
    order = float(np.mean(orders)) if orders else np.inf
    passed = all(r <= mass_ratio for r in ratios)
    logger.info(
        "Alexandrov masses %s (order %.2f)", [f"{r.total:.3e}" for r in reports], order
    )
    return WeakSolutionReport(reports, ratios, order, passed, mass_ratio, eta.volume)


@dataclass
class GraphReport:
    """Distance of spacetime gradients from the graph {(-udot0(y), y)}."""

    sup_deviation: float
    argmax: list[float] | None
    excluded_nodes: int = 0
    checked_nodes: int = 0

    def to_dict(self) -> dict:
        return {
            "sup_deviation": self.sup_deviation,
            "argmax": self.argmax,
            "excluded_nodes": self.excluded_nodes,
            "checked_nodes": self.checked_nodes,
        }


_S_WEIGHTS = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def gradient_graph_check(ray: RaySolution) -> GraphReport:
    """
    Sup of |sigma + udot0(xi)| with (sigma, xi) the discrete spacetime gradient of psi_L.

    sigma is a five-point difference in s, xi comes from ``np.gradient`` in x. The sup runs
    over s-slices 2 .. n-3 and interior x nodes, skipping nodes whose stencil reaches a
    maximizer on the boundary of the dual grid (the affine part of a slice).
    """
    data = ray.data
    s_grid = ray.s_grid
    if float(s_grid[-1]) >= ray.lifespan:
        raise DomainError(f"ray reaches s={s_grid[-1]:g}, beyond the lifespan {ray.lifespan:g}")
    steps = np.diff(s_grid)
    if s_grid.size < 5 or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise GridError("the graph check needs a uniform s-grid with at least five nodes")
    ds = float(steps[0])
    x_axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(ray.x_box, ray.x_shape)]
    n = s_grid.size
    core = (slice(2, -2),) + tuple(slice(1, -1) for _ in x_axes)
    sigma = sum(w * ray.values[j : n - 4 + j] for j, w in enumerate(_S_WEIGHTS) if w) / ds
    sigma = sigma[(slice(None),) + core[1:]]
    if len(x_axes) == 1:
        grads = [np.gradient(ray.values, x_axes[0], axis=1)]
    else:
        grads = np.gradient(ray.values, *x_axes, axis=tuple(range(1, len(x_axes) + 1)))
    xi = np.stack([g[core] for g in grads], axis=-1)
    lo, hi = data.u0.lower, data.u0.upper
    pad = 1e-9 * np.maximum(1.0, np.abs(np.stack([lo, hi])).max(axis=0))
    escaped = np.any((xi < lo - pad) | (xi > hi + pad), axis=-1)
    if np.any(escaped):
        raise DomainError(f"gradient {xi[escaped][0].tolist()} outside the dual grid")

    y_star = ray.maximizers[(slice(None),) + core[1:]]
    spacing = np.asarray(data.u0.spacing)
    on_edge = np.any(
        (y_star <= lo + 0.5 * spacing) | (y_star >= hi - 0.5 * spacing), axis=-1
    )
    excluded = stencil_mask(on_edge)
    deviation = np.where(excluded, 0.0, np.abs(sigma + data.udot0(np.clip(xi, lo, hi))))
    n_excluded = int(np.count_nonzero(excluded))
    checked = int(excluded.size) - n_excluded
    if checked == 0:
        logger.warning("gradient graph: all %d interior nodes are excluded", n_excluded)
        return GraphReport(np.inf, None, n_excluded, 0)
    idx = np.unravel_index(int(np.argmax(deviation)), deviation.shape)
    where = [float(s_grid[idx[0] + 2])] + [float(ax[i + 1]) for ax, i in zip(x_axes, idx[1:])]
    logger.info("gradient graph deviation %.3e (%d nodes excluded)", deviation[idx], n_excluded)
    return GraphReport(float(deviation[idx]), where, n_excluded, checked)
