"""Toric Cauchy data, the convex lifespan and the Legendre-transform geodesic ray."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from toricray.core.convex import (
    contact_set,
    convexity_report,
    gradient_range,
    hessian_field,
    invert_gradient,
    legendre_transform,
    legendre_transform_with_argmax,
    min_eigenvalue,
)
from toricray.core.grid import (
    Box,
    GridFn,
    Polytope,
    as_points,
    normalize_box,
)
from toricray.errors import ConvexityError, DomainError

logger = logging.getLogger(__name__)

# Generalized eigenvalues below this count as "never loses convexity".
_LAMBDA_FLOOR = 1e-8
DEFAULT_FLAT_FRACTION = 0.05
DEFAULT_COVERAGE_FRACTION = 0.02


@dataclass(frozen=True, eq=False)
class CauchyData:
    """Symplectic-potential Cauchy data (u0, udot0) on a box inside the moment polytope."""

    polytope: Polytope
    u0: GridFn
    udot0: GridFn
    psi0: GridFn | None = None
    psidot0: GridFn | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.u0.same_geometry(self.udot0):
            raise DomainError("u0 and udot0 must share grid geometry")
        if self.polytope.dim != self.u0.dim:
            raise DomainError(
                f"polytope dimension {self.polytope.dim} does not match"
                f" grid dimension {self.u0.dim}"
            )
        if not self.polytope.contains_box(self.u0.box):
            raise DomainError(f"grid box {self.u0.box} is not inside the polytope")
        report = convexity_report(self.u0)
        if not report.is_strictly_convex:
            raise ConvexityError(
                f"u0 is not strictly convex (min Hessian eigenvalue {report.min_margin:.3e})",
                report.argmin_node,
            )
        if (self.psi0 is None) != (self.psidot0 is None):
            raise DomainError("psi0 and psidot0 must be given together")

    @classmethod
    def from_functions(
        cls,
        polytope: Polytope,
        u0: Callable[..., np.ndarray],
        udot0: Callable[..., np.ndarray],
        box: Sequence,
        shape: int | Sequence[int],
        *,
        name: str = "custom",
    ) -> CauchyData:
        return cls(
            polytope,
            GridFn.from_function(u0, box, shape),
            GridFn.from_function(udot0, box, shape),
            name=name,
        )

    @property
    def dim(self) -> int:
        return self.u0.dim

    @property
    def dual_box(self) -> Box:
        return self.u0.box

    @property
    def shape(self) -> tuple[int, ...]:
        return self.u0.shape

    @property
    def primal_box(self) -> Box:
        """Range of grad u0, i.e. the x-region where grad psi0 is defined on this grid."""
        return gradient_range(self.u0)

    def u_s(self, s: float) -> GridFn:
        """u0 + s * udot0 on the dual grid."""
        return self.u0.with_values(self.u0.values + s * self.udot0.values)

    def grad_psi0(self, x) -> np.ndarray:
        """grad psi0 = (grad u0)^-1, by Newton inversion."""
        return invert_gradient(self.u0, x)

    def psi0_value(self, x) -> np.ndarray:
        y = self.grad_psi0(x)
        pts = as_points(x, self.dim)
        return np.sum(pts * y, axis=-1) - self.u0(y)

    def psidot0_value(self, x) -> np.ndarray:
        """psidot0 = -udot0 o grad psi0."""
        return -self.udot0(self.grad_psi0(x))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "polytope": self.polytope.to_dict(),
            "grid": self.u0.to_dict(),
            "has_primal": self.psi0 is not None,
        }


@dataclass
class LifespanScan:
    """Per-node critical times and their infimum, the convex lifespan."""

    lifespan: float
    argmin_node: tuple[int, ...] | None
    location: list[float] | None
    s_crit: np.ndarray = field(repr=False)

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.lifespan))

    def to_dict(self) -> dict:
        return {
            "lifespan": self.lifespan if self.is_finite else "inf",
            "argmin_node": None if self.argmin_node is None else list(self.argmin_node),
            "location": self.location,
        }


def lifespan_scan(data: CauchyData) -> LifespanScan:
    """
    Critical time per interior node: sup{s : Hess u0 + s Hess udot0 is positive semidefinite}.

    Nodes closer than two cells to the grid boundary are skipped, where symplectic potentials
    blow up.

    Solved as the generalized eigenproblem with L = chol(Hess u0): s_crit = 1/lambda_max of
    L^-1 (-Hess udot0) L^-T, infinite when lambda_max <= 0.
    """
    # hessian_field already drops one boundary layer.
    inner = tuple(slice(1, -1) for _ in range(data.dim))
    a = hessian_field(data.u0)[inner]
    b = hessian_field(data.udot0)[inner]
    margins = min_eigenvalue(a)
    if np.min(margins) <= 0:
        idx = np.unravel_index(int(np.argmin(margins)), margins.shape)
        raise ConvexityError(
            "u0 is not strictly convex", tuple(int(i) + 2 for i in idx)
        )
    chol = np.linalg.cholesky(a)
    linv = np.linalg.inv(chol)
    c = linv @ (-b) @ np.swapaxes(linv, -1, -2)
    lam = np.linalg.eigvalsh(c)[..., -1]
    with np.errstate(divide="ignore"):
        s_crit = np.where(lam > _LAMBDA_FLOOR, 1.0 / np.maximum(lam, _LAMBDA_FLOOR), np.inf)
    if not np.any(np.isfinite(s_crit)):
        logger.info("no convexity obstruction found for %s", data.name)
        return LifespanScan(np.inf, None, None, s_crit)
    idx = np.unravel_index(int(np.argmin(s_crit)), s_crit.shape)
    node = tuple(int(i) + 2 for i in idx)
    location = [float(ax[i]) for ax, i in zip(data.u0.axes, node)]
    lifespan = float(s_crit[idx])
    logger.info("convex lifespan %.6g at y=%s", lifespan, location)
    return LifespanScan(lifespan, node, location, s_crit)


def convex_lifespan(data: CauchyData) -> float:
    """Convex lifespan T = sup{s : u0 + s udot0 convex}; ``inf`` when udot0 never obstructs."""
    return lifespan_scan(data).lifespan


def smooth_for_all_time(data: CauchyData) -> bool:
    """True when udot0 is convex, so the ray never leaves the admissible class."""
    return convexity_report(data.udot0).is_convex


def _convex_dual_shape(psi0: GridFn) -> tuple[int, ...]:
    # Dual spacing no finer than the largest slope increment keeps every second
    # difference of the discrete conjugate positive.
    shape = []
    for k, (h, (lo, hi)) in enumerate(zip(psi0.spacing, gradient_range(psi0))):
        increments = np.diff(np.diff(psi0.values, axis=k) / h, axis=k)
        step = float(np.max(increments))
        n = psi0.shape[k] if step <= 0 else int((hi - lo) / step) + 1
        shape.append(int(min(psi0.shape[k], max(n, 5))))
    return tuple(shape)


def to_symplectic(
    psi0: GridFn,
    psidot0: GridFn,
    polytope: Polytope,
    *,
    dual_shape: Sequence[int] | None = None,
    name: str = "custom",
) -> CauchyData:
    """
    Convert Kahler-side data (psi0, psidot0) to symplectic potentials.

    Args:
        psi0: Strictly convex Kahler potential sampled on an x-box.
        psidot0: Its time derivative on the same grid.
        polytope: Moment polytope that must contain the gradient image of psi0.
        dual_shape: Dual grid shape; by default as fine as keeps u0 strictly convex.
        name: Label carried into reports.

    Returns:
        CauchyData with u0 = psi0* on the gradient range and udot0 = -psidot0 o grad u0.
    """
    if not psi0.same_geometry(psidot0):
        raise DomainError("psi0 and psidot0 must share grid geometry")
    report = convexity_report(psi0)
    if not report.is_strictly_convex:
        raise ConvexityError("psi0 is not strictly convex", report.argmin_node)
    box = gradient_range(psi0)
    if not polytope.contains_box(box):
        raise DomainError(f"moment image violates polytope: gradient range {list(box)}")
    shape = tuple(dual_shape) if dual_shape is not None else _convex_dual_shape(psi0)
    u0 = legendre_transform(psi0, box, shape)
    grads = np.gradient(u0.values, *u0.spacing, edge_order=2)
    if u0.dim == 1:
        grads = [grads]
    x = np.stack([np.clip(g, lo, hi) for g, (lo, hi) in zip(grads, psi0.box)], axis=-1)
    udot0 = u0.with_values(-psidot0(x))
    logger.debug("to_symplectic: dual box %s, shape %s", box, shape)
    return CauchyData(polytope, u0, udot0, psi0=psi0, psidot0=psidot0, name=name)


def from_symplectic(data: CauchyData, x_box, x_shape) -> tuple[GridFn, GridFn]:
    """Sample (psi0, psidot0) on an x-grid: psi0 = u0*, psidot0 = -udot0 o grad psi0."""
    psi0 = legendre_transform(data.u0, x_box, x_shape)
    grads = np.gradient(psi0.values, *psi0.spacing, edge_order=2)
    if psi0.dim == 1:
        grads = [grads]
    y = np.stack([np.clip(g, lo, hi) for g, (lo, hi) in zip(grads, data.dual_box)], axis=-1)
    return psi0, psi0.with_values(-data.udot0(y))


def slope_box(data: CauchyData, s_grid, *, pad: float = 0.01) -> Box:
    """Smallest x-box holding every slope of u0 + s udot0 over ``s_grid``, padded by ``pad``."""
    lows = np.full(data.dim, np.inf)
    highs = np.full(data.dim, -np.inf)
    for s in np.asarray(s_grid, dtype=float):
        rng = np.array(gradient_range(data.u_s(float(s))))
        lows = np.minimum(lows, rng[:, 0])
        highs = np.maximum(highs, rng[:, 1])
    width = np.maximum(highs - lows, 1e-6)
    return tuple(
        (float(lo - pad * w), float(hi + pad * w)) for lo, hi, w in zip(lows, highs, width)
    )


@dataclass
class AdmissibilityReport:
    """Strict convexity and polytope coverage of one ray slice."""

    admissible: bool
    strictly_convex: bool
    covers_polytope: bool
    margin: float
    uncovered_radius: float
    largest_flat: float
    flat_slope: list[float] | None
    flat_location: list[float] | None
    min_second_difference: float

    def to_dict(self) -> dict:
        return {
            "admissible": self.admissible,
            "strictly_convex": self.strictly_convex,
            "covers_polytope": self.covers_polytope,
            "margin": self.margin,
            "uncovered_radius": self.uncovered_radius,
            "largest_flat": self.largest_flat,
            "flat_slope": self.flat_slope,
            "flat_location": self.flat_location,
            "min_second_difference": self.min_second_difference,
        }


def _cell_gradients(f: GridFn) -> np.ndarray:
    """Forward-difference gradients, averaged over cells in 2-D; shape (n_cells, d)."""
    v = f.values
    h = f.spacing
    if f.dim == 1:
        return (np.diff(v) / h[0])[:, np.newaxis]
    g1 = np.diff(v, axis=0) / h[0]
    g2 = np.diff(v, axis=1) / h[1]
    g1 = 0.5 * (g1[:, 1:] + g1[:, :-1])
    g2 = 0.5 * (g2[1:, :] + g2[:-1, :])
    return np.stack([g1, g2], axis=-1).reshape(-1, 2)


def coverage_radius(polytope: Polytope, points: np.ndarray, *, margin: float = 0.0) -> float:
    """Radius of the largest ball centred in P (shrunk by ``margin``) that misses ``points``."""
    widths = [hi - lo for lo, hi in polytope.bounding_box]
    spacing = max(min(widths) / 400.0, margin / 2.0) if margin > 0 else min(widths) / 400.0
    samples = polytope.sample(spacing, margin=margin)
    if samples.size == 0:
        return 0.0
    dist, _ = cKDTree(as_points(points, polytope.dim).reshape(-1, polytope.dim)).query(samples)
    return float(np.max(dist))


def _node_margins(f: GridFn) -> np.ndarray:
    """Smallest raw second difference per interior node over axes and diagonals."""
    v = f.values
    if f.dim == 1:
        return v[2:] - 2.0 * v[1:-1] + v[:-2]
    c = v[1:-1, 1:-1]
    d2 = [
        v[2:, 1:-1] - 2.0 * c + v[:-2, 1:-1],
        v[1:-1, 2:] - 2.0 * c + v[1:-1, :-2],
        v[2:, 2:] - 2.0 * c + v[:-2, :-2],
        v[2:, :-2] - 2.0 * c + v[:-2, 2:],
    ]
    return np.minimum.reduce(d2)


def admissibility_check(
    slice_: GridFn,
    polytope: Polytope,
    *,
    margin: float | None = None,
    flat_length: float | None = None,
    gradients: np.ndarray | None = None,
) -> AdmissibilityReport:
    """
    Check that a ray slice is strictly convex with gradient image filling the polytope.

    Coverage holds when every point of P shrunk by ``margin`` lies within ``margin`` of a
    gradient of the slice: of ``gradients`` when given (``legendre_ray`` passes the
    contact set of u_s, the exact gradient image of its conjugate), otherwise of the
    discrete cell gradients. Strict convexity fails when a flat region longer than
    ``flat_length`` has its slope strictly inside the shrunk polytope; flats whose slope
    sits on the boundary come from truncating the x-window and are only reported.
    """
    widths = [hi - lo for lo, hi in polytope.bounding_box]
    if margin is None:
        margin = DEFAULT_COVERAGE_FRACTION * min(widths)
    if flat_length is None:
        flat_length = DEFAULT_FLAT_FRACTION * min(hi - lo for lo, hi in slice_.box)

    if gradients is None:
        gradients = _cell_gradients(slice_)
    radius = coverage_radius(polytope, gradients, margin=margin)
    covers = radius <= margin

    node_margins = _node_margins(slice_)
    flat = node_margins <= slice_.tol_cvx
    labels, count = ndimage.label(flat)
    strictly_convex = True
    largest, flat_slope, flat_location = 0.0, None, None
    if count:
        inner = tuple(slice(1, -1) for _ in range(slice_.dim))
        nodes = slice_.nodes()[inner]
        grads = np.gradient(slice_.values, *slice_.spacing)
        if slice_.dim == 1:
            grads = [grads]
        inner_grads = np.stack([g[inner] for g in grads], -1)
        for k, region in enumerate(ndimage.find_objects(labels), start=1):
            extent = max(
                (sl.stop - sl.start + 1) * h for sl, h in zip(region, slice_.spacing)
            )
            # Deepest member node: a frame-shaped flat need not contain its box centre.
            member = np.pad(labels[region] == k, 1)
            depth = ndimage.distance_transform_edt(member)[tuple(slice(1, -1) for _ in region)]
            offset = np.unravel_index(np.argmax(depth), depth.shape)
            centre = tuple(sl.start + i for sl, i in zip(region, offset))
            slope = inner_grads[centre]
            interior = bool(
                polytope.contains(slope, margin=margin, tol=-1e-9 * max(1.0, *np.abs(slope)))
            )
            if interior and extent > flat_length:
                strictly_convex = False
            if extent > largest:
                largest = float(extent)
                flat_slope = slope.tolist()
                flat_location = nodes[centre].tolist()

    min_d2 = float(np.min(node_margins))
    return AdmissibilityReport(
        admissible=bool(covers and strictly_convex),
        strictly_convex=strictly_convex,
        covers_polytope=bool(covers),
        margin=float(margin),
        uncovered_radius=radius,
        largest_flat=largest,
        flat_slope=flat_slope,
        flat_location=flat_location,
        min_second_difference=min_d2,
    )


@dataclass
class RaySolution:
    """Legendre potential psi_L(s, .) = (u0 + s udot0)* sampled on an s-grid."""

    data: CauchyData
    s_grid: np.ndarray
    slices: list[GridFn]
    lifespan: float
    admissible: np.ndarray
    maximizers: np.ndarray = field(repr=False)
    reports: list[AdmissibilityReport] = field(default_factory=list, repr=False)

    @property
    def x_box(self) -> Box:
        return self.slices[0].box

    @property
    def x_shape(self) -> tuple[int, ...]:
        return self.slices[0].shape

    @property
    def values(self) -> np.ndarray:
        """Stacked slices, shape ``(n_s, *x_shape)``."""
        return np.stack([sl.values for sl in self.slices])

    @property
    def ds(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0]) if self.s_grid.size > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "name": self.data.name,
            "lifespan": self.lifespan if np.isfinite(self.lifespan) else "inf",
            "s_grid": [float(s) for s in self.s_grid],
            "x_box": [list(pair) for pair in self.x_box],
            "x_shape": list(self.x_shape),
            "admissible": [bool(a) for a in self.admissible],
        }


def _check_s_grid(s_grid) -> np.ndarray:
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if s.size == 0 or s[0] != 0.0:
        raise DomainError("s_grid must start at 0")
    if np.any(np.diff(s) <= 0):
        raise DomainError("s_grid must be increasing")
    return s


def legendre_ray(
    data: CauchyData,
    s_grid,
    x_box=None,
    x_shape=None,
    *,
    margin: float | None = None,
    flat_length: float | None = None,
) -> RaySolution:
    """
    Legendre-transform ray psi_L(s, x) = (u0 + s udot0)*(x) on an s-grid.

    Args:
        data: Cauchy data.
        s_grid: Increasing times starting at 0.
        x_box: Primal box of the slices; defaults to ``slope_box(data, s_grid)``.
        x_shape: Primal grid shape; defaults to the dual grid shape.
        margin: Polytope coverage margin; defaults to two dual cells plus the gap between
            the dual grid box and the polytope.
        flat_length: Longest tolerated flat run in a slice.

    Returns:
        RaySolution with per-slice admissibility and the exact maximizers y*(s, x).
    """
    s_grid = _check_s_grid(s_grid)
    x_box = slope_box(data, s_grid) if x_box is None else normalize_box(x_box, data.dim)
    x_shape = data.shape if x_shape is None else tuple(np.atleast_1d(x_shape).tolist())
    lifespan = convex_lifespan(data)
    if margin is None:
        base = coverage_radius(data.polytope, data.u0.nodes())
        margin = 2.0 * float(np.max(data.u0.spacing)) + base

    dual_nodes = data.u0.nodes()
    slices: list[GridFn] = []
    maximizers = np.empty((s_grid.size, *x_shape, data.dim))
    flags = np.zeros(s_grid.size, dtype=bool)
    reports: list[AdmissibilityReport] = []
    for k, s in enumerate(s_grid):
        source = data.u_s(float(s))
        # Past the lifespan the conjugate of u_s equals that of its envelope; the maximizers
        # then fall on contact nodes.
        touching = dual_nodes[contact_set(source)]
        sl, arg = legendre_transform_with_argmax(source, x_box, x_shape)
        slices.append(sl)
        maximizers[k] = dual_nodes[tuple(np.moveaxis(arg, -1, 0))]
        report = admissibility_check(
            sl, data.polytope, margin=margin, flat_length=flat_length, gradients=touching
        )
        reports.append(report)
        flags[k] = report.admissible
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("slice s=%.6g admissible=%s", s, report.admissible)
    logger.info(
        "ray %s: %d slices, %d admissible", data.name, s_grid.size, int(np.count_nonzero(flags))
    )
    return RaySolution(data, s_grid, slices, lifespan, flags, maximizers, reports)


def hcma_lift(ray: RaySolution) -> np.ndarray:
    """phi_L(s, x) = psi_L(s, x) - psi0(x) on the ray grid, shape ``(n_s, *x_shape)``."""
    psi0 = ray.data.psi0
    if psi0 is not None:
        inner = all(
            lo >= rlo - 1e-12 and hi <= rhi + 1e-12
            for (lo, hi), (rlo, rhi) in zip(psi0.box, ray.x_box)
        )
        if not inner:
            raise DomainError(f"box mismatch: psi0 box {psi0.box} not inside ray box {ray.x_box}")
    values = ray.values
    return values - values[0]

