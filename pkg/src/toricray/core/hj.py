"""Hamilton-Jacobi reduction: characteristics, caustics, Hopf-Lax values and residuals."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from toricray.core.convex import gradient, min_eigenvalue
from toricray.core.grid import DEFAULT_TOL_CVX, SpacetimeFn, as_points
from toricray.core.toric import CauchyData
from toricray.errors import DomainError, GridError

logger = logging.getLogger(__name__)

# Nodes whose Hessian margin falls below this multiple of tol_cvx count as flat.
FLAT_FACTOR = 10.0


def _check_dual(data: CauchyData, xi: np.ndarray, *, margin_cells: float = 0.0) -> None:
    ok = data.u0.inside(xi, margin_cells=margin_cells)
    if not np.all(ok):
        bad = xi[~ok][0]
        raise DomainError(f"momentum {bad.tolist()} outside the dual grid")


def hamiltonian(data: CauchyData, sigma, xi) -> np.ndarray:
    """F(sigma, xi) = sigma + udot0(xi)."""
    xi = as_points(xi, data.dim)
    _check_dual(data, xi)
    return np.asarray(sigma, dtype=float) + data.udot0(xi)


@dataclass
class CharStrip:
    """
    Characteristics traced from seeds; momenta are constant and stored once.

    ``positions`` has shape ``(n_s, n_seeds, dim)`` and ``values`` ``(n_s, n_seeds)``.
    ``mesh_shape`` is set when the seeds form a 2-D mesh in row-major order.
    """

    seeds: np.ndarray
    s_grid: np.ndarray
    p_sigma: np.ndarray
    p_xi: np.ndarray
    velocity: np.ndarray
    positions: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    mesh_shape: tuple[int, ...] | None = None

    @property
    def n_seeds(self) -> int:
        return self.seeds.shape[0]

    def rows(self) -> list[list[float]]:
        """CSV rows: seed_id, s, x..., z, p_sigma, p_xi..."""
        out = []
        for i in range(self.n_seeds):
            for k, s in enumerate(self.s_grid):
                out.append(
                    [
                        i,
                        float(s),
                        *self.positions[k, i].tolist(),
                        float(self.values[k, i]),
                        float(self.p_sigma[i]),
                        *self.p_xi[i].tolist(),
                    ]
                )
        return out

    def to_dict(self) -> dict:
        return {
            "n_seeds": self.n_seeds,
            "s_max": float(self.s_grid[-1]),
            "mesh_shape": None if self.mesh_shape is None else list(self.mesh_shape),
        }


def _seed_momenta(data: CauchyData, seeds) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pts = as_points(seeds, data.dim).reshape(-1, data.dim)
    lo, hi = np.array(data.primal_box).T
    if np.any((pts < lo) | (pts > hi)):
        raise DomainError(f"seed outside the primal box {data.primal_box}")
    p_xi = data.grad_psi0(pts)
    _check_dual(data, p_xi, margin_cells=1.0)
    p_sigma = -data.udot0(p_xi)
    velocity = gradient(data.udot0, p_xi)
    return pts, p_xi, p_sigma, velocity


def trace_characteristics(
    data: CauchyData, seeds, s_grid, *, mesh_shape: tuple[int, ...] | None = None
) -> CharStrip:
    """
    Trace characteristics of F(sigma, xi) = sigma + udot0(xi) from seeds.

    The momenta are conserved, so x(s) = x0 + s w and z(s) = psi0(x0) + s (p_sigma + <w, p_xi>)
    with w = grad udot0(p_xi) hold exactly.
    """
    pts, p_xi, p_sigma, w = _seed_momenta(data, seeds)
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    z0 = np.sum(pts * p_xi, axis=-1) - data.u0(p_xi)
    rate = p_sigma + np.sum(w * p_xi, axis=-1)
    positions = pts[np.newaxis] + s[:, None, None] * w[np.newaxis]
    values = z0[np.newaxis] + s[:, None] * rate[np.newaxis]
    if mesh_shape is not None and int(np.prod(mesh_shape)) != pts.shape[0]:
        raise DomainError(f"mesh shape {mesh_shape} does not match {pts.shape[0]} seeds")
    return CharStrip(pts, s, p_sigma, p_xi, w, positions, values, mesh_shape)


def rk4_characteristics(data: CauchyData, seeds, s_grid) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 integration of the characteristic system, for cross-checking only."""
    pts, p_xi, p_sigma, _ = _seed_momenta(data, seeds)
    s = np.asarray(s_grid, dtype=float).reshape(-1)

    def rhs(state_p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = gradient(data.udot0, state_p)
        return w, p_sigma + np.sum(w * state_p, axis=-1)

    x = pts.copy()
    z = np.sum(pts * p_xi, axis=-1) - data.u0(p_xi)
    p = p_xi.copy()
    positions = [x.copy()]
    values = [z.copy()]
    for ds in np.diff(s):
        # dp/ds = 0, so every stage sees the same momentum.
        k1x, k1z = rhs(p)
        k2x, k2z = rhs(p)
        k3x, k3z = rhs(p)
        k4x, k4z = rhs(p)
        x = x + ds / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        z = z + ds / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        positions.append(x.copy())
        values.append(z.copy())
    return np.stack(positions), np.stack(values)


@dataclass
class CausticReport:
    """First crossing of traced characteristics."""

    first_crossing_s: float
    crossing_pair: tuple[int, int] | None
    location: list[float] | None
    resolution_bound: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.first_crossing_s))

    def to_dict(self) -> dict:
        return {
            "first_crossing_s": self.first_crossing_s if self.finite else "inf",
            "crossing_pair": None if self.crossing_pair is None else list(self.crossing_pair),
            "location": self.location,
            "resolution_bound": self.resolution_bound,
        }


def _caustic_1d(strip: CharStrip) -> CausticReport:
    order = np.argsort(strip.seeds[:, 0], kind="stable")
    x0 = strip.seeds[order, 0]
    w = strip.velocity[order, 0]
    gap = np.diff(x0)
    closing = w[:-1] - w[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_star = np.where((closing > 0) & (gap > 0), gap / closing, np.inf)
    horizon = float(strip.s_grid[-1])
    s_star = np.where(s_star <= horizon, s_star, np.inf)
    i = int(np.argmin(s_star))
    first = float(s_star[i])
    if not np.isfinite(first):
        return CausticReport(np.inf, None, None, 0.0)
    # Pairwise crossing time is 1/(-average dw/dx0); its gap to the continuum infimum is
    # bounded by the variation of dw/dx0 across one seed gap.
    bound = 0.0
    if x0.size >= 3:
        slopes = np.diff(w) / np.where(gap > 0, gap, np.inf)
        curvature = np.max(np.abs(np.diff(slopes)) / np.maximum(gap[1:], gap[:-1]))
        bound = float(first**2 * curvature * np.max(gap))
    location = [float(x0[i] + first * w[i])]
    return CausticReport(first, (int(order[i]), int(order[i + 1])), location, bound)


def _caustic_mesh(strip: CharStrip) -> CausticReport:
    m1, m2 = strip.mesh_shape
    x0 = strip.seeds.reshape(m1, m2, 2)
    w = strip.velocity.reshape(m1, m2, 2)
    dx1, dx2 = x0[1:, :-1] - x0[:-1, :-1], x0[:-1, 1:] - x0[:-1, :-1]
    dw1, dw2 = w[1:, :-1] - w[:-1, :-1], w[:-1, 1:] - w[:-1, :-1]

    def cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    # det(dX + s dW) = a s^2 + b s + c
    a = cross(dw1, dw2)
    b = cross(dx1, dw2) + cross(dw1, dx2)
    c = cross(dx1, dx2)
    sign = np.sign(c)
    a, b, c = a * sign, b * sign, c * sign
    roots = np.full(a.shape, np.inf)
    lin = np.abs(a) <= 1e-14 * (np.abs(b) + np.abs(c))
    with np.errstate(divide="ignore", invalid="ignore"):
        r_lin = np.where(b < 0, -c / b, np.inf)
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        r1 = (-b - sq) / (2 * a)
        r2 = (-b + sq) / (2 * a)
    r1 = np.where((disc >= 0) & (r1 > 0), r1, np.inf)
    r2 = np.where((disc >= 0) & (r2 > 0), r2, np.inf)
    roots = np.where(lin, r_lin, np.minimum(r1, r2))
    roots = np.where(roots <= float(strip.s_grid[-1]), roots, np.inf)
    idx = np.unravel_index(int(np.argmin(roots)), roots.shape)
    first = float(roots[idx])
    if not np.isfinite(first):
        return CausticReport(np.inf, None, None, 0.0)
    i, j = idx
    corner = x0[i, j] + first * w[i, j]
    pair = (int(i * m2 + j), int((i + 1) * m2 + j + 1))
    cell = float(np.max(np.linalg.norm(np.stack([dx1, dx2]), axis=-1)))
    slope = float(np.max(np.linalg.norm(np.stack([dw1, dw2]), axis=-1))) / max(cell, 1e-300)
    return CausticReport(first, pair, corner.tolist(), first**2 * slope * cell)


def caustic_time(strip: CharStrip) -> CausticReport:
    """
    First time two traced characteristics meet.

    In 1-D adjacent seeds (sorted) cross at (x0_j - x0_i)/(w_i - w_j) exactly; on a 2-D seed
    mesh the first positive root of det(dX + s dW) over mesh cells is used. Crossings beyond
    the last s of the strip are reported as infinite.
    """
    if strip.n_seeds < 2:
        raise DomainError("caustic detection needs at least two seeds")
    if strip.seeds.shape[1] == 1:
        report = _caustic_1d(strip)
    else:
        if strip.mesh_shape is None or min(strip.mesh_shape) < 2:
            raise DomainError("2-D caustic detection needs a seed mesh")
        report = _caustic_mesh(strip)
    logger.info("first caustic at s=%s", report.first_crossing_s)
    return report


def hopf_lax_value(data: CauchyData, s: float, x, *, chunk: int = 4096) -> np.ndarray:
    """Brute-force max over dual nodes of <y, x> - u0(y) - s udot0(y)."""
    pts = as_points(x, data.dim)
    lead = pts.shape[:-1]
    flat = pts.reshape(-1, data.dim)
    nodes = data.u0.nodes().reshape(-1, data.dim)
    u_s = data.u_s(s).values.reshape(-1)
    out = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        block = flat[start : start + chunk]
        out[start : start + chunk] = np.max(block @ nodes.T - u_s[np.newaxis], axis=1)
    return out.reshape(lead)


@dataclass
class HJResidualReport:
    """Sup over included nodes of |d_s eta + udot0(grad_x eta)|."""

    sup_residual: float
    argmax: list[float] | None
    excluded_nodes: int
    checked_nodes: int

    def to_dict(self) -> dict:
        return {
            "sup_residual": self.sup_residual,
            "argmax": self.argmax,
            "excluded_nodes": self.excluded_nodes,
            "checked_nodes": self.checked_nodes,
        }


def _ds_fourth_order(values: np.ndarray, ds: float) -> np.ndarray:
    """Five-point central difference in s at slices 2 .. n-3."""
    return (values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]) / (12.0 * ds)


def stencil_mask(irregular: np.ndarray) -> np.ndarray:
    """Nodes whose (s, x) difference stencil touches an irregular node, trimmed to the core."""
    d = irregular.ndim - 1
    grown = ndimage.binary_dilation(irregular, structure=np.ones((5,) + (3,) * d, dtype=bool))
    return grown[2:-2]


def hj_residual(eta: SpacetimeFn, data: CauchyData) -> HJResidualReport:
    """
    Residual of the Hamilton-Jacobi equation d_s eta + udot0(grad_x eta) = 0.

    The sup runs over interior nodes: s-slices 2 .. n-3 with a five-point difference in s and
    interior x nodes with central differences. Flat nodes have a Hessian margin below
    ``FLAT_FACTOR * tol_cvx``; every node whose stencil reaches a flat node is excluded, as
    the kinks between affine and strictly convex parts move with s. The excluded count is
    reported; when no node is left the residual is ``inf``.
    """
    values = eta.values
    d = eta.dim
    if eta.s_grid.size < 5:
        raise GridError("the HJ residual needs at least five s nodes")
    x_inner = tuple(slice(1, -1) for _ in range(d))
    inner = (slice(None),) + x_inner
    eta_s = _ds_fourth_order(values, eta.ds)[inner]
    hx = eta.x_spacing
    grads = []
    for k in range(d):
        axis = k + 1
        fwd = np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)
        grads.append(fwd[(slice(2, -2),) + x_inner] / (2.0 * hx[k]))
    xi = np.stack(grads, axis=-1)

    tol = data.u0.tol_cvx
    lo, hi = data.u0.lower, data.u0.upper
    pad = tol * np.maximum(1.0, np.abs(np.stack([lo, hi])).max(axis=0))
    if np.any(xi < lo - pad) or np.any(xi > hi + pad):
        bad = xi[np.any((xi < lo - pad) | (xi > hi + pad), axis=-1)][0]
        raise DomainError(f"gradient {bad.tolist()} escapes the dual grid (admissibility violated)")

    # Hessian margins on every slice, in Hessian units like convexity_report.
    hess = np.empty(values[inner].shape + (d, d))
    v = values
    for k in range(d):
        ak = k + 1
        hess[..., k, k] = (
            np.roll(v, -1, axis=ak) - 2.0 * v + np.roll(v, 1, axis=ak)
        )[inner] / hx[k] ** 2
        for l in range(k + 1, d):
            al = l + 1
            mixed = (
                np.roll(np.roll(v, -1, axis=ak), -1, axis=al)
                - np.roll(np.roll(v, -1, axis=ak), 1, axis=al)
                - np.roll(np.roll(v, 1, axis=ak), -1, axis=al)
                + np.roll(np.roll(v, 1, axis=ak), 1, axis=al)
            )[inner] / (4.0 * hx[k] * hx[l])
            hess[..., k, l] = hess[..., l, k] = mixed
    scale = max(1.0, float(np.max(np.abs(values))))
    flat_tol = FLAT_FACTOR * DEFAULT_TOL_CVX * scale / float(np.min(hx)) ** 2
    excluded = stencil_mask(min_eigenvalue(hess) < flat_tol)

    xi_c = np.clip(xi, lo, hi)
    residual = np.abs(eta_s + data.udot0(xi_c))
    residual = np.where(excluded, 0.0, residual)
    n_excluded = int(np.count_nonzero(excluded))
    checked = int(excluded.size) - n_excluded
    if checked == 0:
        logger.warning("HJ residual: all %d interior nodes are flat, nothing checked", n_excluded)
        return HJResidualReport(np.inf, None, n_excluded, 0)
    idx = np.unravel_index(int(np.argmax(residual)), residual.shape)
    x_axes = eta.x_axes
    where = [float(eta.s_grid[idx[0] + 2])] + [float(ax[i + 1]) for ax, i in zip(x_axes, idx[1:])]
    sup = float(residual[idx])
    logger.info("HJ residual %.3e (%d nodes excluded)", sup, n_excluded)
    return HJResidualReport(sup, where, n_excluded, checked)
