"""Moser maps of the toric Cauchy flow: evaluation, invertibility, conservation and leaves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from toricray.core.convex import gradient, hessian, invert_gradient
from toricray.core.grid import as_points
from toricray.core.hj import hopf_lax_value
from toricray.core.toric import CauchyData, RaySolution, convex_lifespan
from toricray.errors import DomainError

logger = logging.getLogger(__name__)

DEFAULT_TOL_DET = 1e-6
# Cap on the number of dual nodes sampled per axis by the scans below.
_MAX_SAMPLES_PER_AXIS = {1: 400, 2: 24}


def _dual_points(data: CauchyData, y: np.ndarray) -> np.ndarray:
    """Reject momenta that are not at least one dual cell inside the grid."""
    ok = data.u0.inside(y, margin_cells=1.0)
    if not np.all(ok):
        bad = y[~ok][0]
        raise DomainError(f"point maps to momentum {bad.tolist()} outside the dual grid interior")
    return y


def moser_map(data: CauchyData, s: float, x) -> np.ndarray:
    """
    f_s(x) = grad u_s(grad psi0(x)), defined for every s >= 0.

    Args:
        data: Cauchy data.
        s: Real time.
        x: Points in the primal box, shape ``(..., dim)``.

    Returns:
        Images with the same shape as the input points.
    """
    y = _dual_points(data, data.grad_psi0(x))
    return gradient(data.u_s(s), y)


def moser_map_linear(data: CauchyData, s: float, x) -> np.ndarray:
    """Second evaluation route: x + s grad udot0(grad psi0(x))."""
    pts = as_points(x, data.dim)
    y = _dual_points(data, data.grad_psi0(pts))
    return pts + s * gradient(data.udot0, y)


def _fd_step(data: CauchyData) -> np.ndarray:
    lo, hi = np.array(data.primal_box).T
    return 1e-3 * (hi - lo)


def jacobian_det(data: CauchyData, s: float, x) -> np.ndarray:
    """Determinant of the x-Jacobian of f_s by central differences."""
    pts = as_points(x, data.dim)
    step = _fd_step(data)
    jac = np.empty(pts.shape + (data.dim,))
    for k in range(data.dim):
        e = np.zeros(data.dim)
        e[k] = step[k]
        jac[..., :, k] = (moser_map(data, s, pts + e) - moser_map(data, s, pts - e)) / (2 * step[k])
    return np.linalg.det(jac)


def jacobian_det_dual(data: CauchyData, s: float, x) -> np.ndarray:
    """Dual route: det Hess u_s(y) / det Hess u0(y) at y = grad psi0(x)."""
    y = data.grad_psi0(x)
    return np.linalg.det(hessian(data.u_s(s), y)) / np.linalg.det(hessian(data.u0, y))


def dual_samples(data: CauchyData, *, margin_cells: int = 3) -> np.ndarray:
    """Dual nodes at least ``margin_cells`` inside the grid, thinned to a bounded count."""
    cap = _MAX_SAMPLES_PER_AXIS[data.dim]
    axes = []
    for ax in data.u0.axes:
        inner = ax[margin_cells:-margin_cells]
        stride = max(1, int(np.ceil(inner.size / cap)))
        axes.append(inner[::stride])
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, data.dim)


@dataclass
class InvertibilityReport:
    """Sign scan of the Moser Jacobian at one time."""

    s: float
    invertible: bool
    min_det: float
    argmin_point: list[float]
    tol_det: float

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "invertible": self.invertible,
            "min_det": self.min_det,
            "argmin_point": self.argmin_point,
            "tol_det": self.tol_det,
        }


def invertibility_check(
    data: CauchyData, s: float, *, tol_det: float = DEFAULT_TOL_DET
) -> InvertibilityReport:
    """Scan Jacobian determinants at x = grad u0(y), y interior; invertible iff min > tol_det."""
    y = dual_samples(data)
    x = gradient(data.u0, y)
    dets = jacobian_det(data, s, x)
    i = int(np.argmin(dets))
    min_det = float(dets[i])
    return InvertibilityReport(
        s=float(s),
        invertible=min_det > tol_det,
        min_det=min_det,
        argmin_point=x[i].tolist(),
        tol_det=tol_det,
    )


def moser_inverse(
    data: CauchyData, s: float, target, *, lifespan: float | None = None
) -> np.ndarray:
    """f_s^-1(target) = grad u0((grad u_s)^-1(target)); only for s below the lifespan."""
    if lifespan is None:
        lifespan = convex_lifespan(data)
    if s >= lifespan:
        raise DomainError(f"Moser map not invertible at s={s:g} (lifespan {lifespan:g})")
    y = invert_gradient(data.u_s(s), target)
    return gradient(data.u0, _dual_points(data, y))


def group_law_defect(data: CauchyData, s1: float, s2: float, samples) -> float:
    """Sup over samples of |f_{s1+s2}(x) - f_{s1}(f_{s2}(x))|."""
    pts = as_points(samples, data.dim)
    lhs = moser_map(data, s1 + s2, pts)
    rhs = moser_map(data, s1, moser_map(data, s2, pts))
    return float(np.max(np.linalg.norm(lhs - rhs, axis=-1)))


@dataclass
class ConservationReport:
    """Sup-error of psidot_s o f_s - psidot0 along the ray, by two routes."""

    sup_error: float
    sup_error_dual: float
    route_gap: float
    s_max: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "sup_error": self.sup_error,
            "sup_error_dual": self.sup_error_dual,
            "route_gap": self.route_gap,
            "s_max": self.s_max,
            "n_samples": self.n_samples,
        }


def conservation_check(ray: RaySolution, *, delta: float | None = None) -> ConservationReport:
    """
    Verify psidot_s(f_s(x)) = psidot0(x) along a ray that stays below the lifespan.

    Samples are x = grad u0(y) for interior dual nodes y, so that f_s(x) = grad u_s(y) and
    psidot0(x) = -udot0(y) need no Newton inversion. psidot_s is a symmetric difference in s
    of the Hopf-Lax value (the ray potential off the grid) with step ``delta``, by default
    ``1e-6 * max(1, s_max)``, taken at the image points. The second route evaluates
    -udot0(grad_x psi_L) on the sampled slices.
    """
    data = ray.data
    s_max = float(ray.s_grid[-1])
    if s_max >= ray.lifespan:
        raise DomainError(f"ray reaches s={s_max:g}, beyond the lifespan {ray.lifespan:g}")
    if delta is None:
        delta = 1e-6 * max(1.0, s_max)
    y = dual_samples(data)
    expected = -data.udot0(y)

    images = np.stack([gradient(data.u_s(float(s)), y) for s in ray.s_grid])
    probe = ray.slices[0]
    keep = np.all(probe.inside(images, margin_cells=2.0), axis=0)
    if not np.any(keep):
        raise DomainError("no sample stays inside the ray's x-box")
    images, y, expected = images[:, keep], y[keep], expected[keep]

    err = 0.0
    err_dual = 0.0
    for k, sl in enumerate(ray.slices):
        s = float(ray.s_grid[k])
        route_a = (
            hopf_lax_value(data, s + delta, images[k]) - hopf_lax_value(data, s - delta, images[k])
        ) / (2.0 * delta)
        xi = np.clip(gradient(sl, images[k]), data.u0.lower, data.u0.upper)
        route_b = -data.udot0(xi)
        err = max(err, float(np.max(np.abs(route_a - expected))))
        err_dual = max(err_dual, float(np.max(np.abs(route_b - expected))))
    gap = abs(err - err_dual)
    logger.info("conservation sup-error %.3e (dual route %.3e)", err, err_dual)
    return ConservationReport(err, err_dual, gap, s_max, int(y.shape[0]))


@dataclass
class Leaf:
    """Straight leaf {(s, seed + s * direction) : 0 <= s <= s_max}."""

    seed: np.ndarray
    direction: np.ndarray
    momentum: np.ndarray
    s_max: float

    def position(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.seed + s[..., np.newaxis] * self.direction

    def to_dict(self) -> dict:
        return {
            "seed": self.seed.tolist(),
            "direction": self.direction.tolist(),
            "momentum": self.momentum.tolist(),
            "s_max": self.s_max,
        }


def leaves(data: CauchyData, seeds, s_max: float) -> list[Leaf]:
    """Leaves through each seed with direction grad udot0(grad psi0(seed))."""
    pts = as_points(seeds, data.dim).reshape(-1, data.dim)
    y = _dual_points(data, data.grad_psi0(pts))
    directions = gradient(data.udot0, y)
    return [Leaf(p, w, m, float(s_max)) for p, w, m in zip(pts, directions, y)]


@dataclass
class FlowMap:
    """Samples of f_s at one time with Jacobian determinants."""

    s: float
    points: np.ndarray
    images: np.ndarray
    jac_det: np.ndarray = field(repr=False)

    def rows(self) -> list[list[float]]:
        """CSV rows: s, x_in..., x_out..., jac_det."""
        return [
            [self.s, *p.tolist(), *q.tolist(), float(j)]
            for p, q, j in zip(self.points, self.images, self.jac_det)
        ]

    def to_dict(self) -> dict:
        return {"s": self.s, "n_samples": int(self.points.shape[0])}


def flow_map(data: CauchyData, s: float, samples) -> FlowMap:
    pts = as_points(samples, data.dim).reshape(-1, data.dim)
    return FlowMap(float(s), pts, moser_map(data, s, pts), jacobian_det(data, s, pts))
