"""Tests for toricray.core.toric module."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit, xlogy

from toricray.core.convex import contact_set
from toricray.core.grid import GridFn, Polytope
from toricray.core.toric import (
    CauchyData,
    admissibility_check,
    convex_lifespan,
    from_symplectic,
    hcma_lift,
    legendre_ray,
    lifespan_scan,
    slope_box,
    smooth_for_all_time,
    to_symplectic,
)
from toricray.errors import ConvexityError, DomainError
from toricray.presets import get_preset


@pytest.fixture(scope="module")
def quadratic_ray():
    data = get_preset("quadratic").build()
    return legendre_ray(data, [0.0, 0.3, 0.6, 0.9, 1.1, 1.3])


@pytest.fixture(scope="module")
def logistic_from_kahler():
    x_box = [-4.0, 4.0]
    psi0 = GridFn.from_function(lambda x: np.logaddexp(0.0, x), x_box, 801)
    psidot0 = GridFn.from_function(lambda x: 2.0 * (expit(x) - 0.5) ** 2, x_box, 801)
    return to_symplectic(
        psi0, psidot0, Polytope.interval(0, 1), dual_shape=(201,), name="logistic-kahler"
    )


class TestCauchyData:
    """Tests for CauchyData validation and the primal side."""

    def test_rejects_non_convex_u0(self) -> None:
        with pytest.raises(ConvexityError):
            CauchyData.from_functions(
                Polytope.interval(0, 1), lambda y: -(y**2), lambda y: y, [0, 1], 41
            )

    def test_rejects_geometry_mismatch(self) -> None:
        u0 = GridFn.from_function(lambda y: y**2, [0, 1], 41)
        udot0 = GridFn.from_function(lambda y: y, [0, 1], 21)
        with pytest.raises(DomainError):
            CauchyData(Polytope.interval(0, 1), u0, udot0)

    def test_rejects_box_outside_polytope(self) -> None:
        with pytest.raises(DomainError, match="not inside the polytope"):
            CauchyData.from_functions(
                Polytope.interval(0, 1), lambda y: y**2, lambda y: y, [0, 2], 41
            )

    def test_rejects_dimension_mismatch(self) -> None:
        with pytest.raises(DomainError):
            CauchyData.from_functions(
                Polytope.box([[0, 1], [0, 1]]), lambda y: y**2, lambda y: y, [0, 1], 41
            )

    def test_primal_values(self) -> None:
        data = get_preset("quadratic").build()
        # u0 = y^2 gives psi0 = x^2/4 and psidot0 = (x/2)^2.
        assert_allclose(data.grad_psi0(0.8), [0.4], atol=1e-8)
        assert float(data.psi0_value(0.8)) == pytest.approx(0.16, abs=1e-8)
        assert float(data.psidot0_value(0.8)) == pytest.approx(0.16, abs=1e-8)

    def test_u_s(self) -> None:
        data = get_preset("quadratic").build(11)
        assert_allclose(data.u_s(0.25).values, 0.75 * data.u0.axes[0] ** 2, atol=1e-15)


class TestLifespan:
    """Tests for the convex lifespan scan."""

    @pytest.mark.parametrize(
        ("name", "location"),
        [("quadratic", None), ("quartic", 0.0), ("logistic", 0.5), ("quadratic2d", None)],
    )
    def test_presets(self, name: str, location: float | None) -> None:
        scan = lifespan_scan(get_preset(name).build())
        assert scan.lifespan == pytest.approx(1.0, rel=1e-3)
        if location is not None:
            assert scan.location[0] == pytest.approx(location, abs=0.01)

    def test_drift_is_infinite(self) -> None:
        data = get_preset("drift").build()
        scan = lifespan_scan(data)
        assert not scan.is_finite
        assert scan.argmin_node is None
        assert scan.to_dict()["lifespan"] == "inf"
        assert smooth_for_all_time(data)

    def test_skips_boundary_layers(self) -> None:
        polytope = Polytope.interval(0, 1)
        u0 = GridFn.from_function(lambda y: y**2, [0, 1], 41)
        values = -(u0.axes[0] ** 2)
        values[0] -= 0.01
        # The dent makes the second difference at node 1 about -18, within two cells of y = 0.
        scan = lifespan_scan(CauchyData(polytope, u0, u0.with_values(values)))
        assert scan.lifespan == pytest.approx(1.0, rel=1e-9)
        assert min(scan.argmin_node) >= 2

    def test_concave_udot0_is_not_smooth(self) -> None:
        data = get_preset("quadratic").build()
        assert not smooth_for_all_time(data)
        assert convex_lifespan(data) == pytest.approx(1.0)


class TestAdmissibility:
    """Tests for admissibility_check and contact sets."""

    def test_convex_slice(self) -> None:
        sl = GridFn.from_function(lambda x: 0.5 * x**2, [-1.2, 1.2], 241)
        report = admissibility_check(sl, Polytope.interval(-1, 1))
        assert report.admissible
        assert report.largest_flat == 0.0

    def test_interior_flat(self) -> None:
        sl = GridFn.from_function(lambda x: np.maximum(np.abs(x) - 0.3, 0.0) ** 2, [-1, 1], 201)
        report = admissibility_check(sl, Polytope.interval(-1, 1))
        assert not report.strictly_convex
        assert not report.admissible
        assert report.flat_slope[0] == pytest.approx(0.0, abs=1e-9)
        assert report.largest_flat >= 0.55

    def test_frame_shaped_flat(self) -> None:
        def huber(t):
            return np.where(np.abs(t) <= 1.0, 0.5 * t**2, np.abs(t) - 0.5)

        box = [[-1.5, 1.5], [-1.5, 1.5]]
        sl = GridFn.from_function(lambda a, b: huber(a) + huber(b), box, (61, 61))
        report = admissibility_check(sl, Polytope.box([[-1, 1], [-1, 1]]))
        # One flat ring around a curved core; its slopes lie on the polytope boundary.
        assert report.strictly_convex
        assert report.admissible
        assert np.max(np.abs(report.flat_slope)) == pytest.approx(1.0, abs=1e-9)

    def test_gradients_override_coverage(self) -> None:
        sl = GridFn.from_function(lambda x: 0.5 * x**2, [-1.2, 1.2], 241)
        ends = np.array([[-1.0], [1.0]])
        report = admissibility_check(sl, Polytope.interval(-1, 1), gradients=ends)
        assert not report.covers_polytope
        assert report.uncovered_radius == pytest.approx(1.0, abs=0.05)

    def test_contact_set(self) -> None:
        convex = GridFn.from_function(lambda y: y**2, [-1, 1], 41)
        assert np.all(contact_set(convex))
        well = GridFn.from_function(lambda y: (y**2 - 0.25) ** 2, [-1, 1], 41)
        mask = contact_set(well)
        assert not mask[20]
        assert mask[0] and mask[-1]

    def test_contact_set_2d(self) -> None:
        saddle = GridFn.from_function(lambda a, b: a**2 - 0.5 * b**2, [[-1, 1], [-1, 1]], (11, 11))
        mask = contact_set(saddle)
        # Concave in b: only the edges b = -1 and b = 1 touch the envelope.
        assert np.all(mask[:, 0]) and np.all(mask[:, -1])
        assert not np.any(mask[:, 1:-1])


class TestLegendreRay:
    """Tests for legendre_ray and hcma_lift."""

    def test_admissibility_flips_at_lifespan(self, quadratic_ray) -> None:
        assert quadratic_ray.admissible.tolist() == [True, True, True, True, False, False]
        assert quadratic_ray.lifespan == pytest.approx(1.0)

    def test_initial_slice_is_psi0(self, quadratic_ray) -> None:
        sl = quadratic_ray.slices[0]
        x = sl.axes[0]
        inner = (x > 0.1) & (x < 1.9)
        assert np.max(np.abs(sl.values[inner] - 0.25 * x[inner] ** 2)) <= 1e-5

    def test_maximizers_are_dual_nodes(self, quadratic_ray) -> None:
        assert quadratic_ray.maximizers.shape == (6, 401, 1)
        assert quadratic_ray.maximizers.min() >= 0.0
        assert quadratic_ray.maximizers.max() <= 1.0

    def test_lift_starts_at_zero(self, quadratic_ray) -> None:
        phi = hcma_lift(quadratic_ray)
        assert phi.shape == quadratic_ray.values.shape
        assert np.all(phi[0] == 0.0)

    def test_to_dict(self, quadratic_ray) -> None:
        d = quadratic_ray.to_dict()
        assert d["name"] == "quadratic"
        assert d["x_shape"] == [401]
        assert d["admissible"][-1] is False

    @pytest.mark.parametrize("name", ["quartic", "logistic"])
    def test_loses_admissibility(self, name: str) -> None:
        data = get_preset(name).build()
        ray = legendre_ray(data, np.linspace(0, 1.2, 13), x_shape=201)
        s = ray.s_grid
        assert np.all(ray.admissible[s <= 0.9 + 1e-12])
        assert not np.any(ray.admissible[s >= 1.1 - 1e-12])

    def test_quadratic2d_loses_admissibility(self) -> None:
        data = get_preset("quadratic2d").build()
        ray = legendre_ray(data, [0.0, 0.45, 0.9, 1.1, 1.2], x_shape=(41, 41))
        assert ray.admissible.tolist() == [True, True, True, False, False]

    def test_past_lifespan_slice_conjugates_envelope(self, quadratic_ray) -> None:
        # u_1.3 = -0.3 y^2 on [0, 1]: its envelope is the chord -0.3 y, touching at 0 and 1.
        sl = quadratic_ray.slices[-1]
        x = sl.axes[0]
        assert_allclose(sl.values, np.maximum(0.0, x + 0.3), atol=1e-12)
        assert np.all(np.isin(quadratic_ray.maximizers[-1], [0.0, 1.0]))

    def test_slope_box_covers_every_slice(self) -> None:
        data = get_preset("quadratic").build()
        ((lo, hi),) = slope_box(data, [0.0, 1.3])
        assert lo < -0.59
        assert hi > 1.99

    @pytest.mark.parametrize("s_grid", [[0.1, 0.2], [0.0, 0.2, 0.1]])
    def test_bad_s_grid(self, s_grid) -> None:
        with pytest.raises(DomainError):
            legendre_ray(get_preset("quadratic").build(41), s_grid)


class TestSymplecticConversion:
    """Tests for to_symplectic and from_symplectic."""

    def test_recovers_entropy(self, logistic_from_kahler) -> None:
        u0 = logistic_from_kahler.u0
        y = u0.axes[0]
        expected = xlogy(y, y) + xlogy(1 - y, 1 - y)
        assert np.max(np.abs(u0.values - expected)) <= 1e-4

    def test_lifespan(self, logistic_from_kahler) -> None:
        assert convex_lifespan(logistic_from_kahler) == pytest.approx(1.0, rel=0.01)

    def test_round_trip(self, logistic_from_kahler) -> None:
        # The x-box must contain every slope of u0, about +-3.9 here.
        psi0, psidot0 = from_symplectic(logistic_from_kahler, [-4.5, 4.5], 301)
        x = psi0.axes[0]
        inner = np.abs(x) <= 3.0
        assert np.max(np.abs(psi0.values - np.logaddexp(0.0, x))[inner]) <= 1e-3
        assert np.max(np.abs(psidot0.values - 2.0 * (expit(x) - 0.5) ** 2)[inner]) <= 2e-2

    def test_polytope_too_small(self) -> None:
        psi0 = GridFn.from_function(lambda x: np.logaddexp(0.0, x), [-4, 4], 201)
        with pytest.raises(DomainError, match="moment image"):
            to_symplectic(psi0, psi0, Polytope.interval(0, 0.5))

    def test_lift_box_mismatch(self, logistic_from_kahler) -> None:
        ray = legendre_ray(logistic_from_kahler, [0.0, 0.1], x_shape=101)
        wide = GridFn.from_function(lambda x: np.logaddexp(0.0, x), [-9, 9], 101)
        data = dataclasses.replace(logistic_from_kahler, psi0=wide, psidot0=wide)
        with pytest.raises(DomainError, match="box mismatch"):
            hcma_lift(dataclasses.replace(ray, data=data))
