"""Tests for toricray.core.measure module."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from toricray.core.grid import SpacetimeFn
from toricray.core.hj import hj_residual
from toricray.core.measure import (
    alexandrov_mass,
    gradient_graph_check,
    smooth_mass,
    spacetime_from_ray,
    weak_solution_check,
)
from toricray.core.toric import legendre_ray
from toricray.errors import ConvexityError, DomainError, GridError
from toricray.presets import get_preset


@pytest.fixture(scope="module")
def weak_ray():
    data = get_preset("quadratic").build(2001)
    return legendre_ray(data, np.linspace(0.0, 0.8, 81), x_shape=201)


@pytest.fixture(scope="module")
def graph_ray():
    data = get_preset("quadratic").build()
    return legendre_ray(data, np.linspace(0.0, 0.9, 81))


def _paraboloid() -> SpacetimeFn:
    s = np.linspace(0.0, 1.0, 21)
    x = np.linspace(-1.0, 1.0, 41)
    ss, xx = np.meshgrid(s, x, indexing="ij")
    return SpacetimeFn(s, [(-1.0, 1.0)], 0.5 * (ss**2 + xx**2), convex_hint=True)


class TestAlexandrovMass:
    """Tests for alexandrov_mass and its smooth counterpart."""

    def test_smooth_control(self) -> None:
        eta = _paraboloid()
        report = alexandrov_mass(eta)
        # Hess eta = I, so the mass is the area of [0, 1] x [-1, 1].
        assert report.total == pytest.approx(2.0, rel=1e-10)
        assert smooth_mass(eta) == pytest.approx(report.total, rel=0.02)
        assert report.to_dict()["level"] == 0

    def test_rejects_non_convex(self) -> None:
        eta = _paraboloid()
        concave = SpacetimeFn(eta.s_grid, eta.x_box, -eta.values)
        with pytest.raises(ConvexityError) as info:
            alexandrov_mass(concave)
        assert info.value.witness is not None

    def test_subgradient_shape(self, weak_ray) -> None:
        eta = spacetime_from_ray(weak_ray)
        assert eta.subgradients.shape == (81, 201, 2)
        # sigma = -udot0(y*) = y*^2 for the quadratic preset.
        assert_allclose(eta.subgradients[..., 0], eta.subgradients[..., 1] ** 2)

    def test_mass_comes_from_values(self, weak_ray) -> None:
        eta = spacetime_from_ray(weak_ray)
        bare = SpacetimeFn(eta.s_grid, eta.x_box, eta.values)
        report = alexandrov_mass(eta)
        assert report.subgradient_gap <= 0.25
        assert alexandrov_mass(bare).subgradient_gap is None
        assert_allclose(report.total, alexandrov_mass(bare).total, rtol=1e-12)

        ss, xx = np.meshgrid(eta.s_grid, eta.x_axes[0], indexing="ij")
        bumped = eta.values + 0.5 * (ss**2 + xx**2)
        # Hess eta + I has determinant at least one.
        mass = alexandrov_mass(SpacetimeFn(eta.s_grid, eta.x_box, bumped)).total
        assert mass >= 0.9 * eta.volume
        stale = SpacetimeFn(eta.s_grid, eta.x_box, bumped, eta.subgradients)
        with pytest.raises(DomainError, match="subgradients disagree"):
            alexandrov_mass(stale)

    def test_affine_invariance(self, weak_ray) -> None:
        eta = spacetime_from_ray(weak_ray)
        base = alexandrov_mass(SpacetimeFn(eta.s_grid, eta.x_box, eta.values)).total
        assert base > 0.0
        ss, xx = np.meshgrid(eta.s_grid, eta.x_axes[0], indexing="ij")
        shifted = SpacetimeFn(eta.s_grid, eta.x_box, eta.values + 3.0 * ss - 0.5 * xx + 1.0)
        assert_allclose(alexandrov_mass(shifted).total, base, rtol=1e-9)

    @pytest.mark.parametrize("lam", [0.5, 2.5])
    def test_scaling(self, weak_ray, lam: float) -> None:
        eta = spacetime_from_ray(weak_ray)
        base = alexandrov_mass(SpacetimeFn(eta.s_grid, eta.x_box, eta.values)).total
        scaled = alexandrov_mass(SpacetimeFn(eta.s_grid, eta.x_box, lam * eta.values)).total
        # Two spacetime dimensions: hull areas scale by lam^2.
        assert_allclose(scaled, lam**2 * base, rtol=1e-9)
        paraboloid = _paraboloid()
        control = SpacetimeFn(paraboloid.s_grid, paraboloid.x_box, lam * paraboloid.values)
        assert_allclose(smooth_mass(control), 2.0 * lam**2, rtol=0.02)


class TestWeakSolution:
    """Tests for weak_solution_check."""

    def test_legendre_ray_mass_vanishes(self, weak_ray) -> None:
        report = weak_solution_check(weak_ray, levels=3)
        assert report.passed
        assert len(report.levels) == 3
        assert all(r <= 0.6 for r in report.ratios)
        assert report.levels[-1].total < report.levels[0].total

    def test_perturbed_control_is_rejected(self, weak_ray) -> None:
        eps = 1e-2
        report = weak_solution_check(weak_ray, levels=3, perturbation=eps)
        assert not report.passed
        assert report.levels[-1].total >= 0.9 * eps**2 * report.volume

    def test_needs_two_levels(self, weak_ray) -> None:
        with pytest.raises(DomainError):
            weak_solution_check(weak_ray, levels=1)

    def test_grid_not_coarsenable(self) -> None:
        data = get_preset("quadratic").build(201)
        ray = legendre_ray(data, np.linspace(0.0, 0.5, 6), x_shape=201)
        with pytest.raises(GridError, match="cannot be coarsened"):
            weak_solution_check(ray, levels=2)


class TestGradientGraph:
    """Tests for gradient_graph_check."""

    def test_legendre_ray_lies_on_graph(self, graph_ray) -> None:
        report = gradient_graph_check(graph_ray)
        assert report.sup_deviation <= 1e-3
        assert report.argmax is not None
        assert report.to_dict()["excluded_nodes"] == report.excluded_nodes

    @pytest.mark.parametrize("name", ["quadratic", "quartic", "logistic"])
    def test_agrees_with_hj_residual(self, name: str) -> None:
        data = get_preset(name).build()
        ray = legendre_ray(data, np.linspace(0.0, 0.9, 81))
        graph = gradient_graph_check(ray).sup_deviation
        residual = hj_residual(spacetime_from_ray(ray), data).sup_residual
        assert np.isfinite(graph) and np.isfinite(residual)
        assert abs(graph - residual) <= 0.1 * max(graph, residual)

    def test_frozen_slices_are_off_graph(self, graph_ray) -> None:
        n = graph_ray.s_grid.size
        frozen = dataclasses.replace(
            graph_ray,
            slices=[graph_ray.slices[0]] * n,
            maximizers=np.full_like(graph_ray.maximizers, np.nan),
        )
        report = gradient_graph_check(frozen)
        assert report.sup_deviation > 0.1
        assert report.checked_nodes > 0

    def test_all_nodes_excluded(self, graph_ray) -> None:
        # Every maximizer on the dual-grid edge leaves nothing to check.
        edge = dataclasses.replace(graph_ray, maximizers=np.zeros_like(graph_ray.maximizers))
        report = gradient_graph_check(edge)
        assert report.checked_nodes == 0
        assert report.sup_deviation == np.inf
        assert report.argmax is None

    def test_ray_past_lifespan(self) -> None:
        data = get_preset("quadratic").build()
        ray = legendre_ray(data, np.linspace(0.0, 1.2, 7))
        with pytest.raises(DomainError, match="beyond the lifespan"):
            gradient_graph_check(ray)

    def test_non_uniform_s_grid(self) -> None:
        data = get_preset("quadratic").build()
        ray = legendre_ray(data, [0.0, 0.1, 0.2, 0.4, 0.5])
        with pytest.raises(GridError, match="uniform"):
            gradient_graph_check(ray)
