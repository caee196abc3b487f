"""Tests for toricray.core.strip module."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from toricray.core.strip import (
    LineFn,
    fourier,
    hilbert,
    inverse_fourier,
    laplacian_residual,
    multiplier_identity_defects,
    neumann_identity_defect,
    poisson_kernel,
    poisson_mass,
    pw_test,
    toric_leaf_solution,
    widder_extend,
)
from toricray.errors import DomainError
from toricray.presets import get_preset


def _cosine(k: int, half_width: float = 40.0, samples: int = 1024) -> LineFn:
    line = LineFn(half_width, np.zeros(samples))
    return line.with_values(np.cos(np.pi * k / half_width * line.t))


class TestLineFn:
    """Tests for LineFn sampling and validation."""

    @pytest.mark.parametrize("samples", [32, 100])
    def test_rejects_bad_sample_count(self, samples: int) -> None:
        with pytest.raises(DomainError):
            LineFn(10.0, np.zeros(samples))

    def test_rejects_non_finite(self) -> None:
        values = np.zeros(64)
        values[3] = np.nan
        with pytest.raises(DomainError):
            LineFn(10.0, values)

    def test_window(self) -> None:
        f = LineFn.from_function(np.cos, 8.0, 64)
        assert f.dt == pytest.approx(0.25)
        assert f.t[0] == -8.0
        assert np.count_nonzero(f.central) == 33
        # Tukey taper vanishes at the left end.
        assert f.values[0] == 0.0

    def test_fourier_of_gaussian(self) -> None:
        f = LineFn.from_function(lambda t: np.exp(-(t**2)), 20.0, 1024, taper=0.0)
        spec = fourier(f)
        expected = np.sqrt(np.pi) * np.exp(-(spec.xi**2) / 4.0)
        assert_allclose(spec.coeffs.real, expected, atol=1e-10)
        assert len(spec.rows()) == 1024

    def test_inverse_fourier_recovers_samples(self) -> None:
        f = LineFn.from_function(lambda t: np.exp(-(t**2)), 20.0, 1024, taper=0.0)
        back = inverse_fourier(fourier(f), f.half_width)
        assert_allclose(back.values, f.values, atol=1e-12)


class TestMultipliers:
    """Tests for the Fourier multipliers on grid frequencies."""

    def test_identity_defects(self) -> None:
        defects = multiplier_identity_defects(40.0, 1024, 1.0)
        assert set(defects) == {"A_T", "DsinhTD", "hilbert", "positive_projection"}
        assert max(defects.values()) <= 1e-9

    def test_hilbert_of_cosine(self) -> None:
        f = _cosine(8)
        assert_allclose(hilbert(f).values, np.sin(np.pi * 8 / 40.0 * f.t), atol=1e-10)

    def test_hilbert_kills_constants(self) -> None:
        f = LineFn(10.0, np.ones(64))
        assert_allclose(hilbert(f).values, 0.0, atol=1e-14)


class TestPoisson:
    """Tests for the strip Poisson kernel."""

    @pytest.mark.parametrize("s", [0.5, 1.0, np.pi / 2, 2.5])
    def test_mass(self, s: float) -> None:
        assert poisson_mass(s) == pytest.approx((np.pi - s) / np.pi, rel=1e-7)

    def test_width_scaling(self) -> None:
        # P_W(s, t) = (pi/W) P_pi(pi s/W, pi t/W).
        value = poisson_kernel(1.0, 0.5, width=2.0)
        expected = (np.pi / 2.0) * poisson_kernel(np.pi / 2.0, np.pi / 4.0)
        assert float(value) == pytest.approx(float(expected))

    def test_outside_strip(self) -> None:
        with pytest.raises(DomainError):
            poisson_kernel(np.pi, 0.0)


class TestWidder:
    """Tests for the bounded harmonic extension."""

    def test_single_mode(self) -> None:
        a = _cosine(4)
        b = a.with_values(np.zeros(a.n))
        xi = np.pi * 4 / 40.0
        field_ = widder_extend(a, b, 1.0, [0.0, 0.5, 1.0])
        assert_allclose(field_.values[0], a.values, atol=1e-12)
        assert_allclose(field_.values[1], np.sinh(0.5 * xi) / np.sinh(xi) * a.values, atol=1e-12)
        assert_allclose(field_.values[2], 0.0, atol=1e-12)
        assert field_.to_dict()["n_s"] == 3

    def test_harmonic(self) -> None:
        a = _cosine(4)
        b = _cosine(2)
        field_ = widder_extend(a, b, 1.0, np.linspace(0.0, 1.0, 101))
        assert laplacian_residual(field_) <= 1e-3

    def test_neumann_identity(self) -> None:
        a = _cosine(4)
        b = _cosine(16)
        assert neumann_identity_defect(a, b, 1.0) <= 1e-5

    def test_window_mismatch(self) -> None:
        with pytest.raises(DomainError, match="same window"):
            widder_extend(_cosine(1), _cosine(1, samples=512), 1.0, [0.5])

    def test_s_outside_strip(self) -> None:
        with pytest.raises(DomainError):
            widder_extend(_cosine(1), _cosine(1), 1.0, [1.5])


class TestPaleyWiener:
    """Tests for pw_test on inputs with known spectral decay."""

    @pytest.fixture(scope="class")
    def poisson_family(self) -> LineFn:
        # a / (pi (a^2 + t^2)) has transform exp(-a |xi|), here a = 2.
        return LineFn.from_function(lambda t: 2.0 / (np.pi * (4.0 + t**2)), 400.0, 4096)

    def test_rate_below_width_passes(self, poisson_family) -> None:
        result = pw_test(poisson_family, 1.5)
        assert result.passed
        assert result.fitted_rate == pytest.approx(2.0, rel=0.05)
        assert not result.super_exponential

    def test_rate_above_width_fails(self, poisson_family) -> None:
        result = pw_test(poisson_family, 2.5)
        assert not result.passed
        assert result.to_dict()["pass"] is False

    def test_gaussian_passes_every_width(self) -> None:
        f = LineFn.from_function(lambda t: np.exp(-(t**2)), 400.0, 4096)
        result = pw_test(f, 50.0)
        assert result.passed
        assert result.super_exponential

    def test_zero_input(self) -> None:
        result = pw_test(LineFn(10.0, np.zeros(64)), 3.0)
        assert result.passed
        assert result.to_dict()["fitted_rate"] == "inf"


class TestLeafSolution:
    """Tests for toric_leaf_solution."""

    def test_quadratic_leaf(self) -> None:
        data = get_preset("quadratic").build()
        leaf = toric_leaf_solution(data, 1.0, 1.0, np.linspace(0.0, 1.0, 5))
        # y = 1/2, w = -1: q = 1/4, p = 1/2 and chi(s) = (1 - s)/4.
        assert leaf.gap == pytest.approx(-0.25, abs=1e-6)
        assert leaf.gap_variation == pytest.approx(0.0, abs=1e-12)
        assert not leaf.trivial
        assert leaf.obstruction_vanishes
        chi = 0.25 * (1.0 - np.linspace(0.0, 1.0, 5))
        assert_allclose(leaf.strip_field.values[:, 0], chi, atol=1e-6)
        assert leaf.identity_defect <= 1e-8
        assert leaf.to_dict()["z"] == [1.0]

    def test_drift_leaf_is_trivial(self) -> None:
        data = get_preset("drift").build()
        leaf = toric_leaf_solution(data, 0.3, 1.0, [0.0, 1.0])
        assert leaf.trivial

    def test_outside_dual_interior(self) -> None:
        data = get_preset("quadratic").build()
        with pytest.raises(DomainError):
            toric_leaf_solution(data, 1.9999, 1.0, [0.0, 1.0])

    def test_quartic_leaf_follows_legendre_potential(self) -> None:
        data = get_preset("quartic").build()
        s = np.linspace(0.0, 0.8, 9)
        leaf = toric_leaf_solution(data, 0.5, 1.0, s)
        y = float(data.grad_psi0(0.5)[0])
        # u0' = y + y^3/3 and udot0' = -y, so the leaf moves x by -y per unit s.
        u_s = 0.5 * y**2 + y**4 / 12.0 - 0.5 * s * y**2
        chi = y * (0.5 - s * y) - u_s
        field_ = leaf.strip_field.values
        assert_allclose(field_[:, 0], chi, atol=2e-5)
        assert_allclose(field_, np.broadcast_to(field_[:, :1], field_.shape), atol=1e-12)
        assert_allclose(leaf.q.values, float(data.psidot0_value(0.5)), atol=1e-12)
        assert leaf.gap == pytest.approx(-0.5 * y**2, abs=1e-3)

    def test_s_grid_must_start_at_zero(self) -> None:
        data = get_preset("quadratic").build()
        with pytest.raises(DomainError, match="start at 0"):
            toric_leaf_solution(data, 1.0, 1.0, [0.5, 1.0])
