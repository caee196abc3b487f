"""Tests for toricray.presets module."""

from __future__ import annotations

import numpy as np
import pytest

from toricray.core.grid import Polytope
from toricray.core.toric import convex_lifespan
from toricray.errors import ConfigError
from toricray.presets import PRESETS, get_preset, list_presets


class TestRegistry:
    """Tests for the preset registry."""

    def test_names(self) -> None:
        assert [p.name for p in list_presets()] == sorted(PRESETS)
        assert {"quadratic", "drift", "quartic", "logistic", "quadratic2d"} <= set(PRESETS)

    def test_unknown(self) -> None:
        with pytest.raises(ConfigError, match="known: "):
            get_preset("cubic")

    def test_to_dict(self) -> None:
        d = get_preset("drift").to_dict()
        assert d["lifespan"] == "inf"
        assert d["polytope"] == [[-1.0, 1.0]]
        assert get_preset("quadratic2d").to_dict()["default_shape"] == [41, 41]


class TestBuild:
    """Tests for sampling presets as Cauchy data."""

    @pytest.mark.parametrize("name", ["quadratic", "quartic", "logistic", "quadratic2d"])
    def test_lifespan_matches_closed_form(self, name: str) -> None:
        preset = get_preset(name)
        assert convex_lifespan(preset.build()) == pytest.approx(preset.lifespan, rel=1e-3)

    def test_shape_override(self) -> None:
        data = get_preset("quadratic").build(101)
        assert data.shape == (101,)
        assert data.name == "quadratic"

    def test_logistic_inset(self) -> None:
        data = get_preset("logistic").build()
        ((lo, hi),) = data.dual_box
        assert lo == pytest.approx(0.02)
        assert hi == pytest.approx(0.98)

    def test_translated_polytope(self) -> None:
        data = get_preset("quadratic").build(polytope=Polytope.interval(1.0, 2.0))
        assert data.dual_box == ((1.0, 2.0),)
        assert np.all(np.isfinite(data.u0.values))

    def test_polytope_dimension_mismatch(self) -> None:
        with pytest.raises(ConfigError, match="1-dimensional"):
            get_preset("quadratic").build(polytope=Polytope.box([[0, 1], [0, 1]]))
