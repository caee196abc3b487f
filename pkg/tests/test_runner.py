"""Tests for toricray.runner module."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from toricray.config import ExperimentConfig
from toricray.core.grid import GridFn
from toricray.core.measure import spacetime_from_ray
from toricray.core.toric import legendre_ray
from toricray.io import write_gridfn
from toricray.presets import get_preset
from toricray.runner import frozen_control, initial_psi0_error, load_data, run_ray, run_verify


@pytest.fixture(scope="module")
def kahler_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("kahler")
    x_box = [-4.0, 4.0]
    psi0 = GridFn.from_function(lambda x: np.logaddexp(0.0, x), x_box, 801)
    psidot0 = GridFn.from_function(lambda x: 0.5 * np.tanh(0.5 * x) ** 2, x_box, 801)
    write_gridfn(root / "psi0", psi0)
    write_gridfn(root / "psidot0", psidot0)
    raw = {
        "data": {
            "psi0": "psi0.json",
            "psidot0": "psidot0.json",
            "shape": [201],
            "polytope": {"normals": [[1], [-1]], "offsets": [1.0, 0.0]},
        },
        "ray": {"s_count": 11},
    }
    (root / "exp.json").write_text(json.dumps(raw))
    return root


class TestInitialSlice:
    """Tests for the initial-slice check of run_ray."""

    def test_kahler_slice_matches_psi0(self, kahler_dir: Path, tmp_path: Path) -> None:
        config = ExperimentConfig.from_file(kahler_dir / "exp.json")
        manifest = run_ray(config, out=tmp_path)
        assert manifest.checks["initial_slice"] is True
        assert manifest.results["initial_psi0_error"] <= 1e-3

    def test_shifted_psi0_is_detected(self, kahler_dir: Path) -> None:
        config = ExperimentConfig.from_file(kahler_dir / "exp.json")
        data = load_data(config)
        ray = legendre_ray(data, np.linspace(0.0, 0.5, 6))
        shifted = data.psi0.with_values(data.psi0.values + 0.01)
        moved = dataclasses.replace(ray, data=dataclasses.replace(data, psi0=shifted))
        assert initial_psi0_error(ray) <= 1e-3
        assert_allclose(initial_psi0_error(moved), 0.01, atol=1e-3)

    def test_symplectic_data_have_no_psi0(self) -> None:
        ray = legendre_ray(get_preset("quadratic").build(101), [0.0, 0.1])
        assert initial_psi0_error(ray) is None


class TestFrozenControl:
    """Tests for the frozen control eta = psi0 used by run_verify."""

    def test_maximizers_are_invalid(self) -> None:
        ray = legendre_ray(get_preset("quadratic").build(101), np.linspace(0.0, 0.8, 9))
        frozen = frozen_control(ray)
        assert np.all(np.isnan(frozen.maximizers))
        assert_allclose(frozen.values, np.broadcast_to(ray.values[0], ray.values.shape))
        assert spacetime_from_ray(frozen).subgradients is None

    def test_verify_checks(self, tmp_path: Path) -> None:
        raw = {"data": {"preset": "quadratic"}, "verify": {"frozen": True}}
        config = ExperimentConfig.from_dict(raw)
        manifest = run_verify(config, out=tmp_path)
        # psi0 held in s is degenerate, so only the graph and HJ checks can reject it.
        assert manifest.checks["weak_solution"] is True
        assert manifest.checks["gradient_graph"] is False
        assert manifest.checks["hj_residual"] is False
        assert manifest.results["hj_residual"]["sup_residual"] > 0.1
        assert manifest.results["gradient_graph"]["sup_deviation"] > 0.1
