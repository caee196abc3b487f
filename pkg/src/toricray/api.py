"""Public API: use toricray from Python or from other tools."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from toricray.config import ExperimentConfig
from toricray.core.grid import Polytope
from toricray.core.toric import CauchyData, LifespanScan, RaySolution, legendre_ray, lifespan_scan
from toricray.io import RunManifest
from toricray.presets import Preset, get_preset, list_presets
from toricray.runner import run


def load_preset(
    name: str,
    *,
    shape: int | Sequence[int] | None = None,
    polytope: Polytope | None = None,
) -> CauchyData:
    """
    Sample a named preset as Cauchy data.

    Args:
        name: Preset id (see ``available_presets``).
        shape: Grid shape; the preset's default when omitted.
        polytope: Replacement moment polytope, e.g. a translate of the default one.
    """
    return get_preset(name).build(shape, polytope)


def available_presets() -> list[Preset]:
    return list_presets()


def lifespan(data: CauchyData) -> LifespanScan:
    """Convex lifespan of the data with the node where convexity is lost first."""
    return lifespan_scan(data)


def compute_ray(
    data: CauchyData,
    *,
    s_max: float | None = None,
    s_count: int = 81,
    x_box: Sequence | None = None,
    x_shape: Sequence[int] | None = None,
) -> RaySolution:
    """
    Legendre-transform ray on a uniform s-grid.

    ``s_max`` defaults to 0.9 times a finite lifespan and to 1 otherwise.
    """
    if s_max is None:
        T = lifespan_scan(data).lifespan
        s_max = 0.9 * T if np.isfinite(T) else 1.0
    s_grid = np.linspace(0.0, s_max, s_count)
    return legendre_ray(data, s_grid, x_box, x_shape)


def run_experiment(
    config: ExperimentConfig | dict | str | Path,
    *,
    command: str | None = None,
    out: str | Path | None = None,
    seed_count: int | None = None,
    tol_scale: float | None = None,
) -> RunManifest:
    """
    Run one batch command the way the CLI does.

    Args:
        config: A config object, a dict in the JSON schema, or a path to a JSON file.
        command: Command to run; overrides the config's own ``command``.
        out: Output directory; overrides ``output_dir`` and ``$TORICRAY_OUT_DIR``.
        seed_count: Override for ``flow.seed_count``.
        tol_scale: Factor applied to the acceptance tolerances.

    Returns:
        The RunManifest, also written to ``<out>/<command>/manifest.json``.
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    elif not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_file(config)
    config = config.with_overrides(command=command, seed_count=seed_count, tol_scale=tol_scale)
    return run(config, out=out)
