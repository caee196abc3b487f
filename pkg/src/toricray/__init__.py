"""toricray: numerical lab for the toric Cauchy problem of the complex Monge-Ampere equation."""

from importlib.metadata import version, PackageNotFoundError

from toricray.api import (
    available_presets,
    compute_ray,
    lifespan,
    load_preset,
    run_experiment,
)
from toricray.config import ExperimentConfig
from toricray.core.toric import CauchyData, RaySolution
from toricray.io import RunManifest

__all__ = [
    "available_presets",
    "compute_ray",
    "lifespan",
    "load_preset",
    "run_experiment",
    "CauchyData",
    "ExperimentConfig",
    "RaySolution",
    "RunManifest",
    "__version__",
]

try:
    __version__ = version("toricray")
except PackageNotFoundError:
    __version__ = "0.0.0+unknown"  # Not installed as package
