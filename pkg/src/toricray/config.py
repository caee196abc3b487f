"""Experiment configuration: one JSON document parsed into validated dataclasses."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from toricray.errors import ConfigError

logger = logging.getLogger(__name__)

COMMANDS = ("lifespan", "ray", "flow", "verify", "obstruction")
ENV_OUT_DIR = "TORICRAY_OUT_DIR"
DEFAULT_OUTPUT_DIR = "toricray-out"


@dataclass
class DataSettings:
    """Where the Cauchy data come from: a preset id, or a pair of GridFn files on the
    symplectic side (u0, udot0) or on the Kahler side (psi0, psidot0)."""

    preset: str | None = "quadratic"
    shape: list[int] | None = None
    polytope: dict | None = None
    u0: str | None = None
    udot0: str | None = None
    psi0: str | None = None
    psidot0: str | None = None

    def file_pair(self) -> tuple[str, str] | None:
        """The tabulated pair in use, symplectic side first."""
        if self.u0 is not None or self.udot0 is not None:
            return self.u0, self.udot0
        if self.psi0 is not None or self.psidot0 is not None:
            return self.psi0, self.psidot0
        return None


@dataclass
class RaySettings:
    s_max: float | None = None
    s_count: int = 81
    s_grid: list[float] | None = None
    x_box: list[list[float]] | None = None
    x_shape: list[int] | None = None


@dataclass
class FlowSettings:
    seed_count: int = 21
    seeds: list[list[float]] | None = None
    s1: float = 0.3
    s2: float = 0.3


@dataclass
class VerifySettings:
    levels: int = 3
    perturbation: float = 0.0
    frozen: bool = False


@dataclass
class StripSettings:
    """Strip width, sampling window and the Paley-Wiener sweep."""

    T: float = 1.0
    half_width: float = 40.0
    samples: int = 4096
    taper: float = 0.2
    z: list[list[float]] | None = None
    kernel_parameter: float = 2.0
    t_sweep: list[float] = field(default_factory=lambda: [1.0, 1.5, 1.9, 2.1, 2.5, 3.0])
    sweep_half_width: float = 400.0


@dataclass
class Tolerances:
    """Acceptance thresholds of the checks."""

    det: float = 1e-6
    conservation: float = 1e-3
    residual: float = 1e-3
    graph: float = 1e-3
    caustic: float = 0.01
    mass_ratio: float = 0.6
    pw_margin: float = 0.02
    identity: float = 1e-8
    bracket: float = 0.05

    def scaled(self, factor: float) -> Tolerances:
        """Loosen (factor > 1) or tighten the acceptance thresholds."""
        if not factor > 0:
            raise ConfigError(f"tolerance scale must be positive, got {factor}")
        return dataclasses.replace(
            self,
            conservation=self.conservation * factor,
            residual=self.residual * factor,
            graph=self.graph * factor,
            caustic=self.caustic * factor,
            identity=self.identity * factor,
        )


_SECTIONS = {
    "data": DataSettings,
    "ray": RaySettings,
    "flow": FlowSettings,
    "verify": VerifySettings,
    "strip": StripSettings,
    "tolerances": Tolerances,
}


def _section(cls: type, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(f"{name}: {e}") from e


@dataclass
class ExperimentConfig:
    """A validated experiment description; ``base_dir`` resolves relative file references."""

    command: str | None = None
    data: DataSettings = field(default_factory=DataSettings)
    ray: RaySettings = field(default_factory=RaySettings)
    flow: FlowSettings = field(default_factory=FlowSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    strip: StripSettings = field(default_factory=StripSettings)
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str = DEFAULT_OUTPUT_DIR
    s_max_report: float = 100.0
    base_dir: Path = field(default_factory=Path, compare=False, repr=False)

    def __post_init__(self) -> None:
        try:
            self.validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid config value: {e}") from e

    @classmethod
    def from_dict(cls, raw: dict, *, base_dir: Path | None = None) -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        top = {"command", "output_dir", "s_max_report", *_SECTIONS}
        unknown = sorted(set(raw) - top)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
        sections = {name: _section(cls_, raw.get(name), name) for name, cls_ in _SECTIONS.items()}
        data = raw.get("data") or {}
        tabulated = {"u0", "udot0", "psi0", "psidot0"}
        if isinstance(data, dict) and "preset" not in data and tabulated & set(data):
            sections["data"].preset = None
        return cls(
            command=raw.get("command"),
            output_dir=raw.get("output_dir", DEFAULT_OUTPUT_DIR),
            s_max_report=raw.get("s_max_report", 100.0),
            base_dir=base_dir if base_dir is not None else Path(),
            **sections,
        )

    @classmethod
    def from_file(cls, path: Path | str) -> ExperimentConfig:
        """
        Read a config file.

        Raises:
            ConfigError: unreadable file or invalid JSON (with line and column), or a schema
                violation.
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
        logger.debug("loaded config %s", path)
        return cls.from_dict(raw, base_dir=path.resolve().parent)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"command": self.command}
        for name in _SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        out["output_dir"] = self.output_dir
        out["s_max_report"] = self.s_max_report
        return out

    def validate(self) -> None:
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {', '.join(COMMANDS)}, got {self.command!r}")
        self._validate_data()
        ray = self.ray
        if ray.s_grid is not None:
            s = np.asarray(ray.s_grid, dtype=float)
            if s.ndim != 1 or s.size < 2 or s[0] != 0.0 or np.any(np.diff(s) <= 0):
                raise ConfigError("ray.s_grid must be increasing from 0 with at least two entries")
        if ray.s_count < 3:
            raise ConfigError("ray.s_count must be at least 3")
        if ray.s_max is not None and not ray.s_max > 0:
            raise ConfigError("ray.s_max must be positive")
        for name, value in dataclasses.asdict(self.tolerances).items():
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f"tolerances.{name} must be positive, got {value!r}")
        if self.flow.seed_count < 2:
            raise ConfigError("flow.seed_count must be at least 2")
        if self.verify.levels < 2:
            raise ConfigError("verify.levels must be at least 2")
        if not self.strip.T > 0:
            raise ConfigError("strip.T must be positive")
        samples = self.strip.samples
        if samples < 64 or samples & (samples - 1):
            raise ConfigError(f"strip.samples must be a power of two >= 64, got {samples}")
        if not self.s_max_report > 0:
            raise ConfigError("s_max_report must be positive")

    def _validate_data(self) -> None:
        data = self.data
        symplectic = (data.u0, data.udot0)
        kahler = (data.psi0, data.psidot0)
        given = [f for f in symplectic + kahler if f is not None]
        if data.preset is None:
            if any(f is not None for f in symplectic) and any(f is not None for f in kahler):
                raise ConfigError("data.u0/udot0 and data.psi0/psidot0 are mutually exclusive")
            files = data.file_pair()
            if files is None or None in files:
                raise ConfigError(
                    "data needs either a preset or both u0 and udot0 (or psi0 and psidot0) files"
                )
            if data.polytope is None:
                raise ConfigError("data.polytope is required with tabulated data")
            for ref in files:
                if not self.resolve(ref).is_file():
                    raise ConfigError(f"data file not found: {ref}")
        elif given:
            raise ConfigError("data.preset and tabulated data files are mutually exclusive")
        if data.shape is not None and any(int(n) < 5 for n in data.shape):
            raise ConfigError(f"data.shape needs at least 5 nodes per axis, got {data.shape}")

    def resolve(self, ref: str) -> Path:
        """Path of a file reference relative to the config file."""
        path = Path(ref)
        return path if path.is_absolute() else self.base_dir / path

    def output_path(self, override: str | Path | None = None) -> Path:
        """Output directory: ``override`` beats ``$TORICRAY_OUT_DIR`` beats ``output_dir``."""
        if override is not None:
            return Path(override)
        env = os.environ.get(ENV_OUT_DIR)
        if env:
            return Path(env)
        return self.resolve(self.output_dir)

    def with_overrides(
        self,
        *,
        command: str | None = None,
        seed_count: int | None = None,
        tol_scale: float | None = None,
    ) -> ExperimentConfig:
        """Copy with CLI overrides applied."""
        flow = self.flow
        if seed_count is not None:
            flow = dataclasses.replace(flow, seed_count=seed_count)
        tolerances = self.tolerances if tol_scale is None else self.tolerances.scaled(tol_scale)
        return dataclasses.replace(
            self,
            command=command or self.command,
            flow=flow,
            tolerances=tolerances,
        )

    def default_s_max(self, lifespan: float) -> float:
        if self.ray.s_max is not None:
            return float(self.ray.s_max)
        if np.isfinite(lifespan):
            return 0.9 * lifespan
        return min(self.s_max_report / 10.0, 1.0)

    def s_grid(self, lifespan: float) -> np.ndarray:
        """Explicit ``ray.s_grid`` or ``s_count`` uniform times on [0, s_max]."""
        if self.ray.s_grid is not None:
            return np.asarray(self.ray.s_grid, dtype=float)
        return np.linspace(0.0, self.default_s_max(lifespan), self.ray.s_count)
