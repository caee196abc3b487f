"""Reading and writing grids, CSV tables, JSON results and the run manifest."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from toricray.core.grid import GridFn
from toricray.errors import ConfigError

logger = logging.getLogger(__name__)

INFINITE_LIFESPAN = "infinite (no obstruction found)"
MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"


def format_float(value: float) -> str:
    """Seventeen significant digits; enough to round-trip a double."""
    return "%.17g" % value


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def lifespan_value(lifespan: float) -> float | str:
    return lifespan if math.isfinite(lifespan) else INFINITE_LIFESPAN


def _coord_columns(dim: int) -> list[str]:
    return [f"x_{k + 1}" for k in range(dim)]


def write_gridfn(stem: Path, f: GridFn) -> tuple[Path, Path]:
    """
    Write ``<stem>.json`` (header) and ``<stem>.csv`` (one row per node, row-major).

    Returns:
        The header and body paths.
    """
    columns = _coord_columns(f.dim) + ["value"]
    header = dict(f.to_dict(), columns=columns, body=stem.name + ".csv")
    nodes = f.nodes().reshape(-1, f.dim)
    values = f.values.reshape(-1)
    body = write_csv(stem.with_suffix(".csv"), columns, ([*p, v] for p, v in zip(nodes, values)))
    return write_json(stem.with_suffix(".json"), header), body


def read_gridfn(path: Path | str) -> GridFn:
    """
    Read a GridFn from its JSON header (the CSV body is found next to it).

    Raises:
        ConfigError: missing files or a body that does not match the header.
    """
    path = Path(path)
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read grid header {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    for key in ("box", "shape"):
        if key not in header:
            raise ConfigError(f"{path}: grid header lacks {key!r}")
    shape = tuple(int(n) for n in header["shape"])
    body = path.with_name(header.get("body", path.with_suffix(".csv").name))
    try:
        table = np.loadtxt(body, delimiter=",", skiprows=1, ndmin=2)
    except OSError as e:
        raise ConfigError(f"cannot read grid body {body}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"{body}: {e}") from e
    if table.shape[0] != int(np.prod(shape)) or table.shape[1] != len(shape) + 1:
        rows = int(np.prod(shape))
        raise ConfigError(f"{body}: expected {rows} rows of {len(shape) + 1} columns")
    return GridFn(
        header["box"],
        table[:, -1].reshape(shape),
        convex_hint=bool(header.get("convex_hint", False)),
    )


@dataclass
class RunManifest:
    """Record of one command run: config echo, artifacts and check outcomes.

    ``wall_clock`` is kept out of ``to_dict`` so equal runs write identical manifests.
    """

    command: str
    version: str
    config: dict
    wall_clock: float = field(default=0.0, compare=False)
    artifacts: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    results: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def check(self, name: str, ok: bool) -> bool:
        self.checks[name] = bool(ok)
        if not ok:
            logger.warning("check %s failed", name)
        return bool(ok)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "artifacts": list(self.artifacts),
            "checks": dict(self.checks),
            "passed": self.passed,
            "results": self.results,
        }


class OutputDir:
    """Writes artifacts under one directory and records their relative paths."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self.artifacts: list[str] = []

    def _track(self, path: Path) -> Path:
        rel = path.relative_to(self.root).as_posix()
        if rel not in self.artifacts:
            self.artifacts.append(rel)
        return path

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self._track(write_csv(self.root / name, header, rows))

    def json(self, name: str, obj: Any) -> Path:
        return self._track(write_json(self.root / name, obj))

    def gridfn(self, stem: str, f: GridFn) -> tuple[Path, Path]:
        head, body = write_gridfn(self.root / stem, f)
        return self._track(head), self._track(body)

    def manifest(self, manifest: RunManifest) -> Path:
        """Write ``manifest.json`` and, beside it, the untracked ``timing.json``."""
        manifest.artifacts = list(self.artifacts)
        write_json(
            self.root / TIMING_NAME,
            {"command": manifest.command, "wall_clock": manifest.wall_clock},
        )
        return write_json(self.root / MANIFEST_NAME, manifest.to_dict())
