"""Batch commands: each runs one experiment from a config and writes its artifacts."""

from __future__ import annotations

import dataclasses
import logging
import time
from pathlib import Path
from typing import Callable

import numpy as np

from toricray.config import ExperimentConfig
from toricray.core.convex import gradient, legendre_transform
from toricray.core.grid import Polytope
from toricray.core.hj import caustic_time, hj_residual, trace_characteristics
from toricray.core.measure import (
    gradient_graph_check,
    smooth_mass,
    spacetime_from_ray,
    weak_solution_check,
)
from toricray.core.moser import (
    conservation_check,
    flow_map,
    group_law_defect,
    invertibility_check,
    leaves,
)
from toricray.core.strip import (
    LineFn,
    laplacian_residual,
    multiplier_identity_defects,
    neumann_identity_defect,
    pw_test,
    toric_leaf_solution,
    widder_extend,
)
from toricray.core.toric import (
    CauchyData,
    RaySolution,
    hcma_lift,
    legendre_ray,
    lifespan_scan,
    smooth_for_all_time,
    to_symplectic,
)
from toricray.errors import ConfigError, DomainError
from toricray.io import OutputDir, RunManifest, lifespan_value, read_gridfn
from toricray.presets import get_preset

logger = logging.getLogger(__name__)

# Relative distance from the lifespan inside which admissibility is not asserted.
LIFESPAN_BAND = 0.02


def load_data(config: ExperimentConfig) -> CauchyData:
    """
    Build the Cauchy data a config refers to.

    Tabulated Kahler-side data (psi0, psidot0) are converted to symplectic potentials first.
    """
    settings = config.data
    polytope = Polytope.from_dict(settings.polytope) if settings.polytope is not None else None
    if settings.preset is not None:
        return get_preset(settings.preset).build(settings.shape, polytope)
    if settings.u0 is not None:
        u0 = read_gridfn(config.resolve(settings.u0))
        udot0 = read_gridfn(config.resolve(settings.udot0))
        return CauchyData(polytope, u0, udot0, name=Path(settings.u0).stem)
    psi0 = read_gridfn(config.resolve(settings.psi0))
    psidot0 = read_gridfn(config.resolve(settings.psidot0))
    logger.info("converting Kahler data %s to symplectic coordinates", settings.psi0)
    return to_symplectic(
        psi0,
        psidot0,
        polytope,
        dual_shape=settings.shape,
        name=Path(settings.psi0).stem,
    )


def _version() -> str:
    from toricray import __version__

    return __version__


def _begin(
    config: ExperimentConfig, command: str, out: Path | str | None
) -> tuple[RunManifest, OutputDir]:
    root = config.output_path(out) / command
    manifest = RunManifest(command=command, version=_version(), config=config.to_dict())
    logger.info("running %s into %s", command, root)
    return manifest, OutputDir(root)


def _finish(manifest: RunManifest, output: OutputDir, started: float) -> RunManifest:
    manifest.wall_clock = time.perf_counter() - started
    output.manifest(manifest)
    logger.info(
        "%s finished in %.2fs: %s", manifest.command, manifest.wall_clock,
        "passed" if manifest.passed else "FAILED",
    )
    return manifest


def _guarded(manifest: RunManifest, name: str, func: Callable[[], dict]) -> dict | None:
    """Run one check; a DomainError makes it fail with the message recorded."""
    try:
        return func()
    except DomainError as e:
        logger.warning("%s: %s", name, e)
        manifest.check(name, False)
        manifest.results.setdefault("errors", {})[name] = str(e)
        return None


def _relative_gap(value: float, reference: float) -> float:
    if np.isinf(value) and np.isinf(reference):
        return 0.0
    if np.isinf(value) or np.isinf(reference):
        return np.inf
    return abs(value - reference) / max(abs(reference), 1e-300)


def _default_seeds(data: CauchyData, count: int) -> tuple[np.ndarray, tuple[int, ...] | None]:
    """Primal seeds x = grad u0(y) for y evenly spread over the dual grid interior."""
    axes = []
    for ax in data.u0.axes:
        h = ax[1] - ax[0]
        axes.append(np.linspace(ax[0] + 2 * h, ax[-1] - 2 * h, count))
    y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, data.dim)
    mesh = None if data.dim == 1 else (count,) * data.dim
    return gradient(data.u0, y), mesh


def _lifespan_reference(config: ExperimentConfig) -> float | None:
    if config.data.preset is None or config.data.polytope is not None:
        return None
    return get_preset(config.data.preset).lifespan


def run_lifespan(config: ExperimentConfig, *, out: Path | str | None = None) -> RunManifest:
    """Convex lifespan with its location; compared against the preset's closed form."""
    started = time.perf_counter()
    manifest, output = _begin(config, "lifespan", out)
    data = load_data(config)
    scan = lifespan_scan(data)
    smooth = smooth_for_all_time(data)
    if not scan.is_finite:
        logger.warning("no convexity obstruction; reports are capped at s=%g", config.s_max_report)
    result = {
        "name": data.name,
        "T_cvx": lifespan_value(scan.lifespan),
        "argmin_node": None if scan.argmin_node is None else list(scan.argmin_node),
        "argmin_location": scan.location,
        "smooth_for_all_time": smooth,
    }
    manifest.check("convex_udot0_means_infinite", not smooth or not scan.is_finite)
    reference = _lifespan_reference(config)
    if reference is not None:
        result["T_reference"] = lifespan_value(reference)
        gap = _relative_gap(scan.lifespan, reference)
        result["relative_gap"] = gap
        manifest.check("lifespan_matches_reference", gap <= config.tolerances.caustic)
    manifest.results = result
    output.json("lifespan.json", result)
    return _finish(manifest, output, started)


def _compute_ray(config: ExperimentConfig, data: CauchyData) -> RaySolution:
    lifespan = lifespan_scan(data).lifespan
    s_grid = config.s_grid(lifespan)
    return legendre_ray(data, s_grid, config.ray.x_box, config.ray.x_shape)


def _admissibility_checks(manifest: RunManifest, ray: RaySolution) -> None:
    T = ray.lifespan
    s = ray.s_grid
    below = s <= (1.0 - LIFESPAN_BAND) * T
    manifest.check("admissible_below_lifespan", bool(np.all(ray.admissible[below])))
    above = s >= (1.0 + LIFESPAN_BAND) * T
    if np.any(above):
        manifest.check("inadmissible_past_lifespan", not bool(np.any(ray.admissible[above])))


def initial_psi0_error(ray: RaySolution) -> float | None:
    """
    Sup |psi_L(0, x) - psi0(x)| against tabulated Kahler data; None for symplectic data.

    Compared on nodes two psi0 cells inside its box whose maximizer lies strictly inside the
    dual grid; elsewhere the slice is the affine extension of u0*.
    """
    data = ray.data
    if data.psi0 is None:
        return None
    first = ray.slices[0]
    nodes = first.nodes()
    half = 0.5 * np.asarray(data.u0.spacing)
    y_star = ray.maximizers[0]
    active = np.all((y_star > data.u0.lower + half) & (y_star < data.u0.upper - half), axis=-1)
    mask = active & data.psi0.inside(nodes, margin_cells=2)
    if not np.any(mask):
        raise DomainError("the initial slice does not overlap the psi0 grid")
    return float(np.max(np.abs(first.values[mask] - data.psi0(nodes[mask]))))


def run_ray(config: ExperimentConfig, *, out: Path | str | None = None) -> RunManifest:
    """Legendre ray slices, their admissibility and the lifted potential phi."""
    started = time.perf_counter()
    manifest, output = _begin(config, "ray", out)
    data = load_data(config)
    ray = _compute_ray(config, data)
    phi = hcma_lift(ray)
    psi = ray.values

    nodes = ray.slices[0].nodes().reshape(-1, data.dim)
    x_cols = [f"x_{k + 1}" for k in range(data.dim)]
    rows = (
        [float(s), *x, float(v), float(p)]
        for k, s in enumerate(ray.s_grid)
        for x, v, p in zip(nodes.tolist(), psi[k].reshape(-1), phi[k].reshape(-1))
    )
    output.csv("ray.csv", ["s", *x_cols, "psi", "phi"], rows)
    output.csv(
        "admissibility.csv",
        ["s", "admissible", "strictly_convex", "covers_polytope", "uncovered_radius",
         "largest_flat", "min_second_difference"],
        (
            [float(s), r.admissible, r.strictly_convex, r.covers_polytope, r.uncovered_radius,
             r.largest_flat, r.min_second_difference]
            for s, r in zip(ray.s_grid, ray.reports)
        ),
    )
    output.gridfn("slice_initial", ray.slices[0])

    # The s = 0 slice is psi0 = u0*; conjugating back must return u0.
    back = legendre_transform(ray.slices[0], data.dual_box, data.shape)
    inner = tuple(slice(2, -2) for _ in range(data.dim))
    involution = float(np.max(np.abs(back.values - data.u0.values)[inner]))
    psi0_error = initial_psi0_error(ray)
    tol = config.tolerances.residual
    manifest.check(
        "initial_slice",
        involution <= tol and (psi0_error is None or psi0_error <= tol),
    )
    _admissibility_checks(manifest, ray)

    first_bad = None
    if not np.all(ray.admissible):
        first_bad = float(ray.s_grid[int(np.argmin(ray.admissible))])
    manifest.results = {
        "ray": ray.to_dict(),
        "lifespan": lifespan_value(ray.lifespan),
        "initial_involution_error": involution,
        "initial_psi0_error": psi0_error,
        "first_inadmissible_s": first_bad,
        "reports": [r.to_dict() for r in ray.reports],
    }
    output.json("ray.json", manifest.results)
    return _finish(manifest, output, started)


def run_flow(config: ExperimentConfig, *, out: Path | str | None = None) -> RunManifest:
    """Leaves, characteristics, caustic time, invertibility and conservation."""
    started = time.perf_counter()
    manifest, output = _begin(config, "flow", out)
    tol = config.tolerances
    data = load_data(config)
    T = lifespan_scan(data).lifespan
    s_grid = config.s_grid(T)
    s_max = float(s_grid[-1])

    if config.flow.seeds is not None:
        seeds = np.asarray(config.flow.seeds, dtype=float).reshape(-1, data.dim)
        mesh = None
    else:
        seeds, mesh = _default_seeds(data, config.flow.seed_count)

    leaf_list = leaves(data, seeds, s_max)
    positions = np.stack([leaf.position(s_grid) for leaf in leaf_list], axis=1)
    design = np.stack([np.ones_like(s_grid), s_grid], axis=1)
    flat = positions.reshape(s_grid.size, -1)
    coef, *_ = np.linalg.lstsq(design, flat, rcond=None)
    straightness = float(np.max(np.abs(design @ coef - flat)))
    manifest.check("leaves_straight", straightness <= 1e-12 * max(1.0, float(np.max(np.abs(flat)))))
    x_cols = [f"x_{k + 1}" for k in range(data.dim)]
    output.csv(
        "leaves.csv",
        ["seed_id", "s", *x_cols],
        (
            [i, float(s), *positions[k, i].tolist()]
            for i in range(len(leaf_list))
            for k, s in enumerate(s_grid)
        ),
    )

    # Characteristics run past the lifespan so the first crossing is seen.
    s_end = 1.5 * T if np.isfinite(T) else config.s_max_report
    char_grid = np.linspace(0.0, s_end, config.ray.s_count)
    strip = trace_characteristics(data, seeds, char_grid, mesh_shape=mesh)
    output.csv(
        "characteristics.csv",
        ["seed_id", "s", *x_cols, "z", "p_sigma", *[f"p_xi_{k + 1}" for k in range(data.dim)]],
        strip.rows(),
    )
    caustic = None
    if strip.n_seeds >= 2 and (data.dim == 1 or mesh is not None):
        caustic = caustic_time(strip)
    if caustic is not None:
        gap = _relative_gap(caustic.first_crossing_s, T)
        manifest.check("caustic_matches_lifespan", gap <= tol.caustic)

    inv = {}
    if np.isfinite(T):
        for label, factor in (("before", 1.0 - LIFESPAN_BAND), ("after", 1.0 + LIFESPAN_BAND)):
            inv[label] = invertibility_check(data, factor * T, tol_det=tol.det)
        flips = inv["before"].invertible and not inv["after"].invertible
        manifest.check("invertibility_flips", flips)
    else:
        inv["s_max"] = invertibility_check(data, s_max, tol_det=tol.det)
        manifest.check("invertible_for_all_tested_s", inv["s_max"].invertible)

    fmap = flow_map(data, s_max, seeds)
    output.csv(
        "flow_map.csv",
        ["s", *[f"{c}_in" for c in x_cols], *[f"{c}_out" for c in x_cols], "jac_det"],
        fmap.rows(),
    )

    def _conservation() -> dict:
        ray = legendre_ray(data, s_grid, config.ray.x_box, config.ray.x_shape)
        report = conservation_check(ray)
        manifest.check("conservation", report.sup_error <= tol.conservation)
        return report.to_dict()

    conservation = _guarded(manifest, "conservation", _conservation)

    def _group_law() -> dict:
        return {"defect": group_law_defect(data, config.flow.s1, config.flow.s2, seeds)}

    try:
        group = _group_law()
    except DomainError as e:
        logger.warning("group law defect not evaluated: %s", e)
        group = {"defect": None, "reason": str(e)}

    manifest.results = {
        "lifespan": lifespan_value(T),
        "n_seeds": int(seeds.shape[0]),
        "leaf_straightness": straightness,
        "caustic": None if caustic is None else caustic.to_dict(),
        "invertibility": {k: v.to_dict() for k, v in inv.items()},
        "conservation": conservation,
        "group_law": dict(group, s1=config.flow.s1, s2=config.flow.s2),
        "flow_map": fmap.to_dict(),
    }
    output.json("flow.json", manifest.results)
    return _finish(manifest, output, started)


def frozen_control(ray: RaySolution) -> RaySolution:
    """
    eta(s, x) = psi0(x) for all s, a convex non-solution.

    No Legendre problem produces these slices for s > 0, so the maximizers are NaN.
    """
    n = ray.s_grid.size
    maximizers = np.full_like(ray.maximizers, np.nan)
    return dataclasses.replace(ray, slices=[ray.slices[0]] * n, maximizers=maximizers)


def run_verify(config: ExperimentConfig, *, out: Path | str | None = None) -> RunManifest:
    """Weak-solution, gradient-graph and Hamilton-Jacobi checks of the ray (or a control)."""
    started = time.perf_counter()
    manifest, output = _begin(config, "verify", out)
    tol = config.tolerances
    settings = config.verify
    data = load_data(config)
    ray = _compute_ray(config, data)
    if settings.frozen:
        logger.info("verifying the frozen control eta = psi0")
        ray = frozen_control(ray)
    eps = settings.perturbation

    def _weak() -> dict:
        report = weak_solution_check(
            ray, levels=settings.levels, perturbation=eps, mass_ratio=tol.mass_ratio
        )
        manifest.check("weak_solution", report.passed)
        output.csv(
            "masses.csv",
            ["level", "h", "total_mass", "max_cell"],
            ([lvl.level, lvl.h, lvl.total, lvl.max_cell] for lvl in report.levels),
        )
        return report.to_dict()

    def _graph() -> dict:
        report = gradient_graph_check(ray)
        checked = report.checked_nodes > 0
        manifest.check("gradient_graph", checked and report.sup_deviation <= tol.graph)
        return report.to_dict()

    def _hj() -> dict:
        eta = spacetime_from_ray(ray, perturbation=eps)
        report = hj_residual(eta, data)
        checked = report.checked_nodes > 0
        manifest.check("hj_residual", checked and report.sup_residual <= tol.residual)
        result = report.to_dict()
        result["smooth_mass"] = smooth_mass(eta)
        return result

    manifest.results = {
        "lifespan": lifespan_value(ray.lifespan),
        "frozen": settings.frozen,
        "perturbation": eps,
        "weak_solution": _guarded(manifest, "weak_solution", _weak),
        "gradient_graph": _guarded(manifest, "gradient_graph", _graph),
        "hj_residual": _guarded(manifest, "hj_residual", _hj),
    }
    output.json("verify.json", manifest.results)
    return _finish(manifest, output, started)


def _default_leaf_points(data: CauchyData, count: int = 5) -> np.ndarray:
    fractions = np.linspace(0.1, 0.9, count)
    y = np.stack([lo + fractions * (hi - lo) for lo, hi in data.dual_box], axis=-1)
    return gradient(data.u0, y)


def _poisson_family(a: float) -> Callable[[np.ndarray], np.ndarray]:
    """a / (pi (a^2 + t^2)), whose transform is exp(-a |xi|)."""
    return lambda t: a / (np.pi * (a**2 + t**2))


def run_obstruction(config: ExperimentConfig, *, out: Path | str | None = None) -> RunManifest:
    """Leafwise toric solutions, the Paley-Wiener sweep and the multiplier identities."""
    started = time.perf_counter()
    manifest, output = _begin(config, "obstruction", out)
    tol = config.tolerances
    strip = config.strip
    data = load_data(config)
    T = strip.T
    s_grid = np.linspace(0.0, T, 33)

    z_points = (
        np.asarray(strip.z, dtype=float).reshape(-1, data.dim)
        if strip.z is not None
        else _default_leaf_points(data)
    )
    leaf_results = []
    for i, z in enumerate(z_points):
        leaf = toric_leaf_solution(
            data, z, T, s_grid, half_width=strip.half_width, samples=strip.samples
        )
        scale = max(1.0, float(np.max(np.abs(leaf.strip_field.values))))
        leaf_ok = (
            leaf.obstruction_vanishes
            and leaf.gap_variation <= 1e-10 * scale
            and leaf.identity_defect <= tol.identity * scale
        )
        manifest.check(f"leaf_{i}", leaf_ok)
        output.csv(f"spectra/leaf_{i}.csv", ["xi", "re", "im", "log_abs"], leaf.pw.spectrum.rows())
        leaf_results.append(leaf.to_dict())
    output.csv(
        "leaves.csv",
        ["leaf_id", *[f"z_{k + 1}" for k in range(data.dim)], "gap", "gap_variation", "trivial",
         "identity_defect", "obstruction_vanishes"],
        (
            [i, *r["z"], r["gap"], r["gap_variation"], r["trivial"], r["identity_defect"],
             r["obstruction_vanishes"]]
            for i, r in enumerate(leaf_results)
        ),
    )

    identities = multiplier_identity_defects(strip.half_width, strip.samples, T)
    manifest.check("multiplier_identities", max(identities.values()) <= tol.identity)

    zero = LineFn(strip.half_width, np.zeros(strip.samples))
    linear = widder_extend(zero, zero.with_values(np.full(strip.samples, T)), T, s_grid)
    widder_error = float(
        np.max(np.abs(linear.values - s_grid[:, np.newaxis])[:, linear.central])
    )
    manifest.check("widder_linear", widder_error <= 1e-3)
    gauss = LineFn.from_function(
        lambda t: np.exp(-(t**2) / 2), strip.half_width, strip.samples, taper=strip.taper
    )
    neumann = neumann_identity_defect(gauss, gauss.with_values(np.roll(gauss.values, 8)), T)

    a = strip.kernel_parameter
    window = (strip.sweep_half_width, strip.samples)
    kernel = LineFn.from_function(_poisson_family(a), *window, taper=strip.taper)
    control = LineFn.from_function(lambda t: np.exp(-(t**2) / 2), *window, taper=strip.taper)
    sweep = []
    for T_k in strip.t_sweep:
        k_res = pw_test(kernel, T_k, margin=tol.pw_margin)
        c_res = pw_test(control, T_k, margin=tol.pw_margin)
        sweep.append({"T": T_k, "kernel": k_res.to_dict(), "gaussian": c_res.to_dict()})
        output.csv(
            f"spectra/kernel_T{T_k:g}.csv", ["xi", "re", "im", "log_abs"], k_res.spectrum.rows()
        )
    output.csv(
        "spectra/gaussian.csv", ["xi", "re", "im", "log_abs"], pw_test(control, 1.0).spectrum.rows()
    )
    output.csv(
        "pw_sweep.csv",
        ["T", "kernel_pass", "kernel_rate", "gaussian_pass", "gaussian_rate"],
        (
            [r["T"], r["kernel"]["pass"], r["kernel"]["fitted_rate"], r["gaussian"]["pass"],
             r["gaussian"]["fitted_rate"]]
            for r in sweep
        ),
    )
    manifest.check("gaussian_control", all(r["gaussian"]["pass"] for r in sweep))

    rate = float(sweep[0]["kernel"]["fitted_rate"]) if sweep else np.nan
    manifest.check("kernel_rate", abs(rate - a) <= tol.bracket * a)
    passes = [r["T"] for r in sweep if r["kernel"]["pass"]]
    fails = [r["T"] for r in sweep if not r["kernel"]["pass"]]
    transition = None
    if passes and fails:
        lo, hi = max(passes), min(fails)
        transition = [lo, hi]
        manifest.check("kernel_transition", lo < hi and abs(0.5 * (lo + hi) - a) <= tol.bracket * a)

    manifest.results = {
        "T": T,
        "leaves": leaf_results,
        "multiplier_identities": identities,
        "widder_linear_error": widder_error,
        "laplacian_residual": laplacian_residual(linear),
        "neumann_identity_defect": neumann,
        "kernel_parameter": a,
        "kernel_rate": rate,
        "transition": transition,
        "sweep": sweep,
    }
    output.json("obstruction.json", manifest.results)
    return _finish(manifest, output, started)


COMMANDS: dict[str, Callable[..., RunManifest]] = {
    "lifespan": run_lifespan,
    "ray": run_ray,
    "flow": run_flow,
    "verify": run_verify,
    "obstruction": run_obstruction,
}


def run(config: ExperimentConfig, *, out: Path | str | None = None) -> RunManifest:
    """Dispatch on ``config.command``."""
    try:
        func = COMMANDS[config.command]
    except KeyError:
        raise ConfigError(f"no command to run (got {config.command!r})") from None
    return func(config, out=out)
