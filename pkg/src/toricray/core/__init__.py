"""Core library: sampled convex functions, the Legendre ray and its verification."""

from toricray.core.convex import (
    biconjugate,
    contact_set,
    convexity_report,
    gradient,
    hessian,
    invert_gradient,
    legendre_transform,
)
from toricray.core.grid import GridFn, Polytope, SpacetimeFn
from toricray.core.hj import caustic_time, hj_residual, hopf_lax_value, trace_characteristics
from toricray.core.measure import alexandrov_mass, gradient_graph_check, weak_solution_check
from toricray.core.moser import conservation_check, invertibility_check, leaves, moser_map
from toricray.core.strip import (
    LineFn,
    hilbert,
    multiplier_AT,
    multiplier_DsinhTD,
    pw_test,
    toric_leaf_solution,
    widder_extend,
)
from toricray.core.toric import (
    CauchyData,
    RaySolution,
    admissibility_check,
    convex_lifespan,
    hcma_lift,
    legendre_ray,
    to_symplectic,
)

__all__ = [
    "biconjugate",
    "contact_set",
    "convexity_report",
    "gradient",
    "hessian",
    "invert_gradient",
    "legendre_transform",
    "GridFn",
    "Polytope",
    "SpacetimeFn",
    "caustic_time",
    "hj_residual",
    "hopf_lax_value",
    "trace_characteristics",
    "alexandrov_mass",
    "gradient_graph_check",
    "weak_solution_check",
    "conservation_check",
    "invertibility_check",
    "leaves",
    "moser_map",
    "LineFn",
    "hilbert",
    "multiplier_AT",
    "multiplier_DsinhTD",
    "pw_test",
    "toric_leaf_solution",
    "widder_extend",
    "CauchyData",
    "RaySolution",
    "admissibility_check",
    "convex_lifespan",
    "hcma_lift",
    "legendre_ray",
    "to_symplectic",
]
