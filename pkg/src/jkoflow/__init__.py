"""Minimizing-movement solver for inhomogeneous Darcy-law diffusion.

Implicit time stepping of rho_t = div(rho grad p), p in the
subdifferential of a convex (possibly space-dependent) energy density,
via concave ascent on the dual transport problem with duality-gap
certificates.
"""

from .energy import (
    EnergyDensity,
    QuadraticEnergy,
    PowerLawEnergy,
    EntropyEnergy,
    WeightedEnergy,
    SumEnergy,
    TabulatedEnergy,
    legendre_numeric,
    regularize_delta,
    regularize_logexp,
    check_assumptions,
    NonConvexTableError,
)
from .grids import (
    Grid,
    ScalarField,
    QuadraticCost,
    KernelCost,
    read_field,
    write_field,
    c_transform,
    c_transform_brute,
    c_transform_fast,
    cbar_transform,
    c_concavify,
    forward_map,
    pushforward,
    TransportMapSample,
    grad_field,
)
from .jko import (
    SolverConfig,
    JkoStepResult,
    jko_step,
    dual_value,
    primal_value,
    transport_cost_1d_exact,
    smallest_pressure_select,
    largest_pressure_pool,
    InfeasibleDataError,
)
from .flow import (
    run_flow,
    stationary_barrier,
    Barrier,
    FlowLedger,
    edi_slack,
)
from . import verify

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
