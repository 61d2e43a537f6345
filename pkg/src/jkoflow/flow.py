"""Time iteration of the minimizing-movement step with an audit ledger.

A flow is the left-continuous piecewise-constant interpolation of the
discrete states: the snapshot at step n is the state after n steps, valid
on the time slab [n tau, (n+1) tau).  The ledger records per step the
energy, the step transport cost, the cumulative dissipation
(tau/2) sum rho |grad p|^2 dV, the certified gap, the mass and the field
ranges, which together witness the discrete energy dissipation inequality
up to twice the accumulated gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grids import Grid, ScalarField, QuadraticCost, grad_field
from .jko import SolverConfig, jko_step, admissible_mass_bound, InfeasibleDataError


@dataclass
class LedgerRow:
    step: int
    time: float
    energy: float
    step_cost: float
    cum_dissipation: float
    gap: float
    mass: float
    rho_min: float
    rho_max: float
    p_min: float
    p_max: float


@dataclass
class FlowLedger:
    rows: list = field(default_factory=list)

    COLUMNS = (
        "step,time,energy,step_cost,cum_dissipation,gap,mass,"
        "rho_min,rho_max,p_min,p_max"
    )

    def append(self, row):
        self.rows.append(row)

    def to_csv(self, f):
        own = isinstance(f, str)
        fh = open(f, "w") if own else f
        try:
            fh.write(self.COLUMNS + "\n")
            for r in self.rows:
                vals = [
                    str(r.step),
                    *(format(v, ".17g") for v in (
                        r.time, r.energy, r.step_cost, r.cum_dissipation,
                        r.gap, r.mass, r.rho_min, r.rho_max, r.p_min, r.p_max,
                    )),
                ]
                fh.write(",".join(vals) + "\n")
        finally:
            if own:
                fh.close()


@dataclass
class Barrier:
    """Stationary profile of prescribed mass: the minimizer of E at fixed mass."""

    lam: float
    alpha: float
    rho: ScalarField
    a: float     # essential lower bound of the profile
    b: float     # essential upper bound


def stationary_barrier(energy, grid, lam, alpha_tol=4e-14, mass_tol=1e-12):
    """Construct the fixed-mass stationary profile rho = dp_s*(alpha, x).

    The level alpha is found by bisection on the monotone mass map with a
    left bias: across a flat stretch of the map the smallest admissible
    level is approached.
    """
    coords = grid.coords
    vol = grid.cell_volume

    def mass_at(alpha):
        with np.errstate(over="ignore"):
            d = np.asarray(energy.dp_s_star(np.full(grid.shape, alpha), coords), float)
        return float(np.minimum(d, 1e300).sum() * vol)

    if not 0 < lam:
        raise InfeasibleDataError("barrier mass must be positive")
    if not lam < admissible_mass_bound(energy, grid):
        raise InfeasibleDataError("barrier mass exceeds the admissible bound")

    lo, hi = -1.0, 1.0
    for _ in range(300):
        if mass_at(lo) < lam:
            break
        lo *= 2
    for _ in range(300):
        if mass_at(hi) >= lam:
            break
        hi *= 2
    # left-biased bisection: keep the invariant mass(lo) < lam <= mass(hi)
    while hi - lo > alpha_tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if mass_at(mid) < lam:
            lo = mid
        else:
            hi = mid
    alpha = hi
    rho_vals = np.asarray(energy.dp_s_star(np.full(grid.shape, alpha), coords), float)
    rho = ScalarField(grid, rho_vals, role="density")
    if abs(rho.mass() - lam) > max(mass_tol, 1e-12 * max(1.0, lam)):
        raise InfeasibleDataError(
            f"bisection failed to meet the target mass: {rho.mass():.15g} vs {lam:.15g}"
        )
    return Barrier(
        lam=lam,
        alpha=float(alpha),
        rho=rho,
        a=float(rho_vals.min()),
        b=float(rho_vals.max()),
    )


@dataclass
class FlowResult:
    snapshots: dict
    ledger: FlowLedger
    pressures: dict
    completed: bool
    steps_done: int


def run_flow(
    rho0,
    energy,
    tau,
    T,
    config=None,
    snapshot_every=1,
    m_bound=None,
    allow_uncertified=False,
    on_step=None,
):
    """Iterate certified steps until time T (N = ceil(T / tau) steps).

    Snapshots are stored at step multiples of ``snapshot_every`` (plus the
    initial and final states).  A step that misses its gap target aborts
    the run with partial outputs unless ``allow_uncertified`` is set.
    ``m_bound``, when given, asserts rho0 <= dp_s*(m_bound, .) and is only a
    warning when violated, since the scheme still runs.
    """
    config = config or SolverConfig()
    grid = rho0.grid
    cost = QuadraticCost(tau)
    warnings = []
    if m_bound is not None:
        cap = np.asarray(energy.dp_s_star(np.full(grid.shape, m_bound), grid.coords), float)
        if np.any(rho0.values > cap + 1e-12):
            warnings.append(
                f"initial density exceeds dp_s*({m_bound}) somewhere; bounds may fail"
            )
    n_steps = max(int(math.ceil(T / tau - 1e-12)), 0)
    vol = grid.cell_volume

    ledger = FlowLedger()
    snapshots = {0: rho0}
    pressures = {}
    rho = rho0
    e0 = float(np.asarray(energy.eval_s(rho.values, grid.coords)).sum() * vol)
    ledger.append(
        LedgerRow(
            step=0, time=0.0, energy=e0, step_cost=0.0, cum_dissipation=0.0,
            gap=0.0, mass=rho.mass(), rho_min=float(rho.values.min()),
            rho_max=float(rho.values.max()), p_min=float("nan"), p_max=float("nan"),
        )
    )
    cum_diss = 0.0
    warm = config.initial_pressure
    completed = True
    for n in range(1, n_steps + 1):
        cfg = replace(config, initial_pressure=warm)
        res = jko_step(rho, energy, cost, cfg)
        if not res.certified and not allow_uncertified:
            completed = False
            break
        pvals = res.p_star.values
        rho_new = res.rho_star
        gp = grad_field(pvals, grid)
        w = rho_new.values
        if grid.dim == 1:
            dsq = gp * gp
        else:
            dsq = (gp * gp).sum(axis=-1)
        dsq = np.where(w > 0, dsq, 0.0)   # dissipation only where mass sits
        cum_diss += 0.5 * tau * float((w * dsq).sum() * vol)
        energy_now = float(np.asarray(energy.eval_s(rho_new.values, grid.coords)).sum() * vol)
        step_cost = max(res.primal_value - energy_now, 0.0)
        ledger.append(
            LedgerRow(
                step=n, time=n * tau, energy=energy_now, step_cost=step_cost,
                cum_dissipation=cum_diss, gap=res.gap, mass=rho_new.mass(),
                rho_min=float(rho_new.values.min()), rho_max=float(rho_new.values.max()),
                p_min=float(pvals.min()), p_max=float(pvals.max()),
            )
        )
        rho = rho_new
        warm = pvals
        if n % snapshot_every == 0 or n == n_steps:
            snapshots[n] = rho
            pressures[n] = res.p_star
        if on_step is not None:
            on_step(n, res)
    result = FlowResult(
        snapshots=snapshots, ledger=ledger, pressures=pressures,
        completed=completed, steps_done=len(ledger.rows) - 1,
    )
    result.warnings = warnings
    return result


def edi_slack(ledger):
    """Worst violation of the dissipation inequality along the ledger.

    Returns max_n [E_n + D_n - E_0 - 2 sum_{m<=n} gap_m]; nonpositive means
    the inequality holds at every step.
    """
    rows = ledger.rows
    if not rows:
        return 0.0
    e0 = rows[0].energy
    worst = -np.inf
    gap_sum = 0.0
    for r in rows[1:]:
        gap_sum += max(r.gap, 0.0)
        worst = max(worst, r.energy + r.cum_dissipation - e0 - 2.0 * gap_sum)
    return float(worst)
