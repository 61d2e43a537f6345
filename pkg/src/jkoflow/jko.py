"""One minimizing-movement step by concave ascent on the dual problem.

The step for data rho_bar maximizes

    J*(p) = sum_y rho_bar(y) p^c(y) dV - sum_x s*(p(x), x) dV

over pressures p on the grid and recovers the new density through the
first-order relation rho = dp_s*(p, .).  Two transport discretizations are
available:

* ``nodal``: mass moves between grid nodes; the transform is the exact
  discrete minimum over node pairs.  This problem admits machine-tight
  duality-gap certificates (the primal bound uses the exact monotone
  transport cost in 1-D and the deposit coupling otherwise).
* ``subcell``: the transform is taken over the continuous domain with the
  pressure linearly interpolated, so displacements smaller than a cell are
  resolved.  This is the mode for time-accurate PDE runs at small steps.

Ascent uses a smoothed first variation: each source cell's mass is split
over near-minimizing targets by a water-filling rule with level kappa, the
resulting objective is concave and continuously differentiable, and kappa
is annealed toward zero while L-BFGS maximizes.  The reported gap is
always a true weak-duality certificate evaluated without smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import _kernels as K
from .grids import (
    Grid,
    ScalarField,
    QuadraticCost,
    c_concavify,
    c_transform,
    cost_matrix,
    forward_map,
    grad_field,
    TransportMapSample,
)

FEASIBILITY_PRESSURE = 1e6  # probe height for the admissible-mass bound


class InfeasibleDataError(ValueError):
    pass


@dataclass
class SolverConfig:
    """Knobs for one dual-ascent solve."""

    max_iters: int = 20000          # total objective evaluations
    gap_tol: float = 1e-6           # relative duality-gap target
    sigma: float = 1.0              # initial line-search scale (plain mode)
    concavify_every: int = 1        # concavify at every certification
    k_schedule: tuple = (4, 16, 64, 256)
    delta: float = 0.0              # opt-in strict-convexity regularization
    initial_pressure: np.ndarray | None = None   # warm start
    transport: str = "nodal"        # 'nodal' or 'subcell'
    res_tol: float | None = None    # L1 residual target (subcell dynamics)
    max_outer: int = 24
    lbfgs_maxiter: int = 250

    def __post_init__(self):
        if self.gap_tol <= 0:
            raise ValueError("gap_tol must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.transport not in ("nodal", "subcell"):
            raise ValueError("transport must be 'nodal' or 'subcell'")


@dataclass
class JkoStepResult:
    """Optimal pair of one step plus its optimality certificate."""

    rho_star: ScalarField
    p_star: ScalarField
    primal_value: float
    dual_value: float
    gap: float
    iterations: int
    map: TransportMapSample
    certified: bool
    residual_l1: float
    transport: str


@dataclass
class SmallestPressureResult:
    pressure: ScalarField
    per_k: dict
    monotone_ok: bool
    max_violation: float


# --- feasibility and value helpers -------------------------------------------


def admissible_mass_bound(energy, grid):
    """Numerical stand-in for the saturation mass at infinite pressure."""
    coords = grid.coords
    p = np.full(grid.shape, FEASIBILITY_PRESSURE)
    with np.errstate(over="ignore"):
        d = np.asarray(energy.dp_s_star(p, coords), dtype=float)
    d = np.minimum(d, 1e300)
    return float(d.sum() * grid.cell_volume)


def check_mass_condition(rho_bar, energy):
    m = rho_bar.mass()
    if not m > 0:
        raise InfeasibleDataError("data must carry positive mass")
    bound = admissible_mass_bound(energy, rho_bar.grid)
    if not m < bound:
        raise InfeasibleDataError(
            f"mass {m:.6g} exceeds the admissible bound {bound:.6g}"
        )
    return m


def dual_value(p, rho_bar, energy, cost):
    """J*(p) = <rho_bar, p^c> - E*(p) with the exact nodal transform."""
    grid = p.grid
    coords = grid.coords
    estar = np.asarray(energy.eval_s_star(p.values, coords), dtype=float)
    if not np.all(np.isfinite(estar)):
        raise ValueError("E*(p) is not finite: pressure outside the dual domain")
    pc = c_transform(p, cost)
    vol = grid.cell_volume
    return float((pc.values * rho_bar.values).sum() * vol - estar.sum() * vol)


def transport_cost_1d_exact(rho_a, rho_b, cost):
    """Exact transport cost between two 1-D grid densities of equal mass.

    The monotone rearrangement is optimal for any convex function of the
    displacement, which covers both built-in cost kinds.
    """
    g = rho_a.grid
    if g.dim != 1:
        raise ValueError("exact transport cost is implemented in 1-D only")
    h = g.cell_volume
    a = rho_a.values * h
    b = rho_b.values * h
    ma, mb = a.sum(), b.sum()
    if abs(ma - mb) > 1e-9 * max(ma, mb):
        raise ValueError("marginals must carry equal mass")
    xs = g.axis_centers(0)
    if cost.kind == "quadratic":
        return float(K.monotone_transport_cost_1d(a, b, xs, 1.0 / cost.tau))
    # generic convex kernel: python sweep
    i = j = 0
    A, B = a[0], b[0]
    total = 0.0
    n = a.size
    while True:
        m = min(A, B)
        if m > 0:
            total += m * float(cost.c(xs[i], xs[j]))
        A -= m
        B -= m
        if A <= 0:
            i += 1
            if i >= n:
                break
            A += a[i]
        if B <= 0:
            j += 1
            if j >= n:
                break
            B += b[j]
    return total


def primal_value(rho, rho_bar, energy, cost, tmap=None):
    """Upper-bound value E(rho) + transport-cost bound.

    With a map sample the coupling cost sums c(T(y), y) against rho_bar;
    without one the exact 1-D monotone cost between the two densities is
    used.  Both dominate the optimal transport cost, so the result is an
    upper bound for the step objective whenever rho is feasible.
    """
    if np.any(rho.values < 0):
        raise ValueError("density must be nonnegative")
    m0, m1 = rho.mass(), rho_bar.mass()
    if abs(m0 - m1) > 1e-10 * max(1.0, m1):
        raise ValueError(f"mass mismatch: {m0:.12g} vs {m1:.12g}")
    grid = rho.grid
    coords = grid.coords
    vol = grid.cell_volume
    e = float(np.asarray(energy.eval_s(rho.values, coords)).sum() * vol)
    if tmap is not None:
        ys = grid.coords
        c_up = float((cost.c(tmap.images, ys) * rho_bar.values).sum() * vol)
    elif grid.dim == 1:
        c_up = transport_cost_1d_exact(rho, rho_bar, cost)
    else:
        raise ValueError("2-D primal bound needs a transport map sample")
    return e + c_up


# --- internal solver machinery ------------------------------------------------


def _balance_shift(energy, pvals, coords, target_mass, vol):
    """Constant shift beta with sum dp_s*(p + beta) * vol = target_mass."""

    def excess(b):
        with np.errstate(over="ignore"):
            d = np.asarray(energy.dp_s_star(pvals + b, coords), dtype=float)
        return float(np.minimum(d, 1e300).sum() * vol - target_mass)

    lo, hi = -1.0, 1.0
    for _ in range(300):
        if excess(lo) <= 0:
            break
        lo *= 2
    for _ in range(300):
        if excess(hi) >= 0:
            break
        hi *= 2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _graph_density(energy, pvals, coords, mass, vol):
    """Density on the optimality graph, rescaled to the exact mass."""
    rt = np.asarray(energy.dp_s_star(pvals, coords), dtype=float)
    mt = rt.sum() * vol
    if mt > 0:
        rt = rt * (mass / mt)
    return rt


def _initial_pressure(rho_bar, energy, config):
    if config.initial_pressure is not None:
        p0 = np.asarray(config.initial_pressure, dtype=float)
        if p0.shape != rho_bar.grid.shape:
            raise ValueError("warm-start pressure shape mismatch")
        return p0.copy()
    grid = rho_bar.grid
    coords = grid.coords
    floor = 1e-12 * max(float(rho_bar.values.mean()), 1e-300)
    z = np.maximum(rho_bar.values, floor)
    lo, hi = energy.subdiff_s(z, coords)
    mid = np.where(np.isfinite(lo), 0.5 * (lo + hi), hi)
    mid = np.where(np.isfinite(mid), mid, 0.0)
    return np.clip(mid, -1e6, 1e6)


class _DualProblem:
    """Shared state for one solve: transforms, deposits, certificates."""

    def __init__(self, rho_bar, energy, cost, config):
        self.grid = rho_bar.grid
        self.energy = energy
        self.cost = cost
        self.config = config
        self.rb = rho_bar.values
        self.rho_bar = rho_bar
        self.coords = self.grid.coords
        self.vol = self.grid.cell_volume
        self.mass = self.rb.sum() * self.vol
        self.evals = 0
        shape = self.grid.shape
        self._dep = np.zeros(shape)
        self._sval = np.zeros(shape)
        self._csh = np.zeros(shape)
        self._pcv = np.zeros(shape)
        self._pcx = np.zeros(shape)
        self.cmat = None
        if cost.kind != "quadratic":
            if self.grid.dim != 1:
                raise ValueError("kernel costs are supported in 1-D only")
            self.cmat = cost_matrix(cost, self.grid)
        self.scale = max(1.0, self.mass)

    # -- pressure bookkeeping

    def balanced(self, pvals):
        b = _balance_shift(self.energy, pvals, self.coords, self.mass, self.vol)
        return pvals + b

    def estar_sum(self, pvals):
        es = np.asarray(self.energy.eval_s_star(pvals, self.coords), dtype=float)
        return float(es.sum() * self.vol)

    def e_of(self, rho_vals):
        ev = np.asarray(self.energy.eval_s(rho_vals, self.coords), dtype=float)
        return float(ev.sum() * self.vol)

    def dp(self, pvals):
        return np.asarray(self.energy.dp_s_star(pvals, self.coords), dtype=float)

    # -- subcell (linear-interpolant) transform machinery

    def pl_transform(self, pvals):
        xs = self.grid.axis_centers(0)
        h = self.grid.spacing[0]
        K.pl_transform_1d(pvals, xs, self.cost.tau, h, self._pcv, self._pcx)
        return self._pcv

    def pl_deposit(self, pvals, kappa):
        xs = self.grid.axis_centers(0)
        h = self.grid.spacing[0]
        K.pl_waterfill_1d(
            pvals, xs, self.cost.tau, h, self._pcv, self.rb, kappa,
            self._dep, self._sval, self._csh,
        )

    def certify_subcell(self, pvals, kappa_cert):
        p = self.balanced(pvals)
        pcv = self.pl_transform(p).copy()
        dual = float((pcv * self.rb).sum() * self.vol) - self.estar_sum(p)
        self.pl_deposit(p, kappa_cert)
        dep = self._dep.copy()
        primal = self.e_of(dep) + float((self._csh * self.rb).sum() * self.vol)
        res = float(np.abs(dep - self.dp(p)).sum() * self.vol)
        return p, primal, dual, primal - dual, res

    def pl_objective(self, kappa):
        xs = self.grid.axis_centers(0)
        h = self.grid.spacing[0]

        def neg(pvals):
            self.evals += 1
            K.pl_transform_1d(pvals, xs, self.cost.tau, h, self._pcv, self._pcx)
            K.pl_waterfill_1d(
                pvals, xs, self.cost.tau, h, self._pcv, self.rb, kappa,
                self._dep, self._sval, self._csh,
            )
            val = float((self._sval * self.rb).sum() * self.vol) - self.estar_sum(pvals)
            grad = (self._dep - self.dp(pvals)) * self.vol
            return -val, -grad

        return neg

    # -- nodal transform machinery

    def nodal_transform_values(self, pvals):
        fld = ScalarField(self.grid, pvals, role="pressure")
        return c_transform(fld, self.cost).values

    def nodal_deposit(self, pvals, pcv, kappa):
        if self.cost.kind == "quadratic":
            if self.grid.dim == 1:
                xs = self.grid.axis_centers(0)
                h = self.grid.spacing[0]
                K.nodal_waterfill_1d(
                    pvals, xs, self.cost.tau, h, pcv, self.rb, kappa,
                    self._dep, self._sval, self._csh,
                )
            else:
                h1, h2 = self.grid.spacing
                K.nodal_waterfill_2d(
                    pvals, h1, h2, self.cost.tau, pcv, self.rb, kappa,
                    self._dep, self._sval, self._csh,
                )
        else:
            K.matrix_waterfill(
                pvals, self.cmat, pcv, self.rb, kappa,
                self._dep, self._sval, self._csh,
            )

    def certify_nodal(self, pvals, kappa_cert):
        p = self.balanced(pvals)
        pcv = self.nodal_transform_values(p)
        dual = float((pcv * self.rb).sum() * self.vol) - self.estar_sum(p)
        self.nodal_deposit(p, pcv, kappa_cert)
        dep = self._dep.copy()
        primal_dep = self.e_of(dep) + float((self._csh * self.rb).sum() * self.vol)
        res = float(np.abs(dep - self.dp(p)).sum() * self.vol)
        primal = primal_dep
        if self.grid.dim == 1:
            rt = _graph_density(self.energy, p, self.coords, self.mass, self.vol)
            fld = ScalarField(self.grid, rt)
            primal_graph = self.e_of(rt) + transport_cost_1d_exact(fld, self.rho_bar, self.cost)
            primal = min(primal, primal_graph)
        return p, primal, dual, primal - dual, res

    def nodal_objective(self, kappa):
        def neg(pvals):
            self.evals += 1
            pcv = self.nodal_transform_values(pvals)
            self.nodal_deposit(pvals, pcv, kappa)
            val = float((self._sval * self.rb).sum() * self.vol) - self.estar_sum(pvals)
            grad = (self._dep - self.dp(pvals)) * self.vol
            return -val, -grad

        return neg


def _anneal(problem, p, certify, objective_factory, gap_target, res_target, config):
    """kappa-annealed L-BFGS ascent; returns the best certified state.

    The smoothing level follows the measured gap (never anneals faster
    than actual progress), which keeps the inner problems well conditioned.
    """
    mass = max(problem.mass, 1e-300)
    kc_floor = 1e-16 * problem.scale / mass
    p, primal, dual, gap, res = certify(p, max(gap_target * 0.1 / mass, kc_floor))
    best = dict(p=p, primal=primal, dual=dual, gap=gap, res=res)
    kappa = max(gap, 1e-13 * problem.scale) / mass * 0.25

    def done(b):
        ok_gap = b["gap"] <= gap_target
        ok_res = res_target is None or b["res"] <= res_target
        return ok_gap and ok_res

    shape = best["p"].shape
    stalls = 0
    for _ in range(config.max_outer):
        if done(best) or problem.evals >= config.max_iters:
            break
        neg_shaped = objective_factory(kappa)

        def neg(flat):
            val, grad = neg_shaped(flat.reshape(shape))
            return val, np.asarray(grad).ravel()

        budget = min(config.lbfgs_maxiter, max(config.max_iters - problem.evals, 1))
        out = minimize(
            neg, best["p"].ravel(), jac=True, method="L-BFGS-B",
            # ftol=0: the f-progress test fires spuriously in stiff stretches
            options=dict(maxiter=budget, maxfun=2 * budget, ftol=0.0,
                         gtol=1e-10 * problem.vol),
        )
        inner_converged = out.nit < budget
        # certificate at the solved smoothing level (consistent deposit)
        # plus a tighter level as a free candidate
        improved = False
        for kc in (max(kappa, kc_floor), max(0.02 * kappa, kc_floor)):
            p, primal, dual, gap, res = certify(out.x.reshape(shape), kc)
            improved = improved or gap < best["gap"] * 0.99
            if gap < best["gap"] or (gap <= gap_target and res < best["res"]):
                best = dict(p=p, primal=primal, dual=dual, gap=gap, res=res)
        if improved:
            stalls = 0
        else:
            stalls += 1
            if stalls >= 4:
                break
        if inner_converged:
            kappa = min(kappa / 8.0, 0.25 * max(best["gap"], 1e-300) / mass)
        else:
            kappa = kappa / 2.0
        if kappa < 1e-19 * problem.scale:
            break
    return best


def jko_step(rho_bar, energy, cost, config=None):
    """Solve one minimizing-movement step and certify it.

    Returns the optimal density (recovered from the pressure through the
    conjugate derivative, with exact mass), the c-concave maximizing
    pressure, the primal/dual values with their gap, and the transport map
    sample of the final pressure.
    """
    config = config or SolverConfig()
    if config.delta > 0:
        from .energy import regularize_delta

        energy = regularize_delta(energy, config.delta)
    check_mass_condition(rho_bar, energy)
    grid = rho_bar.grid
    if config.transport == "subcell" and (grid.dim != 1 or cost.kind != "quadratic"):
        raise ValueError("subcell transport needs a 1-D grid and quadratic cost")

    problem = _DualProblem(rho_bar, energy, cost, config)
    p = problem.balanced(_initial_pressure(rho_bar, energy, config))

    best = None
    if grid.dim == 1 and cost.kind == "quadratic":
        # continuous-displacement phase: resolves sub-cell motion and is a
        # good globalizer for the nodal polish
        if config.transport == "subcell":
            res_target = config.res_tol
            if res_target is None:
                res_target = config.gap_tol * max(1.0, problem.mass)
            gap_target = config.gap_tol
        else:
            res_target = 1e-3 * max(problem.mass, 1e-300)
            gap_target = max(100.0 * config.gap_tol, 1e-4)
        sub = _anneal(
            problem, p, problem.certify_subcell, problem.pl_objective,
            gap_target=gap_target, res_target=res_target, config=config,
        )
        best = sub
        p = sub["p"]

    if config.transport == "nodal":
        nod = _anneal(
            problem, p, problem.certify_nodal, problem.nodal_objective,
            gap_target=config.gap_tol * max(1.0, abs(best["dual"]) if best else 1.0),
            res_target=None, config=config,
        )
        best = nod

    # final c-concave pressure and certificate
    p_fld = ScalarField(grid, best["p"], role="pressure")
    p_cc = c_concavify(p_fld, cost)
    if config.transport == "nodal":
        p_fin, primal, dual, gap, res = problem.certify_nodal(
            p_cc.values, max(0.01 * best["gap"], 1e-18) / max(problem.mass, 1e-300)
        )
    else:
        p_fin, primal, dual, gap, res = problem.certify_subcell(
            p_cc.values, max(0.01 * best["gap"], 1e-18) / max(problem.mass, 1e-300)
        )
    if gap > best["gap"] * (1 + 1e-9) + 1e-300 and abs(gap - best["gap"]) > 1e-14 * problem.scale:
        # concavification is value-neutral at convergence; keep the better pair
        if best["gap"] < gap:
            p_fin, primal, dual, gap, res = (
                best["p"], best["primal"], best["dual"], best["gap"], best["res"],
            )

    rt = _graph_density(energy, p_fin, problem.coords, problem.mass, problem.vol)
    rho_star = ScalarField(grid, rt, role="density")
    p_star = ScalarField(grid, p_fin, role="pressure")
    try:
        tmap = forward_map(p_star, cost, concavity_tol=1e-6)
    except ValueError:
        tmap = forward_map(c_concavify(p_star, cost), cost, concavity_tol=np.inf)

    certified = gap <= config.gap_tol * max(1.0, abs(dual))
    return JkoStepResult(
        rho_star=rho_star,
        p_star=p_star,
        primal_value=primal,
        dual_value=dual,
        gap=gap,
        iterations=problem.evals,
        map=tmap,
        certified=certified,
        residual_l1=res,
        transport=config.transport,
    )


def smallest_pressure_select(rho_bar, energy, cost, config=None):
    """Approximate the smallest maximizing pressure via dual perturbations.

    Solves the step for conjugates augmented by log(1+e^p)/k over an
    increasing k schedule; the pressures increase with k and the last one
    approximates the smallest maximizer of the unperturbed problem.
    """
    from .energy import regularize_logexp

    config = config or SolverConfig()
    per_k = {}
    prev = None
    warm = config.initial_pressure
    max_violation = 0.0
    for k in config.k_schedule:
        ek = regularize_logexp(energy, int(k))
        cfg = replace(config, initial_pressure=warm, delta=0.0)
        res = jko_step(rho_bar, ek, cost, cfg)
        per_k[int(k)] = res
        if prev is not None:
            viol = float(np.max(prev - res.p_star.values))
            max_violation = max(max_violation, viol)
        prev = res.p_star.values
        warm = res.p_star.values
    monotone_ok = max_violation <= 1e-6
    return SmallestPressureResult(
        pressure=per_k[int(config.k_schedule[-1])].p_star,
        per_k=per_k,
        monotone_ok=monotone_ok,
        max_violation=max_violation,
    )


def largest_pressure_pool(rho_bar, energy, cost, config=None, starts=4, seed=0):
    """Heuristic largest maximizer: pointwise max over a multi-start pool.

    The pointwise maximum of c-concave maximizers is again a c-concave
    maximizer, so the pool maximum lower-bounds the largest one.
    """
    config = config or SolverConfig()
    rng = np.random.default_rng(seed)
    pool = []
    base = jko_step(rho_bar, energy, cost, config)
    pool.append(base.p_star.values)
    for _ in range(starts - 1):
        p0 = _initial_pressure(rho_bar, energy, config)
        p0 = p0 + rng.uniform(-0.5, 0.5) + rng.standard_normal(p0.shape) * 0.05
        cfg = replace(config, initial_pressure=p0)
        r = jko_step(rho_bar, energy, cost, cfg)
        if r.certified:
            pool.append(r.p_star.values)
    pmax = np.max(np.stack(pool), axis=0)
    fld = ScalarField(rho_bar.grid, pmax, role="pressure")
    return c_concavify(fld, cost), pool
