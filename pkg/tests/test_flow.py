import io

import numpy as np
import pytest

from jkoflow.energy import EntropyEnergy, PowerLawEnergy, QuadraticEnergy, WeightedEnergy
from jkoflow.grids import Grid, ScalarField
from jkoflow.jko import InfeasibleDataError, SolverConfig
from jkoflow.flow import edi_slack, run_flow, stationary_barrier
from jkoflow.verify import heat_reference, random_admissible_density


class TestStationaryBarrier:
    def test_quadratic_closed_form(self):
        g = Grid((1.0,), (64,))
        bar = stationary_barrier(QuadraticEnergy(), g, 0.3)
        assert bar.alpha == pytest.approx(0.3, abs=1e-10)
        assert np.allclose(bar.rho.values, 0.3, atol=1e-10)
        assert bar.a == pytest.approx(0.3, abs=1e-10)
        assert bar.b == pytest.approx(0.3, abs=1e-10)

    def test_weighted_entropy_profile(self):
        g = Grid((1.0,), (128,))
        f = lambda x: 1.5 + 0.5 * np.cos(2 * np.pi * np.asarray(x))  # range [1, 2]
        e = WeightedEnergy(EntropyEnergy(), f)
        lam = 0.7
        bar = stationary_barrier(e, g, lam)
        assert abs(bar.rho.mass() - lam) <= 1e-12
        expect = np.exp(bar.alpha / f(g.coords))
        assert np.allclose(bar.rho.values, expect, rtol=1e-12)
        assert bar.a > 0 and bar.b < np.inf

    def test_mass_monotonicity(self):
        g = Grid((1.0,), (64,))
        e = WeightedEnergy(EntropyEnergy(), lambda x: 1.0 + 0.8 * np.asarray(x))
        b1 = stationary_barrier(e, g, 0.3)
        b2 = stationary_barrier(e, g, 0.6)
        assert np.all(b1.rho.values <= b2.rho.values + 1e-12)

    def test_inadmissible_mass_rejected(self):
        g = Grid((1.0,), (32,))
        with pytest.raises(InfeasibleDataError):
            stationary_barrier(QuadraticEnergy(), g, 0.0)
        with pytest.raises(InfeasibleDataError):
            stationary_barrier(QuadraticEnergy(), g, -1.0)


class TestRunFlow:
    def test_barrier_initial_data_is_fixed(self):
        g = Grid((1.0,), (64,))
        e = QuadraticEnergy()
        bar = stationary_barrier(e, g, 0.3)
        res = run_flow(bar.rho, e, tau=0.2, T=1.0, config=SolverConfig(gap_tol=1e-8),
                       snapshot_every=1)
        assert res.completed
        for snap in res.snapshots.values():
            dev = np.abs(snap.values - bar.rho.values).sum() * g.cell_volume
            assert dev <= 1e-6

    def test_barrier_lower_confinement(self):
        g = Grid((1.0,), (64,))
        e = QuadraticEnergy()
        bar = stationary_barrier(e, g, 0.2)
        rng = np.random.default_rng(0)
        bump = random_admissible_density(g, 0.15, rng)
        rho0 = ScalarField(g, bar.rho.values + bump.values, "density")
        res = run_flow(rho0, e, tau=0.3, T=3.0, config=SolverConfig(gap_tol=1e-7),
                       snapshot_every=1)
        assert res.completed
        for n, snap in res.snapshots.items():
            assert np.all(snap.values >= bar.rho.values - 1e-6)
        for n, p in res.pressures.items():
            assert np.all(p.values >= bar.alpha - 1e-5)

    def test_mass_and_edi_bookkeeping(self):
        g = Grid((1.0,), (96,))
        e = PowerLawEnergy(2.0)
        rho0 = random_admissible_density(g, 0.5, np.random.default_rng(1))
        res = run_flow(rho0, e, tau=0.05, T=1.0, config=SolverConfig(gap_tol=1e-7),
                       snapshot_every=5)
        assert res.completed
        masses = [r.mass for r in res.ledger.rows]
        assert max(masses) - min(masses) <= 1e-10 * masses[0]
        assert edi_slack(res.ledger) <= 0.0
        energies = [r.energy for r in res.ledger.rows]
        gaps = [r.gap for r in res.ledger.rows]
        for k in range(1, len(energies)):
            assert energies[k] <= energies[k - 1] + 2 * gaps[k] + 1e-14

    def test_uniform_bound_from_initial_cap(self):
        g = Grid((1.0,), (64,))
        e = QuadraticEnergy()
        M = 0.7
        cap = float(e.dp_s_star(np.array([M]))[0])
        rng = np.random.default_rng(2)
        rho0 = ScalarField(g, cap * rng.uniform(0.2, 0.95, g.shape), "density")
        res = run_flow(rho0, e, tau=0.25, T=2.0, config=SolverConfig(gap_tol=1e-7),
                       m_bound=M)
        assert res.completed
        for r in res.ledger.rows[1:]:
            assert r.rho_max <= cap + 1e-6
            assert r.p_max <= M + 1e-5

    def test_long_time_approach_to_barrier(self):
        # entropy-type energy: the flow relaxes toward the stationary profile
        g = Grid((1.0,), (64,))
        e = EntropyEnergy()
        rho0 = random_admissible_density(g, 0.8, np.random.default_rng(3))
        res = run_flow(rho0, e, tau=0.5, T=6.0, config=SolverConfig(gap_tol=1e-7),
                       snapshot_every=3)
        bar = stationary_barrier(e, g, rho0.mass())
        dists = []
        for n in sorted(res.snapshots):
            snap = res.snapshots[n]
            dists.append(np.abs(snap.values - bar.rho.values).sum() * g.cell_volume)
        assert dists[-1] <= dists[0] * 0.5
        for a, b in zip(dists, dists[1:]):
            assert b <= a + 1e-6  # monotone up to solver slack

    def test_heat_mode_decay(self):
        # entropy energy follows the heat equation; one cosine mode decays
        g = Grid((1.0,), (128,))
        xs = g.axis_centers(0)
        rho0 = ScalarField(g, 1.0 + 0.4 * np.cos(np.pi * xs), "density")
        e = EntropyEnergy()
        cfg = SolverConfig(transport="subcell", gap_tol=1e-6, res_tol=1e-7 * rho0.mass())
        T = 0.04
        res = run_flow(rho0, e, tau=2e-3, T=T, config=cfg, allow_uncertified=True)
        final = res.snapshots[max(res.snapshots)]
        exact = heat_reference(rho0, T)
        err = np.abs(final.values - exact.values).sum() * g.cell_volume
        assert err <= 5e-3 * rho0.mass()

    def test_zero_time_single_snapshot(self):
        g = Grid((1.0,), (32,))
        rho0 = random_admissible_density(g, 0.5, np.random.default_rng(4))
        res = run_flow(rho0, QuadraticEnergy(), tau=0.1, T=0.0)
        assert res.steps_done == 0
        assert list(res.snapshots) == [0]
        assert np.array_equal(res.snapshots[0].values, rho0.values)

    def test_ledger_csv_format(self):
        g = Grid((1.0,), (32,))
        rho0 = random_admissible_density(g, 0.5, np.random.default_rng(5))
        res = run_flow(rho0, QuadraticEnergy(), tau=0.2, T=0.6,
                       config=SolverConfig(gap_tol=1e-6))
        buf = io.StringIO()
        res.ledger.to_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0].split(",")[:4] == ["step", "time", "energy", "step_cost"]
        assert len(lines) == len(res.ledger.rows) + 1
        # numeric round trip at 17 digits
        row1 = lines[2].split(",")
        assert float(row1[6]) == res.ledger.rows[1].mass
