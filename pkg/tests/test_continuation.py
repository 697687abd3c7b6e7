"""Floor-schedule continuation: plan validation, per-run accumulations,
factored flux recording, the cross-schedule report, and the weak-flux
pairing residuals."""

import numpy as np
import pytest

from nschsurf.grid import Grid2D, StaggeredVelocity
from nschsurf.models import (ModelSpec, MobilityModel, LogPotential,
                             CouplingModel, Sigma1Model)
from nschsurf.regularize import i_m_max
from nschsurf.stepper import SolverConfig, chemical_potential
from nschsurf.continuation import (
    ContinuationPlan, EntropyReport, EpsilonRun, SUMMARY_COLUMNS,
    default_epsilons, record_fluxes, run_one_epsilon, run_continuation,
    continuation_report, weak_flux_residuals,
)
from nschsurf.continuation import _tangential_basis


def degenerate_spec(**kw):
    args = dict(
        rho1=1.0, rho2=1.0, nu1=1.0, nu2=1.0, beta=1.0, sigma2=0.0, c=0.0,
        potential_phi=LogPotential(0.8, (-1.0, 1.0)),
        potential_psi=LogPotential(0.3, (0.0, 1.0)),
        mobility_phi=MobilityModel("polynomial-degenerate", (-1.0, 1.0), k=2.0),
        mobility_psi=MobilityModel("polynomial-degenerate", (0.0, 1.0), k=2.0),
        coupling=CouplingModel(1.0, 0.5, 0.4, 0.2),
        sigma1=Sigma1Model("constant", 0.0))
    args.update(kw)
    return ModelSpec(**args)


def noisy_fields(grid, seed, phi0=0.1, psi0=0.5):
    rng = np.random.default_rng(seed)
    phi = np.clip(phi0 + 0.2 * rng.standard_normal((grid.nx, grid.ny)),
                  -0.6, 0.6)
    psi = np.clip(psi0 + 0.1 * rng.standard_normal((grid.nx, grid.ny)),
                  0.2, 0.8)
    return phi, psi


def small_plan(grid=None, seed=3, t_final=4e-3, epsilons=(1e-1, 1e-2),
               **plan_kw):
    grid = grid or Grid2D(16, 16, 1.0, 1.0)
    spec = plan_kw.pop("spec", degenerate_spec())
    phi0, psi0 = noisy_fields(grid, seed)
    return ContinuationPlan(grid=grid, spec=spec,
                            config=SolverConfig(h=1e-3),
                            t_final=t_final, phi0=phi0, psi0=psi0,
                            epsilons=epsilons, **plan_kw)


class TestPlanValidation:
    def test_default_schedule_clipped_and_decreasing(self):
        spec = degenerate_spec()
        eps = default_epsilons(spec)
        ceiling = i_m_max(spec)
        assert eps[0] == pytest.approx(ceiling)
        assert all(b < a for a, b in zip(eps, eps[1:]))
        assert all(0 < e <= ceiling for e in eps)

    def test_clipping_collapses_duplicates(self):
        plan = small_plan(epsilons=(1e-1, 5e-2, 1e-2))
        # both leading values exceed the ceiling and merge after clipping
        assert len(plan.epsilons) == 2
        assert plan.epsilons[0] == pytest.approx(i_m_max(plan.spec))
        assert plan.epsilons[1] == pytest.approx(1e-2)

    def test_increasing_schedule_rejected(self):
        with pytest.raises(ValueError, match="strictly decreasing"):
            small_plan(epsilons=(1e-3, 1e-2))

    def test_nonpositive_floor_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            small_plan(epsilons=(1e-2, 0.0))

    def test_initial_data_on_pure_phase_rejected(self):
        grid = Grid2D(16, 16, 1.0, 1.0)
        phi0, psi0 = noisy_fields(grid, 3)
        phi0[0, 0] = 1.0        # degenerate entropy diverges there
        with pytest.raises(ValueError, match="infinite"):
            ContinuationPlan(grid=grid, spec=degenerate_spec(),
                             config=SolverConfig(h=1e-3), t_final=1e-3,
                             phi0=phi0, psi0=psi0, epsilons=(1e-2,))

    def test_shape_and_horizon_validation(self):
        grid = Grid2D(16, 16, 1.0, 1.0)
        phi0, psi0 = noisy_fields(grid, 3)
        with pytest.raises(ValueError, match="match the grid"):
            ContinuationPlan(grid=grid, spec=degenerate_spec(),
                             config=SolverConfig(h=1e-3), t_final=1e-3,
                             phi0=phi0[:8], psi0=psi0, epsilons=(1e-2,))
        with pytest.raises(ValueError, match="t_final"):
            small_plan(t_final=0.0)


class TestFluxRecording:
    def test_uniform_state_has_zero_fluxes(self):
        grid = Grid2D(12, 12, 1.0, 1.0)
        plan = ContinuationPlan(
            grid=grid, spec=degenerate_spec(),
            config=SolverConfig(h=1e-3), t_final=3e-3,
            phi0=np.full((12, 12), 0.2), psi0=np.full((12, 12), 0.6),
            epsilons=(1e-2,))
        run = run_one_epsilon(plan, 1e-2)
        for fl in run.fluxes:
            for pair in (fl.j_phi, fl.j_psi, fl.jhat_phi, fl.jhat_psi):
                assert np.max(np.abs(pair[0])) == 0.0
                assert np.max(np.abs(pair[1])) == 0.0
        assert run.max_factorization_defect == 0.0

    def test_factorization_defect_roundoff_on_noisy_run(self):
        run = run_one_epsilon(small_plan(), 1e-2)
        assert 0.0 < run.max_factorization_defect <= 1e-14

    def test_mass_flux_scales_with_density_contrast(self):
        grid = Grid2D(12, 12, 1.0, 1.0)
        spec = degenerate_spec(rho1=3.0, rho2=1.0)
        phi, psi = noisy_fields(grid, 5)
        mu_phi, mu_psi = chemical_potential(grid, spec, phi, psi)
        fl = record_fluxes(grid, spec, phi, psi, mu_phi, mu_psi)
        assert np.array_equal(fl.j_mass[0], -spec.gamma * fl.j_phi[0])
        assert np.array_equal(fl.j_mass[1], -spec.gamma * fl.j_phi[1])
        assert spec.gamma == 1.0 and np.max(np.abs(fl.j_mass[0])) > 0

    def test_flux_history_downsampled(self):
        plan = small_plan(t_final=1.2e-2, flux_stride=10)
        run = run_one_epsilon(plan, 1e-2)
        assert run.steps == 12
        # initial instant, step 10, and the final step
        assert len(run.fluxes) == 3
        times = [f.time for f in run.fluxes]
        assert times[0] == 0.0
        assert times[-1] == pytest.approx(1.2e-2, rel=1e-12)


class TestEpsilonRun:
    def test_horizon_and_bookkeeping(self):
        plan = small_plan()
        run = run_one_epsilon(plan, 1e-2)
        assert run.state.time == pytest.approx(plan.t_final, rel=1e-12)
        assert run.steps == 4
        assert len(run.ledger_rows) == run.steps + 1
        assert len(run.step_reports) == run.steps
        assert run.report.times[0] == 0.0
        assert all(b > a for a, b in
                   zip(run.report.times, run.report.times[1:]))

    def test_energy_inequality_every_step(self):
        run = run_one_epsilon(small_plan(seed=11), 1e-2)
        for rep in run.step_reports:
            gate = 1e-8 * (1.0 + abs(rep.energy_before))
            assert rep.inequality_residual <= gate
        assert all(b <= a + 1e-12 for a, b in
                   zip(run.energies, run.energies[1:]))

    def test_fields_stay_strictly_inside(self):
        run = run_one_epsilon(small_plan(seed=12), 1e-3)
        phi, psi = run.state.phi.data, run.state.psi.data
        assert np.max(np.abs(phi)) < 1.0
        assert 0.0 < np.min(psi) and np.max(psi) < 1.0

    def test_report_accumulations_finite_nonnegative(self):
        run = run_one_epsilon(small_plan(seed=13), 1e-2)
        rep = run.report
        rep.validate()
        assert rep.cum_jhat_phi_sq > 0
        assert rep.cum_lap_phi_sq > 0
        assert rep.eps_ceps2_flnphi > 0
        assert rep.c_eps == run.c_eps

    def test_cumulative_jhat_matches_audited_dissipation(self):
        run = run_one_epsilon(small_plan(seed=14), 1e-2)
        assert run.report.cum_jhat_phi_sq == pytest.approx(
            sum(r.diss_mobility_phi for r in run.step_reports), rel=1e-15)
        assert run.report.cum_jhat_psi_sq == pytest.approx(
            sum(r.diss_mobility_psi for r in run.step_reports), rel=1e-15)


class TestContinuationSchedule:
    def test_run_continuation_report_rows(self):
        plan = small_plan(epsilons=(1e-1, 1e-2, 1e-3))
        runs, report = run_continuation(plan)
        assert len(runs) == 3
        assert [r["epsilon"] for r in report.rows] == list(plan.epsilons)
        ceps = [r["c_eps"] for r in report.rows]
        assert all(b <= a for a, b in zip(ceps, ceps[1:]))
        assert not report.any_blowup

    def test_entropy_growth_rate_stable_across_floors(self):
        plan = small_plan(seed=8, t_final=6e-3, epsilons=(1e-1, 1e-2, 1e-3))
        runs, _ = run_continuation(plan)
        rates = []
        for run in runs:
            rep = run.report
            w0 = rep.entropy_phi[0]
            grow = max((w - w0) / t for w, t in
                       zip(rep.entropy_phi[1:], rep.times[1:]))
            rates.append(max(grow, 1e-12))
        assert max(rates) / min(rates) <= 3.0

    def test_csv_shape_and_columns(self, tmp_path):
        plan = small_plan(epsilons=(1e-1, 1e-2))
        _, report = run_continuation(plan)
        path = tmp_path / "summary.csv"
        report.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ",".join(SUMMARY_COLUMNS)
        assert len(lines) == 3
        for line in lines[1:]:
            vals = [float(tok) for tok in line.split(",")]
            assert len(vals) == len(SUMMARY_COLUMNS)
            assert all(np.isfinite(v) for v in vals)


def fake_run(epsilon, c_eps, cum_jhat=1.0, sup_e=10.0):
    rep = EntropyReport(epsilon=epsilon, c_eps=c_eps)
    rep.times = [0.0, 1.0]
    rep.entropy_phi = [0.1, 0.2]
    rep.entropy_psi = [0.1, 0.2]
    rep.cum_jhat_phi_sq = cum_jhat
    rep.cum_jhat_psi_sq = cum_jhat
    rep.cum_lap_phi_sq = 1.0
    rep.cum_lap_psi_sq = 1.0
    rep.eps_ceps2_flnphi = 1e-6
    rep.eps_ceps2_flnpsi = 1e-6
    return EpsilonRun(epsilon=epsilon, c_eps=c_eps, spec=None, state=None,
                      report=rep, energies=[sup_e], fluxes=[],
                      step_reports=[], ledger_rows=[], steps=2)


class TestReportFlags:
    def test_blowup_flag_triggers_on_tenfold_growth(self):
        runs = [fake_run(1e-1, 0.5), fake_run(1e-2, 0.3),
                fake_run(1e-3, 0.1, cum_jhat=25.0)]
        report = continuation_report(runs)
        assert report.flags["cum_jhat_phi_sq"]
        assert report.any_blowup
        assert not report.flags["sup_energy"]

    def test_bounded_schedule_raises_no_flags(self):
        runs = [fake_run(1e-1, 0.5), fake_run(1e-2, 0.3),
                fake_run(1e-3, 0.2, cum_jhat=1.5)]
        assert not continuation_report(runs).any_blowup

    def test_increasing_c_eps_rejected(self):
        runs = [fake_run(1e-1, 0.1), fake_run(1e-2, 0.3)]
        with pytest.raises(ValueError, match="must not increase"):
            continuation_report(runs)

    def test_empty_schedule_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            continuation_report([])


class TestWeakFluxPairings:
    def test_basis_is_wall_tangential(self):
        grid = Grid2D(10, 14, 1.0, 2.0)
        basis = _tangential_basis(grid)
        assert len(basis) == 8
        for ex, ey in basis:
            assert ex.shape == (11, 14) and ey.shape == (10, 15)
            assert np.all(ex[0, :] == 0.0) and np.all(ex[-1, :] == 0.0)
            assert np.all(ey[:, 0] == 0.0) and np.all(ey[:, -1] == 0.0)
            assert np.max(np.abs(ex)) + np.max(np.abs(ey)) > 0.5

    def test_residuals_roundoff_on_regularized_run(self):
        run = run_one_epsilon(small_plan(seed=17), 1e-3)
        res_phi, res_psi = weak_flux_residuals(
            run.state.grid, run.spec, run.state.phi.data,
            run.state.psi.data)
        assert np.max(res_phi) <= 1e-6
        assert np.max(res_psi) <= 1e-6
        # the two routes agree to round-off, far below the gate
        assert np.max(res_phi) <= 1e-10

    def test_residuals_with_nonlocal_term(self):
        grid = Grid2D(16, 16, 1.0, 1.0)
        spec = degenerate_spec(sigma2=2.0)
        phi, psi = noisy_fields(grid, 19)
        res_phi, res_psi = weak_flux_residuals(grid, spec, phi, psi)
        assert np.max(res_phi) <= 1e-10
        assert np.max(res_psi) <= 1e-10

    def test_residual_detects_wrong_curvature_sign(self):
        # flipping the curvature closure must break the pairing at O(1)
        import nschsurf.continuation as cont
        grid = Grid2D(16, 16, 1.0, 1.0)
        spec = degenerate_spec()
        phi, psi = noisy_fields(grid, 20)
        ref, _ = weak_flux_residuals(grid, spec, phi, psi)
        orig = cont.l2_inner
        try:
            cont.l2_inner = lambda g, a, b: -orig(g, a, b)
            bad, _ = weak_flux_residuals(grid, spec, phi, psi)
        finally:
            cont.l2_inner = orig
        assert np.max(bad) > 1e6 * max(np.max(ref), 1e-16)
