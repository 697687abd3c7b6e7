"""Energy-ledger tests: closed-form breakdowns for uniform and single-mode
states, exact-zero audits, bitwise persistence round-trips, the ledger
self-audit, and the discrete mass laws."""

import math

import numpy as np
import pytest

from nschsurf.grid import Grid2D, ScalarField, StaggeredVelocity
from nschsurf.models import (
    ModelSpec, LogPotential, MobilityModel, CouplingModel, Sigma1Model,
)
from nschsurf.diagnostics import (
    total_energy, entropy_integrals, energy_audit, mass_laws,
    LedgerRow, LEDGER_COLUMNS, make_ledger_row, write_ledger, read_ledger,
    audit_ledger, LEDGER_MAGIC,
)


def make_spec(**kw):
    args = dict(
        rho1=1.0, rho2=1.0, nu1=1.0, nu2=1.0, beta=1.0, sigma2=0.0, c=0.0,
        potential_phi=LogPotential(0.8, (-1.0, 1.0)),
        potential_psi=LogPotential(0.3, (0.0, 1.0)),
        mobility_phi=MobilityModel("constant", (-1.0, 1.0), value=1.0),
        mobility_psi=MobilityModel("constant", (0.0, 1.0), value=1.0),
        coupling=CouplingModel(1.0, 0.5, 0.4, 0.2),
        sigma1=Sigma1Model("constant", 0.0))
    args.update(kw)
    return ModelSpec(**args)


def cosine_mode(grid, kx, ky=0):
    i = np.arange(grid.nx)
    j = np.arange(grid.ny)
    fx = np.cos(kx * np.pi * (i + 0.5) / grid.nx)
    fy = np.cos(ky * np.pi * (j + 0.5) / grid.ny)
    return fx[:, None] * fy[None, :]


def mode_lambda(grid, kx, ky=0):
    """Magnitude of the stencil eigenvalue for the (kx, ky) cosine mode."""
    return ((4.0 / grid.dx ** 2) * np.sin(kx * np.pi / (2 * grid.nx)) ** 2
            + (4.0 / grid.dy ** 2) * np.sin(ky * np.pi / (2 * grid.ny)) ** 2)


def f_log(theta, s, lo):
    if lo == -1.0:
        return 0.5 * theta * ((1 + s) * math.log(1 + s)
                              + (1 - s) * math.log(1 - s))
    return 0.5 * theta * (s * math.log(s) + (1 - s) * math.log(1 - s)
                          + math.log(2.0))


def g_val(p, s, g1, g2, t1, t2):
    return (0.5 * g1 * s * p * p - 0.25 * g2 * s * (1 - p * p) ** 2
            + 0.5 * t1 * (1 - p * p) + 0.5 * t2 * s * (1 - s))


class TestTotalEnergy:
    def test_uniform_breakdown(self):
        grid = Grid2D(12, 10, 1.5, 1.0)
        spec = make_spec(sigma2=1.0)
        a, b = 0.3, 0.4
        phi = np.full((12, 10), a)
        psi = np.full((12, 10), b)
        u = StaggeredVelocity(grid)
        e = total_energy(grid, spec, u.ux, u.uy, phi, psi)
        vol = grid.measure
        assert e.kinetic == 0.0
        assert e.grad_phi == 0.0 and e.grad_psi == 0.0
        assert abs(e.nonlocal_) <= 1e-14
        assert np.isclose(e.f_phi, vol * f_log(0.8, a, -1.0), rtol=1e-13)
        assert np.isclose(e.f_psi, vol * f_log(0.3, b, 0.0), rtol=1e-13)
        assert np.isclose(e.g, vol * g_val(a, b, 1.0, 0.5, 0.4, 0.2),
                          rtol=1e-13)
        assert np.isclose(e.total, e.kinetic + e.grad_phi + e.grad_psi
                          + e.nonlocal_ + e.f_phi + e.f_psi + e.g, rtol=1e-15)

    def test_anchor_state_has_zero_energy(self):
        # both potentials vanish at their anchors and the coupling is off
        grid = Grid2D(8, 8, 1.0, 1.0)
        spec = make_spec(coupling=CouplingModel(0.0, 0.0, 0.0, 0.0))
        phi = np.zeros((8, 8))
        psi = np.full((8, 8), 0.5)
        u = StaggeredVelocity(grid)
        e = total_energy(grid, spec, u.ux, u.uy, phi, psi)
        assert e.total == 0.0

    def test_gradient_terms_on_single_modes(self):
        grid = Grid2D(24, 16, 2.0, 1.0)
        beta = 1.7
        spec = make_spec(beta=beta)
        amp = 0.05
        phi = 0.1 + amp * cosine_mode(grid, 3)
        psi = 0.5 + amp * cosine_mode(grid, 0, 2)
        u = StaggeredVelocity(grid)
        e = total_energy(grid, spec, u.ux, u.uy, phi, psi)
        # summation by parts: (1/2)||grad f||^2 = (lam/2)||f0||^2,
        # and the half-volume mode normalization gives |Omega|/2
        half = 0.5 * grid.measure
        assert np.isclose(e.grad_phi,
                          0.5 * mode_lambda(grid, 3) * amp ** 2 * half,
                          rtol=1e-12)
        assert np.isclose(e.grad_psi,
                          0.5 * beta * mode_lambda(grid, 0, 2) * amp ** 2 * half,
                          rtol=1e-12)

    def test_nonlocal_term_on_single_mode(self):
        grid = Grid2D(20, 20, 1.0, 1.0)
        sigma2 = 1.3
        spec = make_spec(sigma2=sigma2)
        amp = 0.04
        phi = 0.2 + amp * cosine_mode(grid, 2, 1)
        psi = np.full((20, 20), 0.5)
        u = StaggeredVelocity(grid)
        e = total_energy(grid, spec, u.ux, u.uy, phi, psi)
        lam = mode_lambda(grid, 2, 1)
        # tensor mode with both wavenumbers nonzero: ||mode||^2 = |Omega|/4
        expect = 0.5 * sigma2 * (amp ** 2 * 0.25 * grid.measure) / lam
        assert np.isclose(e.nonlocal_, expect, rtol=1e-11)

    def test_kinetic_reimplemented_directly(self):
        grid = Grid2D(9, 7, 1.1, 0.8)
        spec = make_spec(rho1=3.0, rho2=1.0)
        rng = np.random.default_rng(2)
        phi = np.clip(0.3 * rng.standard_normal((9, 7)), -0.9, 0.9)
        ux = rng.standard_normal((10, 7))
        uy = rng.standard_normal((9, 8))
        ux[0] = ux[-1] = 0.0
        uy[:, 0] = uy[:, -1] = 0.0
        rho = spec.rho(phi)
        rfx = 0.5 * (rho[:-1, :] + rho[1:, :])
        rfy = 0.5 * (rho[:, :-1] + rho[:, 1:])
        direct = 0.5 * grid.cell_volume * (
            np.sum(rfx * ux[1:-1, :] ** 2) + np.sum(rfy * uy[:, 1:-1] ** 2))
        e = total_energy(grid, spec, ux, uy, phi, np.full((9, 7), 0.5))
        assert np.isclose(e.kinetic, direct, rtol=1e-13)


class TestEntropyIntegrals:
    def test_uniform_constant_mobility(self):
        # constant mobility entropy is (s - anchor)^2 / (2 m)
        grid = Grid2D(8, 8, 1.0, 1.0)
        spec = make_spec(
            mobility_phi=MobilityModel("constant", (-1.0, 1.0), value=2.0),
            mobility_psi=MobilityModel("constant", (0.0, 1.0), value=0.5))
        phi = np.full((8, 8), 0.4)
        psi = np.full((8, 8), 0.3)
        s_phi, s_psi = entropy_integrals(grid, spec, phi, psi)
        assert np.isclose(s_phi, grid.measure * 0.4 ** 2 / 4.0, rtol=1e-13)
        assert np.isclose(s_psi, grid.measure * (0.3 - 0.5) ** 2, rtol=1e-13)


class TestEnergyAudit:
    def test_identical_states_audit_to_zero(self):
        grid = Grid2D(10, 10, 1.0, 1.0)
        spec = make_spec(rho1=2.0, rho2=1.0, sigma2=1.0,
                         sigma1=Sigma1Model("constant", 1.0))
        rng = np.random.default_rng(4)
        phi = np.clip(0.2 + 0.1 * rng.standard_normal((10, 10)), -0.9, 0.9)
        psi = np.clip(0.5 + 0.1 * rng.standard_normal((10, 10)), 0.05, 0.95)
        u = StaggeredVelocity(grid)
        mu = np.zeros((10, 10))
        rep = energy_audit(grid, spec, 1e-2, u.ux, u.uy, phi, psi,
                           u.ux, u.uy, phi, psi, mu, mu)
        assert rep.dissipation == 0.0
        assert rep.defect_kinetic == 0.0
        assert rep.defect_grad_phi == 0.0 and rep.defect_grad_psi == 0.0
        assert rep.defect_star == 0.0
        assert rep.inequality_residual == 0.0

    def test_defects_are_nonnegative_for_random_pairs(self):
        grid = Grid2D(8, 6, 1.0, 0.7)
        spec = make_spec(rho1=3.0, rho2=1.0, sigma2=0.8)
        rng = np.random.default_rng(9)
        for trial in range(4):
            phi0 = np.clip(0.1 * rng.standard_normal((8, 6)), -0.9, 0.9)
            phi1 = np.clip(phi0 + 0.05 * rng.standard_normal((8, 6)), -0.9, 0.9)
            psi0 = np.clip(0.5 + 0.1 * rng.standard_normal((8, 6)), 0.05, 0.95)
            psi1 = np.clip(psi0 + 0.05 * rng.standard_normal((8, 6)), 0.05, 0.95)
            ux0 = rng.standard_normal((9, 6)); ux0[0] = ux0[-1] = 0
            uy0 = rng.standard_normal((8, 7)); uy0[:, 0] = uy0[:, -1] = 0
            ux1 = ux0 + 0.1 * rng.standard_normal((9, 6)); ux1[0] = ux1[-1] = 0
            uy1 = uy0 + 0.1 * rng.standard_normal((8, 7)); uy1[:, 0] = uy1[:, -1] = 0
            mu = rng.standard_normal((8, 6))
            rep = energy_audit(grid, spec, 1e-3, ux0, uy0, phi0, psi0,
                               ux1, uy1, phi1, psi1, mu, mu)
            assert rep.defect_kinetic >= 0.0
            assert rep.defect_grad_phi >= 0.0
            assert rep.defect_grad_psi >= 0.0
            assert rep.defect_star >= 0.0
            assert rep.diss_viscous >= 0.0
            assert rep.diss_mobility_phi >= 0.0
            assert rep.diss_mobility_psi >= 0.0


def synthetic_row(time, h, mean_phi, mean_psi, mean_sigma1):
    vals = {name: 0.0 for name in LEDGER_COLUMNS}
    vals.update(time=time, h=h, mean_phi=mean_phi, mean_psi=mean_psi,
                mean_sigma1=mean_sigma1,
                picard_iters=0, newton_iters=0, lin_iters=0)
    return LedgerRow(**vals)


class TestMassLaws:
    def test_product_law_exact_rows(self):
        spec = make_spec(sigma1=Sigma1Model("constant", 1.0))
        h, drive = 0.1, 0.5
        rows = []
        mean = drive
        for n in range(11):
            rows.append(synthetic_row(n * h, h if n else 0.0, mean, 0.4, 1.0))
            mean *= 1.0 - h
        rep = mass_laws(rows, spec)
        assert rep.psi_deviation == 0.0
        assert rep.phi_product_deviation <= 1e-16
        assert np.isclose(rows[-1].mean_phi, 0.5 * 0.9 ** 10, rtol=1e-14)
        # the continuous exponential is NOT what the scheme realizes; the
        # gap for sigma1*t = 1 is about 9.6e-3 and is only reported
        expect_gap = abs(0.9 ** 10 - math.exp(-1.0)) * drive
        assert np.isclose(rep.continuous_gap, expect_gap, rtol=1e-12)

    def test_detects_psi_drift_and_phi_violation(self):
        spec = make_spec(sigma1=Sigma1Model("constant", 1.0))
        rows = [synthetic_row(0.0, 0.0, 0.5, 0.4, 1.0),
                synthetic_row(0.1, 0.1, 0.44, 0.4003, 1.0)]
        rep = mass_laws(rows, spec)
        assert np.isclose(rep.psi_deviation, 3e-4, rtol=1e-10)
        assert np.isclose(rep.phi_product_deviation, 0.01, rtol=1e-10)

    def test_needs_two_rows(self):
        spec = make_spec()
        with pytest.raises(ValueError):
            mass_laws([synthetic_row(0.0, 0.0, 0.5, 0.4, 0.0)], spec)


class TestLedgerPersistence:
    def _rows(self):
        rows = []
        rng = np.random.default_rng(12)
        for n in range(4):
            vals = {name: float(v) for name, v in
                    zip(LEDGER_COLUMNS, rng.standard_normal(len(LEDGER_COLUMNS)))}
            vals.update(time=n * 0.1 + 0.2, h=0.1,
                        picard_iters=n + 1, newton_iters=2 * n + 3,
                        lin_iters=5 * n)
            rows.append(LedgerRow(**vals))
        return rows

    def test_round_trip_is_bitwise(self, tmp_path):
        rows = self._rows()
        path = tmp_path / "ledger.csv"
        write_ledger(rows, path)
        back = read_ledger(path)
        assert len(back) == len(rows)
        for a, b in zip(rows, back):
            for name in LEDGER_COLUMNS:
                va, vb = getattr(a, name), getattr(b, name)
                assert va == vb
                assert type(va) is type(vb)

    def test_awkward_floats_survive(self, tmp_path):
        row = synthetic_row(0.1 + 0.2, 1e-3, math.pi, 2.0 ** -52, 0.0)
        path = tmp_path / "ledger.csv"
        write_ledger([row], path)
        back = read_ledger(path)[0]
        assert back.time == 0.1 + 0.2
        assert back.mean_phi == math.pi
        assert back.mean_psi == 2.0 ** -52

    def test_rejects_bad_magic_and_schema(self, tmp_path):
        rows = self._rows()
        path = tmp_path / "ledger.csv"
        write_ledger(rows, path)
        text = path.read_text().splitlines()
        bad = tmp_path / "bad.csv"

        bad.write_text("\n".join(["# something else"] + text[1:]) + "\n")
        with pytest.raises(ValueError):
            read_ledger(bad)

        hdr = text[1].replace("e_total", "energy")
        bad.write_text("\n".join([text[0], hdr] + text[2:]) + "\n")
        with pytest.raises(ValueError):
            read_ledger(bad)

        trunc = text[2].rsplit(",", 2)[0]
        bad.write_text("\n".join(text[:2] + [trunc]) + "\n")
        with pytest.raises(ValueError):
            read_ledger(bad)

    def test_magic_is_first_line(self, tmp_path):
        path = tmp_path / "ledger.csv"
        write_ledger(self._rows(), path)
        assert path.read_text().splitlines()[0] == LEDGER_MAGIC


class TestLedgerFromRun:
    def test_rows_from_steps_self_audit(self, tmp_path):
        from nschsurf.stepper import (SimState, SolverConfig,
                                      chemical_potential, step)
        grid = Grid2D(16, 16, 1.0, 1.0)
        spec = make_spec(rho1=3.0, rho2=1.0, sigma2=1.0,
                         sigma1=Sigma1Model("constant", 1.0))
        rng = np.random.default_rng(3)
        phi = np.clip(0.3 + 0.05 * rng.standard_normal((16, 16)), -0.6, 0.9)
        psi = np.clip(0.4 + 0.05 * rng.standard_normal((16, 16)), 0.1, 0.9)
        mu_phi, mu_psi = chemical_potential(grid, spec, phi, psi)
        state = SimState(0.0, StaggeredVelocity(grid),
                         ScalarField(grid, phi), ScalarField(grid, psi),
                         ScalarField(grid, mu_phi), ScalarField(grid, mu_psi))
        rows = [make_ledger_row(grid, spec, 0.0, state.u.ux, state.u.uy,
                                phi, psi)]
        cfg = SolverConfig(h=1e-3)
        for _ in range(4):
            state, rep = step(state, spec, cfg)
            rows.append(make_ledger_row(grid, spec, state.time,
                                        state.u.ux, state.u.uy,
                                        state.phi.data, state.psi.data,
                                        report=rep))
        assert rows[0].h == 0.0 and rows[0].picard_iters == 0
        assert audit_ledger(rows) <= 1e-10

        path = tmp_path / "run.csv"
        write_ledger(rows, path)
        back = read_ledger(path)
        assert audit_ledger(back) <= 1e-10
        rep = mass_laws(back, spec)
        assert rep.psi_deviation <= 1e-13
        assert rep.phi_product_deviation <= 1e-13
