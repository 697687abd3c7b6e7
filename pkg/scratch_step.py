import time
import numpy as np
import sys
sys.path.insert(0, "src")

from nschsurf.grid import Grid2D, ScalarField, StaggeredVelocity
from nschsurf import models as M
from nschsurf.stepper import (SimState, SolverConfig, chemical_potential,
                              step, _convection_matrix, _momentum_static)
from nschsurf.diagnostics import energy_audit, total_energy


def make_spec(rho1=1.0, rho2=1.0, sigma1=0.0, sigma2=1.0, c=0.0):
    return M.ModelSpec(
        rho1=rho1, rho2=rho2, nu1=1.0, nu2=1.0, beta=1.0, sigma2=sigma2, c=c,
        potential_phi=M.LogPotential(0.8, (-1.0, 1.0)),
        potential_psi=M.LogPotential(0.3, (0.0, 1.0)),
        mobility_phi=M.MobilityModel("constant", (-1.0, 1.0), value=1.0),
        mobility_psi=M.MobilityModel("constant", (0.0, 1.0), value=1.0),
        coupling=M.CouplingModel(1.0, 0.5, 0.4, 0.2),
        sigma1=M.Sigma1Model("constant", sigma1))


def make_state(grid, spec, phi, psi):
    mu_phi, mu_psi = chemical_potential(grid, spec, phi, psi)
    return SimState(0.0, StaggeredVelocity(grid),
                    ScalarField(grid, phi), ScalarField(grid, psi),
                    ScalarField(grid, mu_phi), ScalarField(grid, mu_psi))


# ---- convection antisymmetry ----
grid = Grid2D(12, 9, 1.0, 0.7)
rng = np.random.default_rng(0)
st = _momentum_static(grid)
mx = rng.standard_normal((grid.nx + 1, grid.ny)); mx[0] = mx[-1] = 0
my = rng.standard_normal((grid.nx, grid.ny + 1)); my[:, 0] = my[:, -1] = 0
C = _convection_matrix(grid, st, mx, my)
for _ in range(5):
    u = rng.standard_normal(st.nu)
    q = float(u @ (C @ u))
    print("antisym  uCu =", q)

# ---- uniform fixed point ----
grid = Grid2D(16, 16, 1.0, 1.0)
spec = make_spec(sigma1=0.0)
phi = np.full((16, 16), 0.3)
psi = np.full((16, 16), 0.4)
state = make_state(grid, spec, phi, psi)
cfg = SolverConfig(h=1e-2)
t0 = time.time()
s1, rep = step(state, spec, cfg)
print("uniform: picard", rep.picard_iters_outer, "newton", rep.newton_iters_ch,
      "resid", rep.inequality_residual,
      "dphi", float(np.max(np.abs(s1.phi.data - 0.3))),
      "umax", float(np.max(np.abs(s1.u.ux))), f"{time.time()-t0:.3f}s")

# ---- identical-state audit ----
r0 = energy_audit(grid, spec, 1e-2, state.u.ux, state.u.uy, phi, psi,
                  state.u.ux, state.u.uy, phi, psi,
                  state.mu_phi.data, state.mu_psi.data)
print("identical audit resid", r0.inequality_residual, "diss", r0.dissipation)

# ---- one-step mean law ----
spec2 = make_spec(rho1=3.0, rho2=1.0, sigma1=1.0, sigma2=1.0, c=0.0)
phi = np.full((16, 16), 0.5)
psi = np.full((16, 16), 0.4)
state = make_state(grid, spec2, phi, psi)
cfg = SolverConfig(h=0.1)
s1, rep = step(state, spec2, cfg)
print("oono: mean", float(np.mean(s1.phi.data)), "expect 0.45",
      "resid", rep.inequality_residual)

# ---- small spinodal run with flow, mismatched densities ----
grid = Grid2D(32, 32, 1.0, 1.0)
spec3 = make_spec(rho1=3.0, rho2=1.0, sigma1=1.0, sigma2=1.0, c=0.0)
rng = np.random.default_rng(7)
phi = np.clip(0.3 + 0.05 * rng.standard_normal((32, 32)), -0.6, 0.9)
psi = np.clip(0.4 + 0.05 * rng.standard_normal((32, 32)), 0.1, 0.9)
state = make_state(grid, spec3, phi, psi)
cfg = SolverConfig(h=1e-3)
t0 = time.time()
E0 = total_energy(grid, spec3, state.u.ux, state.u.uy, phi, psi).total
worst = -np.inf
for n in range(10):
    state, rep = step(state, spec3, cfg)
    gate = 1e-8 * (1 + abs(rep.energy_before))
    worst = max(worst, rep.inequality_residual / gate)
    if n < 3 or n == 9:
        print(f"  n={n} E={rep.energy_after:.12f} resid={rep.inequality_residual:.3e}"
              f" picard={rep.picard_iters_outer} newton={rep.newton_iters_ch}"
              f" lin={rep.lin_iters} umax={np.max(np.abs(state.u.ux)):.2e}")
print(f"spinodal 10 steps: {time.time()-t0:.2f}s worst resid/gate {worst:.3e}")
print("means:", float(np.mean(state.phi.data)), float(np.mean(state.psi.data)))
