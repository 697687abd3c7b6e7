import time
import numpy as np
import sys
sys.path.insert(0, "src")

from nschsurf.grid import Grid2D, ScalarField, StaggeredVelocity
from nschsurf import models as M
from nschsurf import stepper as S
from nschsurf.stepper import SimState, SolverConfig, chemical_potential, step
from nschsurf.diagnostics import total_energy

calls = {"attempt": 0, "fail": []}
_orig = S._attempt
def counting_attempt(state, spec, config, h):
    calls["attempt"] += 1
    try:
        return _orig(state, spec, config, h)
    except S.StepFailure as e:
        calls["fail"].append(str(e))
        raise
S._attempt = counting_attempt

spec = M.ModelSpec(
    rho1=3.0, rho2=1.0, nu1=1.0, nu2=1.0, beta=1.0, sigma2=1.0, c=0.0,
    potential_phi=M.LogPotential(0.8, (-1.0, 1.0)),
    potential_psi=M.LogPotential(0.3, (0.0, 1.0)),
    mobility_phi=M.MobilityModel("constant", (-1.0, 1.0), value=1.0),
    mobility_psi=M.MobilityModel("constant", (0.0, 1.0), value=1.0),
    coupling=M.CouplingModel(1.0, 0.5, 0.4, 0.2),
    sigma1=M.Sigma1Model("constant", 1.0))

n = 64
grid = Grid2D(n, n, 1.0, 1.0)
rng = np.random.default_rng(11)
phi = np.clip(0.3 + 0.05 * rng.standard_normal((n, n)), -0.6, 0.9)
psi = np.clip(0.4 + 0.05 * rng.standard_normal((n, n)), 0.1, 0.9)
mu_phi, mu_psi = chemical_potential(grid, spec, phi, psi)
state = SimState(0.0, StaggeredVelocity(grid),
                 ScalarField(grid, phi), ScalarField(grid, psi),
                 ScalarField(grid, mu_phi), ScalarField(grid, mu_psi))
cfg = SolverConfig(h=1e-3)

E_prev = total_energy(grid, spec, state.u.ux, state.u.uy, phi, psi).total
worst = -np.inf
t0 = time.time()
nsteps = 20
for k in range(nsteps):
    t1 = time.time()
    state, rep = step(state, spec, cfg)
    dt = time.time() - t1
    gate = 1e-8 * (1 + abs(rep.energy_before))
    worst = max(worst, rep.inequality_residual / gate)
    mono = rep.energy_after <= E_prev + 1e-14
    E_prev = rep.energy_after
    if k < 3 or k == nsteps - 1:
        print(f"k={k} {dt*1000:6.1f}ms picard={rep.picard_iters_outer}"
              f" newton={rep.newton_iters_ch} lin={rep.lin_iters}"
              f" resid={rep.inequality_residual:+.3e} mono={mono}")
tot = time.time() - t0
print(f"{nsteps} steps: {tot:.2f}s  ({tot/nsteps*1000:.0f} ms/step)")
print(f"attempts={calls['attempt']} for {nsteps} steps; failures={calls['fail']}")
print(f"worst resid/gate {worst:+.3e}")
print("projected 200 steps:", f"{tot/nsteps*200:.1f}s")
