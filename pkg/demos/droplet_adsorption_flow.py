"""A heavy droplet in a light matrix, run through the config pipeline.

Everything here goes through the same path as the command line: a plain
text configuration, the scenario builder, the orchestrated run, and the
per-step ledger on disk.  The droplet fluid is three times denser than
the matrix and twice as viscous; the surfactant starts piled onto the
diffuse interface (the droplet preset does this) and the adsorption
terms of the coupling energy hold it there.

Reads the ledger back afterwards and reports what the run conserved.
"""

import os
import tempfile

import numpy as np

from nschsurf import load_config, run
from nschsurf.diagnostics import read_ledger, audit_ledger
from nschsurf.io import read_snapshot

workdir = tempfile.mkdtemp(prefix="droplet_demo_")

text = f"""
[grid]
nx = 48
ny = 48

[model]
rho1 = 3.0
rho2 = 1.0
nu1 = 2.0
nu2 = 1.0
beta = 0.5
coupling_gamma1 = 1.0
coupling_gamma2 = 0.5
coupling_theta_phi = 0.4
coupling_theta_psi = 0.2

[scenario]
kind = droplet
radius = 0.25
psi_base = 0.1
psi_boost = 0.5

[solver]
h = 1e-3

[run]
t_final = 0.05

[output]
directory = {workdir}
snapshot_stride = 25
"""

config = load_config(text)
result = run(config)
assert result.exit_code == 0, result.error
print(f"run finished, artifacts in {result.out_dir}")

rows = read_ledger(result.ledgers[0])
print(f"ledger has {len(rows)} rows ({len(rows) - 1} steps)")

# with no reaction term both means are conserved exactly
drift_phi = max(abs(r.mean_phi - rows[0].mean_phi) for r in rows)
drift_psi = max(abs(r.mean_psi - rows[0].mean_psi) for r in rows)
print(f"mean(phi) drift {drift_phi:.2e}, mean(psi) drift {drift_psi:.2e}")

increases = [b.e_total - a.e_total for a, b in zip(rows, rows[1:])]
print(f"energy {rows[0].e_total:.5f} -> {rows[-1].e_total:.5f}, "
      f"max increase {max(increases):.2e}")
print(f"worst stored-vs-recomputed audit deviation: "
      f"{audit_ledger(rows):.2e}")

# the density contrast sets the fluid in motion as the interface relaxes
print(f"peak kinetic energy over the run: "
      f"{max(r.e_kinetic for r in rows):.3e}")

# surfactant stays interfacial: compare its bulk and interface levels
snaps = sorted(p for p in os.listdir(workdir) if p.startswith("psi_"))
psi, _, _ = read_snapshot(os.path.join(workdir, snaps[-1]))
phi, _, _ = read_snapshot(os.path.join(workdir,
                                       snaps[-1].replace("psi", "phi")))
on_iface = np.abs(phi) < 0.5
print(f"final psi on the interface band: {psi[on_iface].mean():.3f}, "
      f"in the bulk: {psi[~on_iface].mean():.3f}")
print(f"final phi range [{phi.min():.4f}, {phi.max():.4f}] "
      f"(strictly inside (-1, 1))")
