"""Energy bookkeeping, the per-step inequality audit, mass laws, and the
self-auditing run ledger.

All quadratures here reuse the scheme's own operators (cell midpoint sums,
face gradients, the cosine-transform inverse Laplacian), so the audited
statement is the discrete inequality the stepper actually enforces, not a
continuum approximation.  The audit identity is

    E_after + dissipation + oono_source + defects - E_before = -(convexity gaps)

with four nonnegative defect terms (kinetic, two gradient, one dual-norm),
so the reported signed residual must stay below tolerance on every accepted
step; it is typically strictly negative.

Ledger files are plain CSV: a `# nsch-ledger v1` magic line, a fixed column
header, then one row per state (row 0 is the initial state with zero step
fields).  Dissipation, source, and defect columns store the h-scaled
per-step contributions so a reader can re-run the audit from the file alone;
floats are written with 17 significant digits, which round-trips binary64.
"""

import numpy as np
from dataclasses import dataclass, fields as dataclass_fields

from .operators import (
    grad_cc, face_average, face_inner, inverse_neumann, l2_inner,
    symmetric_gradient_norm,
)

__all__ = [
    "EnergyBreakdown", "StepReport", "LedgerRow", "MassLawReport",
    "total_energy", "entropy_integrals", "energy_audit", "mass_laws",
    "write_ledger", "read_ledger", "audit_ledger", "make_ledger_row",
]


# ---------------------------------------------------------------------------
# Energy decomposition
# ---------------------------------------------------------------------------

@dataclass
class EnergyBreakdown:
    kinetic: float
    grad_phi: float
    grad_psi: float
    nonlocal_: float
    f_phi: float
    f_psi: float
    g: float
    total: float


def _star_sq(grid, f):
    """Squared dual seminorm <f0, N f0> of the mean-free part."""
    f0 = f - np.mean(f)
    return max(l2_inner(grid, f0, inverse_neumann(grid, f0)), 0.0)


def total_energy(grid, spec, ux, uy, phi, psi):
    rho = spec.rho(phi)
    rfx, rfy = face_average(grid, rho)
    kinetic = 0.5 * face_inner(grid, rfx * ux, rfy * uy, ux, uy)
    gpx, gpy = grad_cc(grid, phi)
    grad_phi = 0.5 * face_inner(grid, gpx, gpy, gpx, gpy)
    gsx, gsy = grad_cc(grid, psi)
    grad_psi = 0.5 * spec.beta * face_inner(grid, gsx, gsy, gsx, gsy)
    nl = 0.5 * spec.sigma2 * _star_sq(grid, phi) if spec.sigma2 > 0 else 0.0
    f_phi = grid.integral(np.asarray(spec.potential_phi.value(phi), dtype=float))
    f_psi = grid.integral(np.asarray(spec.potential_psi.value(psi), dtype=float))
    g = grid.integral(np.asarray(spec.coupling.value(phi, psi), dtype=float))
    total = kinetic + grad_phi + grad_psi + nl + f_phi + f_psi + g
    return EnergyBreakdown(kinetic, grad_phi, grad_psi, nl, f_phi, f_psi, g, total)


def entropy_integrals(grid, spec, phi, psi):
    """(int W_phi(phi), int W_psi(psi)) with the model's entropy densities."""
    s_phi = grid.integral(np.asarray(spec.entropy_phi.value(phi), dtype=float))
    s_psi = grid.integral(np.asarray(spec.entropy_psi.value(psi), dtype=float))
    return s_phi, s_psi


# ---------------------------------------------------------------------------
# Per-step audit
# ---------------------------------------------------------------------------

@dataclass
class StepReport:
    h: float
    picard_iters_outer: int
    newton_iters_ch: int
    lin_iters: int
    energy_before: float
    energy_after: float
    diss_viscous: float
    diss_mobility_phi: float
    diss_mobility_psi: float
    dissipation: float
    oono_source: float
    defect_kinetic: float
    defect_grad_phi: float
    defect_grad_psi: float
    defect_star: float
    extra_nonneg: float
    inequality_residual: float
    mean_phi: float
    mean_psi: float


def energy_audit(grid, spec, h, ux_old, uy_old, phi_old, psi_old,
                 ux, uy, phi, psi, mu_phi, mu_psi,
                 picard_iters=0, newton_iters=0, lin_iters=0):
    """Every term of the one-step energy statement, as the scheme discretizes
    it: same face mobilities, same strain quadrature, same secant coupling.
    Pure function of the two states; works for arbitrary field pairs."""
    e_old = total_energy(grid, spec, ux_old, uy_old, phi_old, psi_old)
    e_new = total_energy(grid, spec, ux, uy, phi, psi)

    # dissipation, with transport coefficients frozen at the old state
    nu_old = spec.nu(phi_old)
    visc = h * symmetric_gradient_norm(grid, ux, uy, nu_old)
    mpx, mpy = face_average(grid, np.asarray(spec.mobility_phi.m(phi_old)))
    msx, msy = face_average(grid, np.asarray(spec.mobility_psi.m(psi_old)))
    gmx, gmy = grad_cc(grid, mu_phi)
    mob_phi = h * face_inner(grid, mpx * gmx, mpy * gmy, gmx, gmy)
    gnx, gny = grad_cc(grid, mu_psi)
    mob_psi = h * face_inner(grid, msx * gnx, msy * gny, gnx, gny)

    # Oono exchange source: mu-weighted mass term minus the kinetic correction
    sig_old = np.asarray(spec.sigma1.eval(phi_old), dtype=float)
    drive = np.mean(phi_old) - spec.c
    if spec.sigma1.max > 0.0:
        sfx, sfy = face_average(grid, sig_old)
        kin_corr = 0.5 * spec.gamma * face_inner(grid, sfx * ux, sfy * uy, ux, uy)
        oono = h * drive * (l2_inner(grid, sig_old, mu_phi) - kin_corr)
    else:
        oono = 0.0

    # the four nonnegative defect terms
    rfx, rfy = face_average(grid, spec.rho(phi_old))
    dkin = 0.5 * face_inner(grid, rfx * (ux - ux_old), rfy * (uy - uy_old),
                            ux - ux_old, uy - uy_old)
    dpx, dpy = grad_cc(grid, phi - phi_old)
    dgphi = 0.5 * face_inner(grid, dpx, dpy, dpx, dpy)
    dsx, dsy = grad_cc(grid, psi - psi_old)
    dgpsi = 0.5 * spec.beta * face_inner(grid, dsx, dsy, dsx, dsy)
    dstar = (0.5 * spec.sigma2 * _star_sq(grid, phi - phi_old)
             if spec.sigma2 > 0 else 0.0)
    extra = dkin + dgphi + dgpsi + dstar

    dissipation = visc + mob_phi + mob_psi
    residual = e_new.total + dissipation + oono + extra - e_old.total
    return StepReport(
        h=h, picard_iters_outer=picard_iters, newton_iters_ch=newton_iters,
        lin_iters=lin_iters,
        energy_before=e_old.total, energy_after=e_new.total,
        diss_viscous=visc, diss_mobility_phi=mob_phi, diss_mobility_psi=mob_psi,
        dissipation=dissipation, oono_source=oono,
        defect_kinetic=dkin, defect_grad_phi=dgphi, defect_grad_psi=dgpsi,
        defect_star=dstar, extra_nonneg=extra, inequality_residual=residual,
        mean_phi=float(np.mean(phi)), mean_psi=float(np.mean(psi)))


# ---------------------------------------------------------------------------
# Mass laws
# ---------------------------------------------------------------------------

@dataclass
class MassLawReport:
    psi_deviation: float
    phi_product_deviation: float
    continuous_gap: float


def mass_laws(rows, spec):
    """Check the recorded mean history against the exact step-mass laws.

    psi mean must be constant; phi mean minus c must follow the running
    product of (1 - h * mean sigma1).  The continuous exponential analogue
    is reported as a gap, never asserted (the scheme realizes the product)."""
    if len(rows) < 2:
        raise ValueError("mass-law check needs at least two ledger rows")
    psi0 = rows[0].mean_psi
    psi_dev = max(abs(r.mean_psi - psi0) for r in rows)
    drive = rows[0].mean_phi - spec.c
    prod = 1.0
    expo = 0.0
    phi_dev = 0.0
    for prev, cur in zip(rows[:-1], rows[1:]):
        prod *= 1.0 - cur.h * prev.mean_sigma1
        expo += cur.h * prev.mean_sigma1
        phi_dev = max(phi_dev, abs(cur.mean_phi - (spec.c + prod * drive)))
    gap = abs(prod * drive - np.exp(-expo) * drive)
    return MassLawReport(psi_dev, phi_dev, gap)


# ---------------------------------------------------------------------------
# Ledger persistence
# ---------------------------------------------------------------------------

LEDGER_MAGIC = "# nsch-ledger v1"

_INT_COLUMNS = ("picard_iters", "newton_iters", "lin_iters")


@dataclass
class LedgerRow:
    time: float
    h: float
    e_kinetic: float
    e_grad_phi: float
    e_grad_psi: float
    e_nonlocal: float
    e_f_phi: float
    e_f_psi: float
    e_g: float
    e_total: float
    diss_viscous: float
    diss_mobility_phi: float
    diss_mobility_psi: float
    oono_source: float
    defect_kinetic: float
    defect_grad_phi: float
    defect_grad_psi: float
    defect_star: float
    mean_phi: float
    mean_psi: float
    mean_sigma1: float
    entropy_phi: float
    entropy_psi: float
    min_phi: float
    max_phi: float
    min_psi: float
    max_psi: float
    picard_iters: int
    newton_iters: int
    lin_iters: int
    inequality_residual: float


LEDGER_COLUMNS = tuple(f.name for f in dataclass_fields(LedgerRow))


def make_ledger_row(grid, spec, time, ux, uy, phi, psi, report=None):
    """Assemble a row from a state plus (for steps past the first) the
    step report; the t=0 row carries zero step fields."""
    e = total_energy(grid, spec, ux, uy, phi, psi)
    s_phi, s_psi = entropy_integrals(grid, spec, phi, psi)
    sig = np.asarray(spec.sigma1.eval(phi), dtype=float)
    z = StepReport(0.0, 0, 0, 0, e.total, e.total, 0.0, 0.0, 0.0, 0.0, 0.0,
                   0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                   float(np.mean(phi)), float(np.mean(psi)))
    r = report if report is not None else z
    return LedgerRow(
        time=time, h=r.h,
        e_kinetic=e.kinetic, e_grad_phi=e.grad_phi, e_grad_psi=e.grad_psi,
        e_nonlocal=e.nonlocal_, e_f_phi=e.f_phi, e_f_psi=e.f_psi, e_g=e.g,
        e_total=e.total,
        diss_viscous=r.diss_viscous, diss_mobility_phi=r.diss_mobility_phi,
        diss_mobility_psi=r.diss_mobility_psi, oono_source=r.oono_source,
        defect_kinetic=r.defect_kinetic, defect_grad_phi=r.defect_grad_phi,
        defect_grad_psi=r.defect_grad_psi, defect_star=r.defect_star,
        mean_phi=float(np.mean(phi)), mean_psi=float(np.mean(psi)),
        mean_sigma1=float(np.mean(sig)),
        entropy_phi=s_phi, entropy_psi=s_psi,
        min_phi=float(np.min(phi)), max_phi=float(np.max(phi)),
        min_psi=float(np.min(psi)), max_psi=float(np.max(psi)),
        picard_iters=r.picard_iters_outer, newton_iters=r.newton_iters_ch,
        lin_iters=r.lin_iters,
        inequality_residual=r.inequality_residual)


def write_ledger(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LEDGER_MAGIC + "\n")
        fh.write(",".join(LEDGER_COLUMNS) + "\n")
        for row in rows:
            vals = []
            for name in LEDGER_COLUMNS:
                v = getattr(row, name)
                vals.append(str(int(v)) if name in _INT_COLUMNS
                            else format(float(v), ".17g"))
            fh.write(",".join(vals) + "\n")


def read_ledger(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != LEDGER_MAGIC:
        raise ValueError(f"not a ledger file (missing '{LEDGER_MAGIC}')")
    if len(lines) < 2 or tuple(lines[1].split(",")) != LEDGER_COLUMNS:
        raise ValueError("ledger column schema mismatch")
    rows = []
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != len(LEDGER_COLUMNS):
            raise ValueError("ledger row width mismatch")
        kwargs = {}
        for name, tok in zip(LEDGER_COLUMNS, parts):
            kwargs[name] = int(tok) if name in _INT_COLUMNS else float(tok)
        rows.append(LedgerRow(**kwargs))
    return rows


def audit_ledger(rows):
    """Re-run the inequality bookkeeping from persisted columns alone.

    Returns the worst relative deviation between the stored residual column
    and  e_total + dissipation + oono + defects - previous e_total,  plus a
    consistency check that the energy parts recombine to e_total."""
    worst = 0.0
    for row in rows:
        parts = (row.e_kinetic + row.e_grad_phi + row.e_grad_psi
                 + row.e_nonlocal + row.e_f_phi + row.e_f_psi + row.e_g)
        worst = max(worst, abs(parts - row.e_total) / (1.0 + abs(row.e_total)))
    for prev, cur in zip(rows[:-1], rows[1:]):
        recomputed = (cur.e_total
                      + cur.diss_viscous + cur.diss_mobility_phi
                      + cur.diss_mobility_psi + cur.oono_source
                      + cur.defect_kinetic + cur.defect_grad_phi
                      + cur.defect_grad_psi + cur.defect_star
                      - prev.e_total)
        dev = abs(recomputed - cur.inequality_residual)
        worst = max(worst, dev / (1.0 + abs(prev.e_total)))
    return worst
