"""Vanishing-floor mobility studies.

The degenerate model is approached through a schedule of mobility floors:
each run regularizes the constitutive functions, integrates to a shared
horizon from shared initial data, and accumulates the quantities whose
uniform-in-floor boundedness backs the limit: entropies, square-root
fluxes, curvature norms, and the scaled singular-derivative terms.  A
cross-schedule report tabulates them per floor value and flags any
monitored quantity whose last value exceeds ten times its schedule median.

Fluxes travel in factored form: alongside j = m grad(mu) the square-root
flux jhat = sqrt(m) grad(mu) is recorded, and the reassembly sqrt(m)*jhat
is compared against j at every recorded face.  The two arrays come from
independent multiplications, so the deviation is honest round-off, not a
tautology.

The defining pairing identities for the fluxes are available as a post-hoc
residual check against a basis of smooth wall-tangential vector fields.
Both sides are quadratured through different routes (the assembled flux
versus the constitutive terms closed by discrete summation by parts), so a
sign slip, a misplaced mobility factor, or a broken mean-free inversion
shows up at leading order while agreement holds to round-off.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid2D, ScalarField, StaggeredVelocity
from .models import ModelSpec, SingularArgumentError
from .operators import (
    grad_cc, div_face, neumann_laplacian, face_average, inverse_neumann,
    face_inner, l2_inner,
)
from .regularize import i_m_max, regularized_spec
from .stepper import SimState, SolverConfig, chemical_potential, step
from .diagnostics import total_energy, entropy_integrals, make_ledger_row

__all__ = [
    "ContinuationPlan", "FluxFields", "EntropyReport", "EpsilonRun",
    "ContinuationReport", "SUMMARY_COLUMNS", "default_epsilons",
    "record_fluxes", "run_one_epsilon", "run_continuation",
    "continuation_report", "weak_flux_residuals",
]


def default_epsilons(spec, count=4, hi=1e-1, lo=1e-4):
    """Log-spaced decreasing floor schedule, clipped into the admissible
    range of the model's mobilities; clipping collapses duplicates."""
    ceiling = i_m_max(spec)
    vals = [min(float(e), ceiling) for e in np.geomspace(hi, lo, count)]
    out = []
    for v in vals:
        if not out or v < out[-1]:
            out.append(v)
    return tuple(out)


@dataclass
class ContinuationPlan:
    """One shared experiment run across a decreasing floor schedule.

    Initial data must carry finite convex potential and entropy integrals
    cellwise under the base (degenerate) model, which pins the fields
    strictly inside their intervals wherever the entropy diverges at the
    pure phases.
    """

    grid: Grid2D
    spec: ModelSpec
    config: SolverConfig
    t_final: float
    phi0: np.ndarray
    psi0: np.ndarray
    u0: StaggeredVelocity = None
    epsilons: tuple = ()
    flux_stride: int = 10

    def __post_init__(self):
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.flux_stride < 1:
            raise ValueError("flux_stride must be >= 1")
        self.phi0 = np.asarray(self.phi0, dtype=float)
        self.psi0 = np.asarray(self.psi0, dtype=float)
        shape = (self.grid.nx, self.grid.ny)
        if self.phi0.shape != shape or self.psi0.shape != shape:
            raise ValueError("initial fields must match the grid")
        ceiling = i_m_max(self.spec)
        if not self.epsilons:
            self.epsilons = default_epsilons(self.spec)
        else:
            clipped = [min(float(e), ceiling) for e in self.epsilons]
            eps = []
            for v in clipped:
                if v <= 0:
                    raise ValueError("floor values must be positive")
                if eps and v >= eps[-1]:
                    if v == eps[-1]:
                        continue        # duplicate after clipping
                    raise ValueError("floor schedule must be strictly decreasing")
                eps.append(v)
            self.epsilons = tuple(eps)
        self._check_initial_integrability()

    def _check_initial_integrability(self):
        try:
            vals = (self.spec.potential_phi.value(self.phi0),
                    self.spec.entropy_phi.value(self.phi0),
                    self.spec.potential_psi.value(self.psi0),
                    self.spec.entropy_psi.value(self.psi0))
        except SingularArgumentError as exc:
            raise ValueError(
                f"initial data carry an infinite potential or entropy "
                f"integral: {exc}") from exc
        for v in vals:
            if not np.all(np.isfinite(v)):
                raise ValueError("initial potential/entropy integrals must "
                                 "be finite on every cell")
        mp, ms = float(np.mean(self.phi0)), float(np.mean(self.psi0))
        if not (-1.0 < mp < 1.0 and 0.0 < ms < 1.0):
            raise ValueError("initial means must lie strictly inside the "
                             "physical intervals")


# ---------------------------------------------------------------------------
# Flux recording
# ---------------------------------------------------------------------------

@dataclass
class FluxFields:
    """Face fluxes of one recorded instant, in factored form.

    j_* is the mobility-weighted potential gradient, jhat_* its square-root
    factorization, j_mass the diffusive mass flux -gamma*j_phi entering the
    momentum balance.  factorization_defect is the max face deviation of
    sqrt(m)*jhat from j, scaled by max(1, max|j|).
    """

    time: float
    j_phi: tuple
    j_psi: tuple
    jhat_phi: tuple
    jhat_psi: tuple
    j_mass: tuple
    factorization_defect: float


def _factored_flux(grid, mobility, carrier, mu):
    mfx, mfy = face_average(grid, np.asarray(mobility.m(carrier), dtype=float))
    gx, gy = grad_cc(grid, mu)
    jx, jy = mfx * gx, mfy * gy
    sx, sy = np.sqrt(mfx), np.sqrt(mfy)
    hx, hy = sx * gx, sy * gy
    defect = max(np.max(np.abs(jx - sx * hx)), np.max(np.abs(jy - sy * hy)))
    scale = max(1.0, np.max(np.abs(jx)), np.max(np.abs(jy)))
    return (jx, jy), (hx, hy), defect / scale


def record_fluxes(grid, spec, phi, psi, mu_phi, mu_psi, time=0.0):
    j_phi, jhat_phi, d1 = _factored_flux(grid, spec.mobility_phi, phi, mu_phi)
    j_psi, jhat_psi, d2 = _factored_flux(grid, spec.mobility_psi, psi, mu_psi)
    j_mass = (-spec.gamma * j_phi[0], -spec.gamma * j_phi[1])
    return FluxFields(time, j_phi, j_psi, jhat_phi, jhat_psi, j_mass,
                      max(d1, d2))


# ---------------------------------------------------------------------------
# Per-floor run
# ---------------------------------------------------------------------------

@dataclass
class EntropyReport:
    """Accumulated estimate ingredients of one floor run.

    Series are sampled per accepted step (index 0 is the initial instant);
    cumulative entries are time integrals over the whole run.  The two
    cum_jhat entries reuse the audited per-step dissipation, so they are
    exactly the quantities bounded by the energy inequality.
    """

    epsilon: float
    c_eps: float
    times: list = field(default_factory=list)
    entropy_phi: list = field(default_factory=list)
    entropy_psi: list = field(default_factory=list)
    cum_jhat_phi_sq: float = 0.0
    cum_jhat_psi_sq: float = 0.0
    cum_lap_phi_sq: float = 0.0
    cum_lap_psi_sq: float = 0.0
    cum_fpp_grad_phi: float = 0.0
    cum_fpp_grad_psi: float = 0.0
    eps_ceps2_flnphi: float = 0.0
    eps_ceps2_flnpsi: float = 0.0

    def validate(self):
        for name in ("entropy_phi", "entropy_psi"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.size and (not np.all(np.isfinite(vals)) or np.any(vals < 0)):
                raise ValueError(f"{name} series must be finite and nonnegative")
        for name in ("cum_jhat_phi_sq", "cum_jhat_psi_sq", "cum_lap_phi_sq",
                     "cum_lap_psi_sq", "cum_fpp_grad_phi", "cum_fpp_grad_psi",
                     "eps_ceps2_flnphi", "eps_ceps2_flnpsi"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")

    @property
    def max_entropy_phi(self):
        return max(self.entropy_phi)

    @property
    def max_entropy_psi(self):
        return max(self.entropy_psi)


@dataclass
class EpsilonRun:
    """Everything one floor run produces: the trajectory endpoint, the
    estimate accumulations, the down-sampled flux history, per-step audit
    reports, and persistence-ready ledger rows."""

    epsilon: float
    c_eps: float
    spec: ModelSpec
    state: SimState
    report: EntropyReport
    energies: list
    fluxes: list
    step_reports: list
    ledger_rows: list
    steps: int

    @property
    def sup_energy(self):
        return max(self.energies)

    @property
    def max_factorization_defect(self):
        return max(f.factorization_defect for f in self.fluxes)


def _sigma1_compatibility(spec, phi):
    """sigma1(phi)*|W'(phi)| stays under the degeneracy bound cellwise."""
    if spec.sigma1.max == 0.0:
        return
    prod = np.abs(spec.sigma1.eval(phi)) * np.abs(spec.entropy_phi.d1(phi))
    worst = float(np.max(prod))
    if not worst <= spec.alpha:
        raise ValueError(
            f"exchange-rate compatibility violated on a recorded state: "
            f"sigma1*|W'| = {worst:.3e} > {spec.alpha:.3e}")


def run_one_epsilon(plan, epsilon):
    """Integrate the floor-regularized model to the plan horizon.

    Per accepted step the energy-inequality gate is re-asserted, fields are
    checked strictly inside their intervals, the estimate ingredients are
    accumulated with the actual accepted step size, and the factored fluxes
    of the new state are recorded (kept every flux_stride-th step plus the
    final one).
    """
    grid = plan.grid
    rspec = regularized_spec(plan.spec, epsilon)
    reg = rspec.regularization
    mu_phi, mu_psi = chemical_potential(grid, rspec, plan.phi0, plan.psi0)
    u0 = plan.u0.copy() if plan.u0 is not None else StaggeredVelocity(grid)
    state = SimState(0.0, u0,
                     ScalarField(grid, plan.phi0.copy()),
                     ScalarField(grid, plan.psi0.copy()),
                     ScalarField(grid, mu_phi), ScalarField(grid, mu_psi))
    state.validate(rspec)

    rep = EntropyReport(epsilon=epsilon, c_eps=reg.c_eps)
    sphi, spsi = entropy_integrals(grid, rspec, state.phi.data, state.psi.data)
    rep.times.append(0.0)
    rep.entropy_phi.append(sphi)
    rep.entropy_psi.append(spsi)
    energies = [total_energy(grid, rspec, state.u.ux, state.u.uy,
                             state.phi.data, state.psi.data).total]
    fluxes = [record_fluxes(grid, rspec, state.phi.data, state.psi.data,
                            state.mu_phi.data, state.mu_psi.data, time=0.0)]
    ledger_rows = [make_ledger_row(grid, rspec, 0.0, state.u.ux, state.u.uy,
                                   state.phi.data, state.psi.data)]
    step_reports = []
    fln_phi_l2 = 0.0
    fln_psi_l2 = 0.0
    k = 0
    end = plan.t_final * (1.0 - 1e-12)
    while state.time < end:
        h_clip = min(plan.config.h, plan.t_final - state.time)
        cfg = replace(plan.config, h=h_clip,
                      h_min=min(plan.config.h_min, h_clip))
        state, srep = step(state, rspec, cfg)
        k += 1
        gate = cfg.energy_audit_tol * (1.0 + abs(srep.energy_before))
        if srep.inequality_residual > gate:
            raise ValueError("accepted step violates the energy inequality")
        phi, psi = state.phi.data, state.psi.data
        _sigma1_compatibility(rspec, phi)

        h = srep.h
        rep.cum_jhat_phi_sq += srep.diss_mobility_phi
        rep.cum_jhat_psi_sq += srep.diss_mobility_psi
        lap_phi = neumann_laplacian(grid, phi)
        lap_psi = neumann_laplacian(grid, psi)
        rep.cum_lap_phi_sq += h * l2_inner(grid, lap_phi, lap_phi)
        rep.cum_lap_psi_sq += h * l2_inner(grid, lap_psi, lap_psi)
        rep.cum_fpp_grad_phi += h * _curvature_weighted_grad_sq(
            grid, rspec.potential_phi, phi)
        rep.cum_fpp_grad_psi += h * _curvature_weighted_grad_sq(
            grid, rspec.potential_psi, psi)
        fln_phi_l2 += h * l2_inner(grid, reg.f_ln_phi.d1(phi),
                                   reg.f_ln_phi.d1(phi))
        fln_psi_l2 += h * l2_inner(grid, reg.f_ln_psi.d1(psi),
                                   reg.f_ln_psi.d1(psi))
        sphi, spsi = entropy_integrals(grid, rspec, phi, psi)
        rep.times.append(state.time)
        rep.entropy_phi.append(sphi)
        rep.entropy_psi.append(spsi)
        energies.append(total_energy(grid, rspec, state.u.ux, state.u.uy,
                                     phi, psi).total)
        step_reports.append(srep)
        ledger_rows.append(make_ledger_row(grid, rspec, state.time,
                                           state.u.ux, state.u.uy, phi, psi,
                                           report=srep))
        done = state.time >= end
        if k % plan.flux_stride == 0 or done:
            fluxes.append(record_fluxes(grid, rspec, phi, psi,
                                        state.mu_phi.data, state.mu_psi.data,
                                        time=state.time))
    rep.eps_ceps2_flnphi = epsilon * reg.c_eps ** 2 * fln_phi_l2
    rep.eps_ceps2_flnpsi = epsilon * reg.c_eps ** 2 * fln_psi_l2
    rep.validate()
    return EpsilonRun(epsilon=epsilon, c_eps=reg.c_eps, spec=rspec,
                      state=state, report=rep, energies=energies,
                      fluxes=fluxes, step_reports=step_reports,
                      ledger_rows=ledger_rows, steps=k)


def _curvature_weighted_grad_sq(grid, potential, z):
    wfx, wfy = face_average(grid, np.asarray(potential.d2(z), dtype=float))
    gx, gy = grad_cc(grid, z)
    return face_inner(grid, wfx * gx, wfy * gy, gx, gy)


def run_continuation(plan):
    """All floor runs of the schedule plus the cross-schedule report."""
    runs = [run_one_epsilon(plan, eps) for eps in plan.epsilons]
    return runs, continuation_report(runs)


# ---------------------------------------------------------------------------
# Cross-schedule report
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "epsilon", "c_eps", "sup_energy",
    "cum_jhat_phi_sq", "cum_jhat_psi_sq",
    "cum_lap_phi_sq", "cum_lap_psi_sq",
    "eps_ceps2_flnphi", "eps_ceps2_flnpsi",
    "max_entropy_phi", "max_entropy_psi",
)

# columns the blow-up flag watches; epsilon/c_eps set the schedule itself
_MONITORED = SUMMARY_COLUMNS[2:]


@dataclass
class ContinuationReport:
    """Fixed-column summary across the floor schedule.

    flags[column] is True when the last (smallest-floor) value exceeds ten
    times the schedule median of that column, the working definition of
    growing without bound at desk scale.
    """

    rows: list
    flags: dict

    @property
    def any_blowup(self):
        return any(self.flags.values())

    def to_csv(self):
        lines = [",".join(SUMMARY_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(f"{row[c]:.17g}" for c in SUMMARY_COLUMNS))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def continuation_report(runs):
    if not runs:
        raise ValueError("report needs at least one completed run")
    rows = []
    for run in runs:
        r = run.report
        rows.append({
            "epsilon": run.epsilon,
            "c_eps": run.c_eps,
            "sup_energy": run.sup_energy,
            "cum_jhat_phi_sq": r.cum_jhat_phi_sq,
            "cum_jhat_psi_sq": r.cum_jhat_psi_sq,
            "cum_lap_phi_sq": r.cum_lap_phi_sq,
            "cum_lap_psi_sq": r.cum_lap_psi_sq,
            "eps_ceps2_flnphi": r.eps_ceps2_flnphi,
            "eps_ceps2_flnpsi": r.eps_ceps2_flnpsi,
            "max_entropy_phi": r.max_entropy_phi,
            "max_entropy_psi": r.max_entropy_psi,
        })
    c_eps = [row["c_eps"] for row in rows]
    if any(b > a for a, b in zip(c_eps, c_eps[1:])):
        raise ValueError("regularization constant must not increase along "
                         "a decreasing floor schedule")
    flags = {}
    for col in _MONITORED:
        vals = np.array([row[col] for row in rows])
        med = float(np.median(vals))
        flags[col] = bool(vals[-1] > 10.0 * med) if med > 0 else False
    return ContinuationReport(rows=rows, flags=flags)


# ---------------------------------------------------------------------------
# Weak-flux pairing residuals
# ---------------------------------------------------------------------------

def _tangential_basis(grid):
    """Eight smooth vector fields on faces with zero wall-normal component.

    Sine factors vanish analytically at the walls in the normal coordinate;
    the wall entries are pinned to exact zeros afterwards since sin(k*pi)
    only reaches ~1e-16 in floating point and the summation-by-parts
    closure needs them exactly zero.
    """
    lx, ly = grid.lx, grid.ly
    xf = np.arange(grid.nx + 1)[:, None] * grid.dx          # x-face abscissae
    ycx = (np.arange(grid.ny)[None, :] + 0.5) * grid.dy
    xcy = (np.arange(grid.nx)[:, None] + 0.5) * grid.dx
    yf = np.arange(grid.ny + 1)[None, :] * grid.dy          # y-face ordinates

    def sx(k):
        return np.sin(k * np.pi * xf / lx)

    def sy(k):
        return np.sin(k * np.pi * yf / ly)

    zx = np.zeros((grid.nx + 1, grid.ny))
    zy = np.zeros((grid.nx, grid.ny + 1))
    basis = [
        (sx(1) * np.ones_like(ycx), zy),
        (zx, np.ones_like(xcy) * sy(1)),
        (sx(2) * np.cos(np.pi * ycx / ly), zy),
        (zx, np.cos(np.pi * xcy / lx) * sy(2)),
        (sx(1) * np.cos(2 * np.pi * ycx / ly), zy),
        (zx, np.cos(2 * np.pi * xcy / lx) * sy(1)),
        (sx(1) * np.cos(np.pi * ycx / ly),
         np.cos(np.pi * xcy / lx) * sy(1)),
        (sx(2) * np.ones_like(ycx), -np.ones_like(xcy) * sy(2)),
    ]
    out = []
    for ex, ey in basis:
        ex = ex.copy()
        ey = ey.copy()
        ex[0, :] = ex[-1, :] = 0.0
        ey[:, 0] = ey[:, -1] = 0.0
        out.append((ex, ey))
    return out


def _pairing_residual(grid, mobility, carrier, core, z, lap_weight, nl_grad,
                      eta):
    """Relative defect of one flux pairing against one test field.

    The left side pairs the assembled flux m*grad(mu) with eta.  The right
    side rebuilds it constitutively: the face gradient of the pointwise
    core (convex derivative plus coupling derivative), the curvature term
    moved onto div(m*eta) by summation by parts, and the mean-free
    inversion gradient.  Both sides are exact discretizations of the same
    pairing, so the residual is round-off, not truncation.
    """
    ex, ey = eta
    mfx, mfy = face_average(grid, np.asarray(mobility.m(carrier), dtype=float))
    wx, wy = mfx * ex, mfy * ey

    lap = neumann_laplacian(grid, z)
    mu = -lap_weight * lap + core
    if nl_grad is not None:
        nlx, nly = nl_grad
    else:
        nlx = nly = None

    gx, gy = grad_cc(grid, mu)
    if nlx is not None:
        lhs = face_inner(grid, mfx * (gx + nlx), mfy * (gy + nly), ex, ey)
    else:
        lhs = face_inner(grid, mfx * gx, mfy * gy, ex, ey)

    cgx, cgy = grad_cc(grid, core)
    t_core = face_inner(grid, cgx, cgy, wx, wy)
    t_lap = lap_weight * l2_inner(grid, lap, div_face(grid, wx, wy))
    t_nl = face_inner(grid, nlx, nly, wx, wy) if nlx is not None else 0.0
    rhs = t_core + t_lap + t_nl
    den = abs(lhs) + abs(t_core) + abs(t_lap) + abs(t_nl)
    return abs(lhs - rhs) / den if den > 0 else 0.0


def weak_flux_residuals(grid, spec, phi, psi):
    """Residuals of the two defining flux pairings over the test basis.

    Works with the instantaneous constitutive potentials of the given spec
    (no time discretization enters), returning one residual array per
    field, each of length eight.
    """
    basis = _tangential_basis(grid)
    core_phi = (np.asarray(spec.potential_phi.d1(phi), dtype=float)
                + np.asarray(spec.coupling.dphi(phi, psi), dtype=float))
    core_psi = (np.asarray(spec.potential_psi.d1(psi), dtype=float)
                + np.asarray(spec.coupling.dpsi(phi, psi), dtype=float))
    nl_grad = None
    if spec.sigma2 > 0:
        pot = spec.sigma2 * inverse_neumann(grid, phi - np.mean(phi))
        nl_grad = grad_cc(grid, pot)
    res_phi = np.array([
        _pairing_residual(grid, spec.mobility_phi, phi, core_phi, phi,
                          1.0, nl_grad, eta)
        for eta in basis])
    res_psi = np.array([
        _pairing_residual(grid, spec.mobility_psi, psi, core_psi, psi,
                          spec.beta, None, eta)
        for eta in basis])
    return res_phi, res_psi
