"""Regularization family for degenerate mobilities.

Given a degenerate mobility m vanishing exactly at the pure phases, and a
parameter eps in

    I_M = (0, m_phi(0)/2] intersect (0, m_psi(1/2)/2],

the regularized mobility has a positive floor:

    m^eps(s) = 2*eps              outside [lo+delta1, hi-delta2],
               eps + m(s)         inside,

with delta1, delta2 the first points (from each end) where m reaches eps.
The singular potential F is replaced by F^eps = Ftilde^eps + c_eps * F_ln
where the regular part is defined through its curvature,

    (Ftilde^eps)'' = (m / m^eps) * F'',   anchored like F,

F_ln is the canonical logarithm ((1+s)ln(1+s)+(1-s)ln(1-s) on (-1,1);
s ln s + (1-s)ln(1-s) + ln 2 on (0,1); the +ln2 keeps the anchor at zero
and only shifts energies by a constant), and

    c_eps = min(1, -delta1/F_ln'(lo+delta1), delta2/F_ln'(hi-delta2), ...)

over both fields' cutoffs.  The entropy W^eps solves (W^eps)'' = 1/m^eps
with the same anchoring.

Ftilde^eps and W^eps have no closed form for general degeneracy order, so
they are built as piecewise cubic Hermite tables on Chebyshev-clustered
nodes: per node interval the two integrals  int g dt  and
int (x_{j+1}-t) g(t) dt  are evaluated by composite adaptive Simpson
(panel doubling, absolute tolerance 1e-12 distributed over the intervals)
and accumulated via

    d[j+1] = d[j] + int g,     v[j+1] = v[j] + d[j]*dx + int (x_{j+1}-t) g.

Node density per piece is chosen from the sampled curvature of g: both the
value-tolerance spacing (384*1e-11/|g''|)^(1/4) and the slope-tolerance
spacing (125*1e-8/|g''|)^(1/3) must hold at the piece ends, where Chebyshev
spacing is tightest and the m^eps junction kinks concentrate curvature of
order |g|*(|m'|/eps)^2.
"""

import numpy as np
from dataclasses import dataclass, replace

from .models import (
    LogPotential, TabulatedPotential, MobilityModel, EntropyModel,
    ModelSpec, PHI_DOMAIN, PSI_DOMAIN,
)

__all__ = [
    "PiecewiseHermiteTable",
    "RegularizedModel",
    "i_m_max",
    "build_regularization",
    "regularized_spec",
]

BISECT_TOL = 1e-14
TABLE_VALUE_TOL = 1e-11
TABLE_SLOPE_TOL = 1e-8
MAX_NODES_PER_PIECE = 8000


def i_m_max(spec):
    """Upper end of the admissible regularization interval I_M."""
    m1 = float(spec.mobility_phi.m(0.0))
    m2 = float(spec.mobility_psi.m(0.5))
    return 0.5 * min(m1, m2)


def _cutoff(mobility, eps, side):
    """Distance from the given domain end at which m first reaches eps.

    m is monotone between each end and the domain midpoint for the
    polynomial-degenerate kind, so plain bisection on [0, half-width]
    brackets the unique crossing.
    """
    lo, hi = mobility.lo, mobility.hi
    half = 0.5 * (hi - lo)
    end = lo if side == 0 else hi
    sgn = 1.0 if side == 0 else -1.0
    a, b = 0.0, half
    fa = mobility.m(end) - eps
    if fa >= 0:
        raise ValueError("mobility does not vanish at the domain end")
    while b - a > BISECT_TOL:
        mid = 0.5 * (a + b)
        if mobility.m(end + sgn * mid) - eps < 0.0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# Tabulated second-antiderivative machinery
# ---------------------------------------------------------------------------

def _chebyshev_nodes(a, b, n):
    """n+1 Chebyshev extrema points on [a, b], ascending, ends included."""
    j = np.arange(n + 1)
    x = 0.5 * (a + b) - 0.5 * (b - a) * np.cos(j * np.pi / n)
    x[0], x[-1] = a, b
    return x


def _simpson_pair(g, a, b, n):
    """Composite Simpson with n panels of int g and int (b-t) g(t) dt,
    vectorized over interval arrays a, b."""
    tau = np.linspace(0.0, 1.0, n + 1)
    t = a[:, None] + (b - a)[:, None] * tau[None, :]
    ft = g(t)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    h3 = (b - a) / (3.0 * n)
    s1 = h3 * (ft @ w)
    s2 = h3 * (((b[:, None] - t) * ft) @ w)
    return s1, s2


def _integrate_intervals(g, a, b, tol):
    """Adaptive composite Simpson on each [a_i, b_i] with per-interval
    absolute tolerance tol_i; returns (int g, int (b-t)g) arrays."""
    m = a.size
    out1 = np.empty(m)
    out2 = np.empty(m)
    idx = np.arange(m)
    aa, bb, tt = a.astype(float), b.astype(float), np.broadcast_to(tol, (m,)).astype(float)
    s1p, s2p = _simpson_pair(g, aa, bb, 2)
    n = 4
    while True:
        s1, s2 = _simpson_pair(g, aa, bb, n)
        ok = (np.abs(s1 - s1p) <= tt) & (np.abs(s2 - s2p) <= tt)
        if n >= 1024:
            ok[:] = True
        # Richardson extrapolation of the accepted panels
        out1[idx[ok]] = s1[ok] + (s1[ok] - s1p[ok]) / 15.0
        out2[idx[ok]] = s2[ok] + (s2[ok] - s2p[ok]) / 15.0
        if ok.all():
            return out1, out2
        keep = ~ok
        idx, aa, bb, tt = idx[keep], aa[keep], bb[keep], tt[keep]
        s1p, s2p = s1[keep], s2[keep]
        n *= 2


def _plan_piece(g, a, b, spike_g2=0.0):
    """Node count for one piece from sampled curvature of g.

    Two criteria: the end-spacing one (end gap ~ L pi^2 / (4 N^2)) sized by
    the worst curvature including the junction kink floor spike_g2, and an
    interior one matching the local Chebyshev spacing (pi/N) sqrt(L d) at
    distance d from the nearer end against the curvature sampled there (the
    floor-mobility boundary layer peaks the spacing^3 * curvature product
    inside the piece, not at its ends).
    """
    length = b - a
    probe = _chebyshev_nodes(a, b, 512)
    fp = g(probe)
    d1 = np.diff(fp) / np.diff(probe)
    dd2 = 2.0 * np.abs(np.diff(d1) / (probe[2:] - probe[:-2]))
    g2 = max(float(np.max(dd2)), spike_g2, 1e-30)
    d_val = (384.0 * TABLE_VALUE_TOL / g2) ** 0.25
    d_slp = (125.0 * TABLE_SLOPE_TOL / g2) ** (1.0 / 3.0)
    d_req = min(d_val, d_slp, length / 8.0)
    n_end = np.pi * np.sqrt(length / (4.0 * d_req))
    g2_mid = np.maximum(dd2, 1e-30)
    dist = np.minimum(probe - a, b - probe)[1:-1]
    n_int = np.pi * float(np.max(np.sqrt(length * dist) * np.maximum(
        (g2_mid / (125.0 * TABLE_SLOPE_TOL)) ** (1.0 / 3.0),
        (g2_mid / (384.0 * TABLE_VALUE_TOL)) ** 0.25)))
    n = int(np.ceil(max(n_end, n_int)))
    return min(max(n, 32), MAX_NODES_PER_PIECE)


class PiecewiseHermiteTable:
    """C1 piecewise-cubic interpolant of a second antiderivative.

    Built from (value, slope) pairs at nodes; .d1 is the exact derivative
    of .value's cubic (the pair stays self-consistent to round-off), .d2
    is the supplied closed-form curvature.
    """

    def __init__(self, nodes, values, derivs, d2_fn):
        self.x = nodes
        self.v = values
        self.d = derivs
        self._d2 = d2_fn
        self.lo = float(nodes[0])
        self.hi = float(nodes[-1])

    def _locate(self, s):
        s = np.clip(np.asarray(s, dtype=float), self.lo, self.hi)
        j = np.clip(np.searchsorted(self.x, s, side="right") - 1, 0, self.x.size - 2)
        dx = self.x[j + 1] - self.x[j]
        xi = (s - self.x[j]) / dx
        return j, dx, xi

    def value(self, s):
        j, dx, xi = self._locate(s)
        x2 = xi * xi
        x3 = x2 * xi
        h00 = 2 * x3 - 3 * x2 + 1
        h10 = x3 - 2 * x2 + xi
        h01 = -2 * x3 + 3 * x2
        h11 = x3 - x2
        return (self.v[j] * h00 + dx * self.d[j] * h10
                + self.v[j + 1] * h01 + dx * self.d[j + 1] * h11)

    def d1(self, s):
        j, dx, xi = self._locate(s)
        x2 = xi * xi
        g00 = (6 * x2 - 6 * xi) / dx
        g10 = 3 * x2 - 4 * xi + 1
        g01 = (-6 * x2 + 6 * xi) / dx
        g11 = 3 * x2 - 2 * xi
        return (self.v[j] * g00 + self.d[j] * g10
                + self.v[j + 1] * g01 + self.d[j + 1] * g11)

    def d2(self, s):
        return self._d2(np.asarray(s, dtype=float))


def _build_table(g, boundaries, anchor, spikes):
    """Tabulate the second antiderivative of g over consecutive pieces.

    boundaries: ascending piece edges covering the domain, anchor among them;
    spikes: per-piece curvature floors for node planning.  Normalized so the
    result and its slope vanish at the anchor exactly (anchor is a node).
    """
    nodes = [np.array([boundaries[0]])]
    for (a, b), spike in zip(zip(boundaries[:-1], boundaries[1:]), spikes):
        n = _plan_piece(g, a, b, spike)
        nodes.append(_chebyshev_nodes(a, b, n)[1:])
    x = np.concatenate(nodes)
    span = x[-1] - x[0]
    tol = 1e-12 * np.diff(x) / span + 1e-17
    i1, i2 = _integrate_intervals(g, x[:-1], x[1:], tol)
    d = np.concatenate(([0.0], np.cumsum(i1)))
    v = np.concatenate(([0.0], np.cumsum(d[:-1] * np.diff(x) + i2)))
    ia = int(np.argmin(np.abs(x - anchor)))
    v = v - v[ia] - d[ia] * (x - x[ia])
    d = d - d[ia]
    return PiecewiseHermiteTable(x, v, d, g)


# ---------------------------------------------------------------------------
# The eps-family
# ---------------------------------------------------------------------------

def _fpp_times_m(potential, mobility):
    """Closed form of F''(s)*m(s), continuous on the closed domain.

    Only defined for the log potential with polynomial-degenerate mobility
    (the only pairing the regularization accepts): the mobility zero cancels
    the potential singularity, leaving theta*(1-s^2)^(k-1) for the phi field
    and (theta/2)*(s(1-s))^(k-1) for the psi field.
    """
    th, k = potential.theta, mobility.k
    if mobility.lo == -1.0:
        return lambda s: th * (1.0 - s * s) ** (k - 1.0)
    return lambda s: 0.5 * th * (s * (1.0 - s)) ** (k - 1.0)


@dataclass
class RegularizedModel:
    """One member of the regularization family, holding the cutoffs, the
    floor mobilities, the tabulated regular potential parts, the singular
    weight c_eps, the assembled potentials F^eps, and the entropies W^eps."""

    epsilon: float
    i_m: float
    delta_phi1: float
    delta_phi2: float
    delta_psi1: float
    delta_psi2: float
    c_eps: float
    m_eps_phi: MobilityModel
    m_eps_psi: MobilityModel
    f_tilde_phi: PiecewiseHermiteTable
    f_tilde_psi: PiecewiseHermiteTable
    f_ln_phi: LogPotential
    f_ln_psi: LogPotential
    f_eps_phi: TabulatedPotential
    f_eps_psi: TabulatedPotential
    w_eps_phi: EntropyModel
    w_eps_psi: EntropyModel
    base: ModelSpec


def _regularize_field(potential, mobility, eps):
    """Cutoffs, floor mobility, Ftilde table and W table for one field."""
    lo, hi = mobility.lo, mobility.hi
    anchor = 0.0 if lo == -1.0 else 0.5
    d1 = _cutoff(mobility, eps, 0)
    d2 = _cutoff(mobility, eps, 1)
    x1, x2 = lo + d1, hi - d2

    def m_eps(s):
        inside = (s >= x1) & (s <= x2)
        return np.where(inside, eps + mobility.m(s), 2.0 * eps)

    mob_eps = MobilityModel("regularized", (lo, hi), k=mobility.k,
                            _eval=m_eps, _floor=2.0 * eps)

    fppm = _fpp_times_m(potential, mobility)
    g_f = lambda s: fppm(s) / m_eps(s)
    g_w = lambda s: 1.0 / m_eps(s)
    # junction kink curvature scale |g| * (|m'| / eps)^2 for node planning
    kink = (mobility.lip / eps) ** 2
    boundaries = [lo, x1, anchor, x2, hi]
    sp_f1 = fppm(x1) / (2 * eps) * kink
    sp_f2 = fppm(x2) / (2 * eps) * kink
    sp_w = kink / (2 * eps)
    f_table = _build_table(g_f, boundaries, anchor, [sp_f1, sp_f1, sp_f2, sp_f2])
    w_table = _build_table(g_w, boundaries, anchor, [sp_w, sp_w, sp_w, sp_w])
    return d1, d2, mob_eps, f_table, w_table, g_f


def build_regularization(spec, epsilon):
    """Construct the regularization family member for one eps in I_M."""
    im = i_m_max(spec)
    if not (0.0 < epsilon <= im):
        raise ValueError(
            f"regularization parameter {epsilon} outside I_M = (0, {im}]")
    for mob in (spec.mobility_phi, spec.mobility_psi):
        if mob.kind != "polynomial-degenerate":
            raise ValueError(
                "regularization needs polynomial-degenerate base mobilities, "
                f"got {mob.kind!r}")
    for pot in (spec.potential_phi, spec.potential_psi):
        if pot.kind != "flory-huggins-log":
            raise ValueError("regularization needs log base potentials")

    dp1, dp2, mob_p, ft_p, wt_p, gf_p = _regularize_field(
        spec.potential_phi, spec.mobility_phi, epsilon)
    dq1, dq2, mob_q, ft_q, wt_q, gf_q = _regularize_field(
        spec.potential_psi, spec.mobility_psi, epsilon)

    fln_p = LogPotential(2.0, PHI_DOMAIN)
    fln_q = LogPotential(2.0, PSI_DOMAIN)
    c_eps = min(
        1.0,
        -dp1 / float(fln_p.d1(-1.0 + dp1)),
        dp2 / float(fln_p.d1(1.0 - dp2)),
        -dq1 / float(fln_q.d1(dq1)),
        dq2 / float(fln_q.d1(1.0 - dq2)),
    )

    def assemble(table, fln, g_reg, domain, anchor):
        return TabulatedPotential(
            value=lambda s: table.value(s) + c_eps * fln.value(s),
            d1=lambda s: table.d1(s) + c_eps * fln.d1(s),
            d2=lambda s: g_reg(s) + c_eps * fln.d2(s),
            domain=domain, anchor=anchor, singular=True)

    f_eps_p = assemble(ft_p, fln_p, gf_p, PHI_DOMAIN, 0.0)
    f_eps_q = assemble(ft_q, fln_q, gf_q, PSI_DOMAIN, 0.5)
    w_eps_p = EntropyModel(mob_p, _value=wt_p.value, _d1=wt_p.d1)
    w_eps_q = EntropyModel(mob_q, _value=wt_q.value, _d1=wt_q.d1)

    return RegularizedModel(
        epsilon=float(epsilon), i_m=im,
        delta_phi1=dp1, delta_phi2=dp2, delta_psi1=dq1, delta_psi2=dq2,
        c_eps=c_eps,
        m_eps_phi=mob_p, m_eps_psi=mob_q,
        f_tilde_phi=ft_p, f_tilde_psi=ft_q,
        f_ln_phi=fln_p, f_ln_psi=fln_q,
        f_eps_phi=f_eps_p, f_eps_psi=f_eps_q,
        w_eps_phi=w_eps_p, w_eps_psi=w_eps_q,
        base=spec)


def regularized_spec(spec, epsilon):
    """Non-degenerate ModelSpec running the eps-regularized system.

    Mobilities become the floor variants, potentials become F^eps, entropies
    become W^eps; density/viscosity laws, coupling, sigma1 and the degeneracy
    bound alpha carry over from the base model.
    """
    reg = build_regularization(spec, epsilon)
    out = replace(spec,
                  potential_phi=reg.f_eps_phi, potential_psi=reg.f_eps_psi,
                  mobility_phi=reg.m_eps_phi, mobility_psi=reg.m_eps_psi)
    out.alpha = spec.alpha
    out._entropy_phi = reg.w_eps_phi
    out._entropy_psi = reg.w_eps_psi
    out.regularization = reg
    return out
