"""
Material models for a two-phase flow / soluble-surfactant phase-field system.

Two order parameters live on open intervals:

    phi in (-1, 1)   fluid phase fraction
    psi in (0, 1)    surfactant fraction

Each carries a singular convex bulk potential F (logarithmic, Flory-Huggins
type), a mobility m >= 0, and an entropy function W with W'' = 1/m.  A smooth
coupling energy G(phi, psi) holds the adsorption terms plus the concave
quadratic parts of the classical double wells (so F keeps only the convex
logarithms and stays anchored with F(anchor) = F'(anchor) = 0):

    G(phi, psi) = (gamma1/2) psi phi^2  -  (gamma2/4) psi (1 - phi^2)^2
                + (tilde_theta_phi/2) (1 - phi^2)
                + (tilde_theta_psi/2) psi (1 - psi)

Density and viscosity interpolate affinely between the pure phases:

    rho(s) = (rho1 - rho2)/2 * s + (rho1 + rho2)/2,   nu(s) likewise,

with s clamped to [-1, 1] so both stay bounded for out-of-range arguments.

Structural hypotheses are validated at construction and named in error
messages:

    H0   pure-phase densities positive (affine rho > 0 on [-1, 1])
    H1   F convex (F'' >= theta > 0), singular derivative at endpoints,
         anchored; G twice continuously differentiable and bounded on the box
    H2   viscosity bounded with positive infimum
    H3   non-degenerate mobilities bounded above and below by positive
         constants; sigma1 >= 0 bounded
    H3*  degenerate mobilities vanish only at the pure phases, F''*m <= alpha,
         sigma1*|W_phi'| <= alpha

The secant (difference-quotient) linearizations of G used by the time
discretization live here too, because their exact telescoping property is a
model-level identity:

    secant_phi(a, b, c) * (a - b) + secant_psi(b, c2, c2_old) * ...
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.special import xlogy, hyp2f1

__all__ = [
    "SingularArgumentError",
    "HypothesisError",
    "LogPotential",
    "TabulatedPotential",
    "MobilityModel",
    "EntropyModel",
    "CouplingModel",
    "Sigma1Model",
    "ModelSpec",
    "PHI_DOMAIN",
    "PSI_DOMAIN",
]

PHI_DOMAIN = (-1.0, 1.0)
PSI_DOMAIN = (0.0, 1.0)

# Relative threshold at which secant quotients switch to the analytic partial.
SECANT_SWITCH = 1e-8

# Sample count for construction-time hypothesis checks and sup estimates.
_SAMPLES = 4096


class SingularArgumentError(ValueError):
    """Raised when a singular potential derivative is evaluated at or
    outside an interval endpoint."""


class HypothesisError(ValueError):
    """Raised when a model violates one of the structural hypotheses
    H0..H3*; the message names the hypothesis."""


def _as_array(s):
    return np.asarray(s, dtype=float)


# ---------------------------------------------------------------------------
# Convex singular potentials
# ---------------------------------------------------------------------------

class LogPotential:
    """Flory-Huggins logarithmic potential on (-1,1) or (0,1).

    On (-1, 1), anchored at 0:

        F(s) = (theta/2) [ (1+s) ln(1+s) + (1-s) ln(1-s) ]

    On (0, 1), anchored at 1/2 (the +ln2 constant enforces F(1/2)=0):

        F(s) = (theta/2) [ s ln s + (1-s) ln(1-s) + ln 2 ]

    ``value`` extends continuously to the closed interval (x*ln(x) -> 0);
    ``d1``/``d2`` are singular and reject endpoint arguments.
    """

    kind = "flory-huggins-log"

    def __init__(self, theta, domain=PHI_DOMAIN):
        if theta <= 0:
            raise HypothesisError(f"H1 violated: potential theta must be > 0, got {theta}")
        if tuple(domain) not in (PHI_DOMAIN, PSI_DOMAIN):
            raise ValueError(f"unsupported potential domain {domain}")
        self.theta = float(theta)
        self.lo, self.hi = float(domain[0]), float(domain[1])
        self.anchor = 0.0 if self.lo == -1.0 else 0.5
        # strict convexity bound inf F'': theta at 0 on (-1,1), 2*theta at 1/2 on (0,1)
        self.convexity = self.theta if self.lo == -1.0 else 2.0 * self.theta

    def _check_open(self, s):
        s = _as_array(s)
        if np.any(s <= self.lo) or np.any(s >= self.hi):
            raise SingularArgumentError(
                f"potential derivative needs arguments strictly inside "
                f"({self.lo}, {self.hi}); got range [{s.min()}, {s.max()}]")
        return s

    def _check_closed(self, s):
        s = _as_array(s)
        if np.any(s < self.lo) or np.any(s > self.hi):
            raise SingularArgumentError(
                f"potential value needs arguments in [{self.lo}, {self.hi}]; "
                f"got range [{s.min()}, {s.max()}]")
        return s

    def value(self, s):
        s = self._check_closed(s)
        if self.lo == -1.0:
            return 0.5 * self.theta * (xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s))
        return 0.5 * self.theta * (xlogy(s, s) + xlogy(1.0 - s, 1.0 - s) + np.log(2.0))

    def d1(self, s):
        s = self._check_open(s)
        if self.lo == -1.0:
            return 0.5 * self.theta * (np.log1p(s) - np.log1p(-s))
        return 0.5 * self.theta * (np.log(s) - np.log1p(-s))

    def d2(self, s):
        s = self._check_open(s)
        if self.lo == -1.0:
            return self.theta / ((1.0 + s) * (1.0 - s))
        return 0.5 * self.theta * (1.0 / s + 1.0 / (1.0 - s))


class TabulatedPotential:
    """Potential backed by callables (used for the regularized F^eps family).

    Same interface as LogPotential; the convexity lower bound is sampled at
    construction.  ``singular`` records whether d1 blows up at the endpoints
    (true whenever a log part is present, i.e. c_eps > 0).
    """

    kind = "custom-tabulated"

    def __init__(self, value, d1, d2, domain, anchor, singular=True):
        self._value, self._d1, self._d2 = value, d1, d2
        self.lo, self.hi = float(domain[0]), float(domain[1])
        self.anchor = float(anchor)
        self.singular = bool(singular)
        width = self.hi - self.lo
        probe = np.linspace(self.lo + 1e-9 * width, self.hi - 1e-9 * width, _SAMPLES)
        d2v = self._d2(probe)
        self.convexity = float(np.min(d2v))
        if self.convexity <= 0:
            raise HypothesisError(
                f"H1 violated: tabulated potential not strictly convex "
                f"(sampled min F'' = {self.convexity})")
        v0 = float(self._value(np.array([self.anchor]))[0])
        g0 = float(self._d1(np.array([self.anchor]))[0])
        if abs(v0) > 1e-9 or abs(g0) > 1e-9:
            raise HypothesisError(
                f"H1 violated: tabulated potential not anchored at {self.anchor} "
                f"(F={v0:.2e}, F'={g0:.2e})")

    def _check_open(self, s):
        s = _as_array(s)
        if self.singular and (np.any(s <= self.lo) or np.any(s >= self.hi)):
            raise SingularArgumentError(
                f"potential derivative needs arguments strictly inside "
                f"({self.lo}, {self.hi})")
        return s

    def value(self, s):
        s = _as_array(s)
        if np.any(s < self.lo) or np.any(s > self.hi):
            raise SingularArgumentError(
                f"potential value needs arguments in [{self.lo}, {self.hi}]")
        return self._value(s)

    def d1(self, s):
        return self._d1(self._check_open(s))

    def d2(self, s):
        return self._d2(self._check_open(s))


# ---------------------------------------------------------------------------
# Mobilities
# ---------------------------------------------------------------------------

class MobilityModel:
    """Mobility m(s) >= 0 on the closed field interval.

    kinds:
      constant                m(s) = value (non-degenerate, floor = value)
      polynomial-degenerate   m(s) = (1-s^2)^k on [-1,1], (s(1-s))^k on [0,1]
      regularized             piecewise floor-2eps family built by
                              `regularize.build_regularization`

    Degenerate mobilities vanish exactly at the pure phases and nowhere else.
    ``lip`` is the sampled sup of |m'| (enters the pure-phase pinch bounds
    m(s) <= lip*(1-s^2) resp. m(s) <= 2*lip*s(1-s)).
    """

    def __init__(self, kind, domain=PHI_DOMAIN, value=1.0, k=1.0,
                 _eval=None, _floor=None):
        self.kind = kind
        self.lo, self.hi = float(domain[0]), float(domain[1])
        self.k = float(k)
        self.value = float(value)
        self._eval = _eval
        if kind == "constant":
            if value <= 0:
                raise HypothesisError(
                    f"H3 violated: constant mobility must be > 0, got {value}")
            self.degenerate = False
            self.floor = float(value)
        elif kind == "polynomial-degenerate":
            if self.k < 1.0:
                raise HypothesisError(
                    f"H3* violated: degeneracy exponent k must be >= 1, got {k}")
            self.degenerate = True
            self.floor = 0.0
        elif kind == "regularized":
            if _eval is None or _floor is None:
                raise ValueError("regularized mobility needs _eval and _floor")
            self.degenerate = False
            self.floor = float(_floor)
        else:
            raise ValueError(f"unknown mobility kind {kind!r}")
        probe = np.linspace(self.lo, self.hi, _SAMPLES)
        mv = self.m(probe)
        self.cap = float(mv.max())
        self.lip = float(np.max(np.abs(np.gradient(mv, probe))))

    def m(self, s):
        s = np.clip(_as_array(s), self.lo, self.hi)
        if self.kind == "constant":
            return np.full_like(s, self.value)
        if self.kind == "regularized":
            return self._eval(s)
        if self.lo == -1.0:
            return (1.0 - s * s) ** self.k
        return (s * (1.0 - s)) ** self.k


# ---------------------------------------------------------------------------
# Entropy functions W with W'' = 1/m
# ---------------------------------------------------------------------------

class EntropyModel:
    """Entropy W for a mobility model: W'' = 1/m, W >= 0, anchored so
    W(anchor) = W'(anchor) = 0 (anchor 0 on (-1,1), 1/2 on (0,1)).

    Closed forms:
      constant m          W = (s-a)^2 / (2m)
      (1-s^2)^k           W'(s) = s * 2F1(1/2, k; 3/2; s^2)
                          W(s)  = s W'(s) - ((1-s^2)^(1-k) - 1)/(2(k-1)),
                          and the k=1 limit W = ((1+s)ln(1+s)+(1-s)ln(1-s))/2
      (s(1-s))^k          W'(s) = 4^k (s-1/2) 2F1(1/2, k; 3/2; (2s-1)^2)
                          W(s)  = (s-1/2) W'(s)
                                  - ((s(1-s))^(1-k) - 4^(k-1))/(2(k-1)),
                          k=1 limit W = s ln s + (1-s)ln(1-s) + ln 2
      regularized         piecewise quadratic tails + Hermite table middle
                          (built in `regularize`, passed via callables)

    Degenerate W diverges at the endpoints; d1/value reject arguments outside
    the open interval when divergent there.
    """

    def __init__(self, mobility, _value=None, _d1=None):
        self.mobility = mobility
        self.lo, self.hi = mobility.lo, mobility.hi
        self.anchor = 0.0 if self.lo == -1.0 else 0.5
        self._value, self._d1 = _value, _d1
        if mobility.kind == "regularized" and (_value is None or _d1 is None):
            raise ValueError("regularized entropy needs table callables")

    def _check(self, s):
        s = _as_array(s)
        if self.mobility.degenerate and (np.any(s <= self.lo) or np.any(s >= self.hi)):
            raise SingularArgumentError(
                "degenerate entropy evaluated at or outside a pure phase")
        if np.any(s < self.lo) or np.any(s > self.hi):
            raise SingularArgumentError(
                f"entropy argument outside [{self.lo}, {self.hi}]")
        return s

    def value(self, s):
        s = self._check(s)
        mob = self.mobility
        if mob.kind == "regularized":
            return self._value(s)
        if mob.kind == "constant":
            return (s - self.anchor) ** 2 / (2.0 * mob.value)
        k = mob.k
        if self.lo == -1.0:
            if k == 1.0:
                return 0.5 * (xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s))
            w1 = self.d1(s)
            return s * w1 - ((1.0 - s * s) ** (1.0 - k) - 1.0) / (2.0 * (k - 1.0))
        if k == 1.0:
            return xlogy(s, s) + xlogy(1.0 - s, 1.0 - s) + np.log(2.0)
        w1 = self.d1(s)
        t = s * (1.0 - s)
        return (s - 0.5) * w1 - (t ** (1.0 - k) - 4.0 ** (k - 1.0)) / (2.0 * (k - 1.0))

    def d1(self, s):
        s = self._check(s)
        mob = self.mobility
        if mob.kind == "regularized":
            return self._d1(s)
        if mob.kind == "constant":
            return (s - self.anchor) / mob.value
        k = mob.k
        if self.lo == -1.0:
            if k == 1.0:
                return 0.5 * (np.log1p(s) - np.log1p(-s))
            return s * hyp2f1(0.5, k, 1.5, s * s)
        if k == 1.0:
            return np.log(s) - np.log1p(-s)
        z = 2.0 * s - 1.0
        return 4.0 ** k * (s - 0.5) * hyp2f1(0.5, k, 1.5, z * z)

    def d2(self, s):
        s = self._check(s)
        return 1.0 / self.mobility.m(s)


# ---------------------------------------------------------------------------
# Coupling energy G and its secant linearizations
# ---------------------------------------------------------------------------

class CouplingModel:
    """Smooth coupling energy G(phi, psi) on the box [-1,1] x [0,1].

    Arguments are clamped to the box before evaluation (constant extension
    outside; scheme solutions never leave the box, so the extension is only a
    robustness device).  All second partials are available for Jacobians and
    the weak-flux residual check.
    """

    def __init__(self, gamma1=0.0, gamma2=0.0, tilde_theta_phi=0.0, tilde_theta_psi=0.0):
        if gamma1 < 0 or gamma2 < 0:
            raise HypothesisError(
                f"H1 violated: adsorption coefficients must be >= 0, "
                f"got gamma1={gamma1}, gamma2={gamma2}")
        if tilde_theta_phi < 0 or tilde_theta_psi < 0:
            raise HypothesisError(
                f"H1 violated: concave quadratic weights must be >= 0, "
                f"got {tilde_theta_phi}, {tilde_theta_psi}")
        self.gamma1 = float(gamma1)
        self.gamma2 = float(gamma2)
        self.tilde_theta_phi = float(tilde_theta_phi)
        self.tilde_theta_psi = float(tilde_theta_psi)
        # sampled sup norms of G and its first/second partials on the box (H1 record)
        pp = np.linspace(-1.0, 1.0, 65)
        ss = np.linspace(0.0, 1.0, 65)
        P, S = np.meshgrid(pp, ss, indexing="ij")
        self.sup_value = float(np.max(np.abs(self.value(P, S))))
        self.sup_grad = max(float(np.max(np.abs(self.dphi(P, S)))),
                            float(np.max(np.abs(self.dpsi(P, S)))))
        self.sup_hess = max(float(np.max(np.abs(self.dphiphi(P, S)))),
                            float(np.max(np.abs(self.dphipsi(P, S)))),
                            float(np.max(np.abs(self.dpsipsi(P, S)))))

    @staticmethod
    def _clamp(phi, psi):
        return (np.clip(_as_array(phi), -1.0, 1.0),
                np.clip(_as_array(psi), 0.0, 1.0))

    def value(self, phi, psi):
        p, s = self._clamp(phi, psi)
        w = 1.0 - p * p
        return (0.5 * self.gamma1 * s * p * p
                - 0.25 * self.gamma2 * s * w * w
                + 0.5 * self.tilde_theta_phi * w
                + 0.5 * self.tilde_theta_psi * s * (1.0 - s))

    def dphi(self, phi, psi):
        p, s = self._clamp(phi, psi)
        return (self.gamma1 * s * p
                + self.gamma2 * s * p * (1.0 - p * p)
                - self.tilde_theta_phi * p)

    def dpsi(self, phi, psi):
        p, s = self._clamp(phi, psi)
        w = 1.0 - p * p
        return (0.5 * self.gamma1 * p * p
                - 0.25 * self.gamma2 * w * w
                + 0.5 * self.tilde_theta_psi * (1.0 - 2.0 * s))

    def dphiphi(self, phi, psi):
        p, s = self._clamp(phi, psi)
        return (self.gamma1 * s
                + self.gamma2 * s * (1.0 - 3.0 * p * p)
                - self.tilde_theta_phi) * np.ones_like(p)

    def dphipsi(self, phi, psi):
        p, _ = self._clamp(phi, psi)
        return self.gamma1 * p + self.gamma2 * p * (1.0 - p * p)

    def dpsipsi(self, phi, psi):
        p, _ = self._clamp(phi, psi)
        return -self.tilde_theta_psi * np.ones_like(p)

    # -- secant linearizations ---------------------------------------------

    def secant_phi(self, a, b, c):
        """Difference quotient (G(a,c) - G(b,c))/(a-b), switching to the
        analytic partial dG/dphi(a,c) when |a-b| <= 1e-8 max(1,|a|,|b|)."""
        a, b = _as_array(a), _as_array(b)
        c = _as_array(c)
        near = np.abs(a - b) <= SECANT_SWITCH * np.maximum(
            1.0, np.maximum(np.abs(a), np.abs(b)))
        den = np.where(near, 1.0, a - b)
        quot = (self.value(a, c) - self.value(b, c)) / den
        return np.where(near, self.dphi(a, c), quot)

    def secant_psi(self, c, a, b):
        """Difference quotient (G(c,a) - G(c,b))/(a-b), switching to the
        analytic partial dG/dpsi(c,a) near coincidence."""
        a, b = _as_array(a), _as_array(b)
        c = _as_array(c)
        near = np.abs(a - b) <= SECANT_SWITCH * np.maximum(
            1.0, np.maximum(np.abs(a), np.abs(b)))
        den = np.where(near, 1.0, a - b)
        quot = (self.value(c, a) - self.value(c, b)) / den
        return np.where(near, self.dpsi(c, a), quot)

    def dsecant_phi_da(self, a, b, c):
        """Derivative of secant_phi with respect to its first argument
        (branch-consistent; used by the Newton chord Jacobian)."""
        a, b = _as_array(a), _as_array(b)
        c = _as_array(c)
        near = np.abs(a - b) <= SECANT_SWITCH * np.maximum(
            1.0, np.maximum(np.abs(a), np.abs(b)))
        den = np.where(near, 1.0, a - b)
        quot = (self.dphi(a, c) * (a - b) - (self.value(a, c) - self.value(b, c))) / den ** 2
        return np.where(near, self.dphiphi(a, c), quot)

    def dsecant_psi_da(self, c, a, b):
        a, b = _as_array(a), _as_array(b)
        c = _as_array(c)
        near = np.abs(a - b) <= SECANT_SWITCH * np.maximum(
            1.0, np.maximum(np.abs(a), np.abs(b)))
        den = np.where(near, 1.0, a - b)
        quot = (self.dpsi(c, a) * (a - b) - (self.value(c, a) - self.value(c, b))) / den ** 2
        return np.where(near, self.dpsipsi(c, a), quot)


# ---------------------------------------------------------------------------
# Mass-exchange (Oono) coefficient
# ---------------------------------------------------------------------------

class Sigma1Model:
    """Oono relaxation coefficient sigma1(s) >= 0 on [-1, 1].

    kinds:
      constant           sigma1(s) = value
      mobility-scaled    sigma1(s) = value * m_phi(s)  (vanishes at the pure
                         phases; the H3*-compatible choice for degenerate m)
    """

    def __init__(self, kind="constant", value=0.0, mobility_phi=None):
        if value < 0:
            raise HypothesisError(
                f"H3 violated: sigma1 must be >= 0, got {value}")
        if kind not in ("constant", "mobility-scaled"):
            raise ValueError(f"unknown sigma1 kind {kind!r}")
        if kind == "mobility-scaled" and mobility_phi is None:
            raise ValueError("mobility-scaled sigma1 needs the phi mobility")
        self.kind = kind
        self.value = float(value)
        self._mob = mobility_phi
        if kind == "constant":
            self.max = self.value
        else:
            probe = np.linspace(-1.0, 1.0, _SAMPLES)
            self.max = float(np.max(self.eval(probe)))

    def eval(self, s):
        s = np.clip(_as_array(s), -1.0, 1.0)
        if self.kind == "constant":
            return np.full_like(s, self.value)
        return self.value * self._mob.m(s)


# ---------------------------------------------------------------------------
# Full model bundle
# ---------------------------------------------------------------------------

@dataclass
class ModelSpec:
    """All material data for one simulation.

    Validation happens in __post_init__ and raises HypothesisError naming
    the violated hypothesis.  ``alpha`` is the degeneracy bound
    sup(F'' * m) * 1.05 (5% headroom, 4096-point sampling), computed for
    degenerate mobilities and for regularized families.
    """

    rho1: float = 1.0
    rho2: float = 1.0
    nu1: float = 1.0
    nu2: float = 1.0
    beta: float = 1.0
    sigma2: float = 0.0
    c: float = 0.0
    potential_phi: LogPotential = None
    potential_psi: LogPotential = None
    mobility_phi: MobilityModel = None
    mobility_psi: MobilityModel = None
    coupling: CouplingModel = None
    sigma1: Sigma1Model = None
    alpha: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.potential_phi is None:
            self.potential_phi = LogPotential(1.0, PHI_DOMAIN)
        if self.potential_psi is None:
            self.potential_psi = LogPotential(1.0, PSI_DOMAIN)
        if self.mobility_phi is None:
            self.mobility_phi = MobilityModel("constant", PHI_DOMAIN, value=1.0)
        if self.mobility_psi is None:
            self.mobility_psi = MobilityModel("constant", PSI_DOMAIN, value=1.0)
        if self.coupling is None:
            self.coupling = CouplingModel()
        if self.sigma1 is None:
            self.sigma1 = Sigma1Model("constant", 0.0)
        self.validate()

    # affine interpolations -------------------------------------------------

    @property
    def gamma(self):
        """Relative-flux weight (rho1 - rho2)/2."""
        return 0.5 * (self.rho1 - self.rho2)

    @property
    def rho_min(self):
        return min(self.rho1, self.rho2)

    def rho(self, s):
        s = np.clip(_as_array(s), -1.0, 1.0)
        return self.gamma * s + 0.5 * (self.rho1 + self.rho2)

    def nu(self, s):
        s = np.clip(_as_array(s), -1.0, 1.0)
        return 0.5 * (self.nu1 - self.nu2) * s + 0.5 * (self.nu1 + self.nu2)

    # entropies (built lazily, cached) --------------------------------------

    @property
    def entropy_phi(self):
        if not hasattr(self, "_entropy_phi"):
            self._entropy_phi = EntropyModel(self.mobility_phi)
        return self._entropy_phi

    @property
    def entropy_psi(self):
        if not hasattr(self, "_entropy_psi"):
            self._entropy_psi = EntropyModel(self.mobility_psi)
        return self._entropy_psi

    # validation -------------------------------------------------------------

    def validate(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise HypothesisError(
                f"H0 violated: pure-phase densities must be > 0, "
                f"got rho1={self.rho1}, rho2={self.rho2}")
        if self.nu1 <= 0 or self.nu2 <= 0:
            raise HypothesisError(
                f"H2 violated: pure-phase viscosities must be > 0, "
                f"got nu1={self.nu1}, nu2={self.nu2}")
        if self.beta <= 0:
            raise HypothesisError(
                f"H1 violated: psi gradient-energy weight beta must be > 0, "
                f"got {self.beta}")
        if self.sigma2 < 0:
            raise HypothesisError(
                f"H1 violated: nonlocal weight sigma2 must be >= 0, got {self.sigma2}")
        if not (-1.0 < self.c < 1.0):
            raise HypothesisError(
                f"H1 violated: Oono target mean c must lie in (-1, 1), got {self.c}")
        if tuple((self.potential_phi.lo, self.potential_phi.hi)) != PHI_DOMAIN:
            raise HypothesisError("H1 violated: phi potential domain must be (-1, 1)")
        if tuple((self.potential_psi.lo, self.potential_psi.hi)) != PSI_DOMAIN:
            raise HypothesisError("H1 violated: psi potential domain must be (0, 1)")
        if (self.mobility_phi.lo, self.mobility_phi.hi) != PHI_DOMAIN:
            raise HypothesisError("H3 violated: phi mobility domain must be [-1, 1]")
        if (self.mobility_psi.lo, self.mobility_psi.hi) != PSI_DOMAIN:
            raise HypothesisError("H3 violated: psi mobility domain must be [0, 1]")

        degenerate = self.mobility_phi.degenerate or self.mobility_psi.degenerate
        if self.mobility_phi.degenerate != self.mobility_psi.degenerate:
            raise HypothesisError(
                "H3* violated: mobilities must be both degenerate or both "
                "non-degenerate")
        self.degenerate = degenerate
        # alpha bounds F''*m; finite only when the mobility pinches the
        # potential singularity (degenerate case), unconstrained otherwise
        self.alpha = self._compute_alpha() if degenerate else float("inf")
        if degenerate:
            # sigma1 * |W_phi'| must stay bounded by alpha (H3*); W' always
            # diverges at the pure phases here, so a constant sigma1 > 0 can
            # never satisfy the bound no matter how small
            if self.sigma1.kind == "constant" and self.sigma1.value > 0:
                raise HypothesisError(
                    "H3* violated: constant sigma1 > 0 with degenerate "
                    "mobility (sigma1*|W_phi'| unbounded at the pure phases); "
                    "use the mobility-scaled sigma1 kind")
            w = self.entropy_phi
            probe = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, _SAMPLES)
            prod = self.sigma1.eval(probe) * np.abs(w.d1(probe))
            mx = float(np.nanmax(prod))
            if not np.isfinite(mx) or mx > self.alpha:
                raise HypothesisError(
                    f"H3* violated: sup sigma1*|W_phi'| = {mx:.3e} exceeds "
                    f"alpha = {self.alpha:.3e} (sigma1 must vanish fast enough "
                    f"at the pure phases for degenerate mobilities)")

    def _compute_alpha(self):
        """alpha = 1.05 * max over both fields of sampled sup F''(s) m(s)."""
        worst = 0.0
        for pot, mob in ((self.potential_phi, self.mobility_phi),
                         (self.potential_psi, self.mobility_psi)):
            width = mob.hi - mob.lo
            probe = np.linspace(mob.lo + 1e-12 * width, mob.hi - 1e-12 * width, _SAMPLES)
            prod = pot.d2(probe) * mob.m(probe)
            mx = float(np.max(prod))
            if not np.isfinite(mx):
                raise HypothesisError(
                    f"H3* violated: F''*m unbounded for {mob.kind} mobility")
            worst = max(worst, mx)
        return 1.05 * worst
