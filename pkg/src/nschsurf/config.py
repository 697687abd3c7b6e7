"""Run configuration: line-oriented text in, validated primitives out.

The format is `key = value` lines under bracketed section headers.  Unknown
sections or keys are hard errors, so a typo cannot silently fall back to a
default.  The [manifest] section is reserved for run provenance written by
the runner and is skipped on load, which lets a manifest file re-load as
the config it echoes.

RunConfig stores only primitives (numbers, strings, a float tuple), so two
configs compare by value; the model, grid, and solver objects are built on
demand and every hypothesis check runs once at load time.
"""

import os
from dataclasses import dataclass, fields

from .grid import Grid2D
from .models import (ModelSpec, MobilityModel, LogPotential, CouplingModel,
                     Sigma1Model, PHI_DOMAIN, PSI_DOMAIN)
from .stepper import SolverConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "dump_config"]


class ConfigError(ValueError):
    """Malformed or contradictory run configuration."""


def _parse_bool(s):
    if s in ("true", "yes", "1"):
        return True
    if s in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_epsilons(s):
    s = s.strip()
    if not s:
        return ()
    return tuple(float(tok) for tok in s.split(","))


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(f"{x:.17g}" for x in v)
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


# section -> key -> (field name, parser, default); field names are unique
# across sections so RunConfig stays flat
_SCHEMA = {
    "grid": {
        "nx": ("nx", int, 64),
        "ny": ("ny", int, 64),
        "lx": ("lx", float, 1.0),
        "ly": ("ly", float, 1.0),
    },
    "model": {
        "rho1": ("rho1", float, 1.0),
        "rho2": ("rho2", float, 1.0),
        "nu1": ("nu1", float, 1.0),
        "nu2": ("nu2", float, 1.0),
        "beta": ("beta", float, 1.0),
        "sigma2": ("sigma2", float, 0.0),
        "c": ("c", float, 0.0),
        "theta_phi": ("theta_phi", float, 0.8),
        "theta_psi": ("theta_psi", float, 0.3),
        "mobility_phi": ("mobility_phi", str, "constant"),
        "mobility_phi_value": ("mobility_phi_value", float, 1.0),
        "mobility_phi_k": ("mobility_phi_k", float, 2.0),
        "mobility_psi": ("mobility_psi", str, "constant"),
        "mobility_psi_value": ("mobility_psi_value", float, 1.0),
        "mobility_psi_k": ("mobility_psi_k", float, 2.0),
        "coupling_gamma1": ("coupling_gamma1", float, 0.0),
        "coupling_gamma2": ("coupling_gamma2", float, 0.0),
        "coupling_theta_phi": ("coupling_theta_phi", float, 0.0),
        "coupling_theta_psi": ("coupling_theta_psi", float, 0.0),
        "sigma1": ("sigma1", str, "constant"),
        "sigma1_value": ("sigma1_value", float, 0.0),
    },
    "solver": {
        "h": ("h", float, 1e-3),
        "picard_tol": ("picard_tol", float, 1e-10),
        "newton_tol": ("newton_tol", float, 1e-12),
        "picard_max": ("picard_max", int, 50),
        "newton_max": ("newton_max", int, 40),
        "energy_audit_tol": ("energy_audit_tol", float, 1e-8),
        "h_backoff": ("h_backoff", float, 0.5),
        "h_min": ("h_min", float, 1e-9),
    },
    "scenario": {
        "kind": ("scenario", str, "spinodal"),
        "phi_mean": ("phi_mean", float, 0.0),
        "psi_mean": ("psi_mean", float, 0.5),
        "amplitude": ("amplitude", float, 0.05),
        "radius": ("radius", float, 0.25),
        # negative center coordinates mean the domain midpoint
        "center_x": ("center_x", float, -1.0),
        "center_y": ("center_y", float, -1.0),
        "psi_base": ("psi_base", float, 0.1),
        "psi_boost": ("psi_boost", float, 0.5),
        "phi_file": ("phi_file", str, ""),
        "psi_file": ("psi_file", str, ""),
        "ux_file": ("ux_file", str, ""),
        "uy_file": ("uy_file", str, ""),
    },
    "run": {
        "seed": ("seed", int, 0),
        "t_final": ("t_final", float, 1e-2),
        "mode": ("mode", str, "nondegenerate"),
        "epsilons": ("epsilons", _parse_epsilons, ()),
        "threads": ("threads", int, 1),
    },
    "output": {
        "directory": ("out_dir", str, "out"),
        "snapshot_stride": ("snapshot_stride", int, 10),
        "ledger": ("ledger_name", str, "ledger.csv"),
    },
}

_SCENARIOS = ("uniform", "spinodal", "droplet", "file")
_MODES = ("nondegenerate", "continuation")


def _schema_defaults():
    return {name: default
            for sec in _SCHEMA.values()
            for name, _, default in sec.values()}


@dataclass
class RunConfig:
    nx: int
    ny: int
    lx: float
    ly: float
    rho1: float
    rho2: float
    nu1: float
    nu2: float
    beta: float
    sigma2: float
    c: float
    theta_phi: float
    theta_psi: float
    mobility_phi: str
    mobility_phi_value: float
    mobility_phi_k: float
    mobility_psi: str
    mobility_psi_value: float
    mobility_psi_k: float
    coupling_gamma1: float
    coupling_gamma2: float
    coupling_theta_phi: float
    coupling_theta_psi: float
    sigma1: str
    sigma1_value: float
    h: float
    picard_tol: float
    newton_tol: float
    picard_max: int
    newton_max: int
    energy_audit_tol: float
    h_backoff: float
    h_min: float
    scenario: str
    phi_mean: float
    psi_mean: float
    amplitude: float
    radius: float
    center_x: float
    center_y: float
    psi_base: float
    psi_boost: float
    phi_file: str
    psi_file: str
    ux_file: str
    uy_file: str
    seed: int
    t_final: float
    mode: str
    epsilons: tuple
    threads: int
    out_dir: str
    snapshot_stride: int
    ledger_name: str

    def make_grid(self):
        return Grid2D(self.nx, self.ny, self.lx, self.ly)

    def make_spec(self):
        mob_phi = _make_mobility(self.mobility_phi, PHI_DOMAIN,
                                 self.mobility_phi_value, self.mobility_phi_k)
        mob_psi = _make_mobility(self.mobility_psi, PSI_DOMAIN,
                                 self.mobility_psi_value, self.mobility_psi_k)
        if self.sigma1 == "mobility-scaled":
            sig1 = Sigma1Model("mobility-scaled", self.sigma1_value,
                               mobility_phi=mob_phi)
        else:
            sig1 = Sigma1Model(self.sigma1, self.sigma1_value)
        return ModelSpec(
            rho1=self.rho1, rho2=self.rho2, nu1=self.nu1, nu2=self.nu2,
            beta=self.beta, sigma2=self.sigma2, c=self.c,
            potential_phi=LogPotential(self.theta_phi, PHI_DOMAIN),
            potential_psi=LogPotential(self.theta_psi, PSI_DOMAIN),
            mobility_phi=mob_phi, mobility_psi=mob_psi,
            coupling=CouplingModel(self.coupling_gamma1, self.coupling_gamma2,
                                   self.coupling_theta_phi,
                                   self.coupling_theta_psi),
            sigma1=sig1)

    def make_solver(self):
        return SolverConfig(
            h=self.h, picard_tol=self.picard_tol, newton_tol=self.newton_tol,
            picard_max=self.picard_max, newton_max=self.newton_max,
            energy_audit_tol=self.energy_audit_tol,
            h_backoff=self.h_backoff, h_min=self.h_min)


def _make_mobility(kind, domain, value, k):
    if kind == "constant":
        return MobilityModel("constant", domain, value=value)
    if kind == "polynomial-degenerate":
        return MobilityModel("polynomial-degenerate", domain, k=k)
    raise ConfigError(f"unknown mobility kind {kind!r} "
                      f"(expected constant or polynomial-degenerate)")


def _parse_lines(text):
    """(section, key) -> raw value string, with line-numbered errors."""
    out = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section != "manifest" and section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section "
                                  f"[{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, "
                              f"got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if section == "manifest":
            continue                      # provenance echo, not settings
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in "
                              f"[{section}]")
        out[(section, key)] = (value, lineno)
    return out


def load_config(source, overrides=()):
    """Parse a config from a path or literal text and validate everything.

    ``overrides`` are `section.key=value` strings applied after the file,
    in order.  Validation builds the grid, model, and solver once so any
    hypothesis violation surfaces here with its name.
    """
    if isinstance(source, os.PathLike) or (
            isinstance(source, str) and "\n" not in source
            and os.path.exists(source)):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source

    raw = _parse_lines(text)
    values = _schema_defaults()
    for (section, key), (value, lineno) in raw.items():
        name, parser, _ = _SCHEMA[section][key]
        try:
            values[name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for "
                              f"{section}.{key}: {exc}") from exc

    for spec_str in overrides:
        if "=" not in spec_str or "." not in spec_str.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, "
                              f"got {spec_str!r}")
        dotted, _, value = spec_str.partition("=")
        section, _, key = dotted.strip().partition(".")
        value = value.strip()
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"override names unknown key "
                              f"{section}.{key}")
        name, parser, _ = _SCHEMA[section][key]
        try:
            values[name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad override value for {section}.{key}: "
                              f"{exc}") from exc

    config = RunConfig(**values)
    _validate(config)
    return config


def _validate(config):
    if config.scenario not in _SCENARIOS:
        raise ConfigError(f"unknown scenario {config.scenario!r} "
                          f"(expected one of {', '.join(_SCENARIOS)})")
    if config.mode not in _MODES:
        raise ConfigError(f"unknown mode {config.mode!r} "
                          f"(expected one of {', '.join(_MODES)})")
    if config.t_final <= 0:
        raise ConfigError("run.t_final must be positive")
    if config.seed < 0:
        raise ConfigError("run.seed must be a nonnegative integer")
    if config.threads < 1:
        raise ConfigError("run.threads must be >= 1")
    if config.snapshot_stride < 0:
        raise ConfigError("output.snapshot_stride must be >= 0 "
                          "(0 disables snapshots)")
    if any(e <= 0 for e in config.epsilons):
        raise ConfigError("run.epsilons must all be positive")
    if config.scenario == "droplet":
        if not (0 < config.psi_base and
                config.psi_base + max(config.psi_boost, 0.0) < 1):
            raise ConfigError("droplet surfactant profile must stay inside "
                              "(0, 1): need 0 < psi_base and "
                              "psi_base + psi_boost < 1")
        if config.psi_boost < 0:
            raise ConfigError("droplet psi_boost must be >= 0")
        if config.radius <= 0:
            raise ConfigError("droplet radius must be positive")
    if config.scenario == "file" and not (config.phi_file and
                                          config.psi_file):
        raise ConfigError("file scenario needs phi_file and psi_file")
    # hypothesis validation happens inside the model constructors
    config.make_grid()
    config.make_spec()
    config.make_solver()


def dump_config(config):
    """Canonical text form; load_config(dump_config(c)) == c."""
    lines = []
    by_name = {name: (section, key)
               for section, keys in _SCHEMA.items()
               for key, (name, _, _) in keys.items()}
    for section in _SCHEMA:
        lines.append(f"[{section}]")
        for key, (name, _, _) in _SCHEMA[section].items():
            lines.append(f"{key} = {_fmt(getattr(config, name))}")
        lines.append("")
    assert set(by_name) == {f.name for f in fields(RunConfig)}
    return "\n".join(lines)
