"""Initial-state presets.

Four families: constant fields, seeded spinodal noise around a mean, a
tanh-profile droplet with surfactant piled onto the interface, and raw
snapshot files (whose velocity is projected onto the solenoidal space).
The velocity starts at rest except for file input.  All presets hand back
a validated state at t = 0 whose chemical potentials are the instantaneous
ones of the initial fields.
"""

import numpy as np

from .grid import ScalarField, StaggeredVelocity
from .io import read_snapshot, SnapshotError
from .operators import leray_project
from .stepper import SimState, chemical_potential

__all__ = ["make_scenario", "ScenarioError"]


class ScenarioError(ValueError):
    """Initial data that cannot form a valid starting state."""


def make_scenario(config, grid=None, spec=None):
    grid = grid if grid is not None else config.make_grid()
    spec = spec if spec is not None else config.make_spec()
    builder = {
        "uniform": _uniform,
        "spinodal": _spinodal,
        "droplet": _droplet,
        "file": _file,
    }[config.scenario]
    phi, psi, u = builder(config, grid)

    mp, ms = float(np.mean(phi)), float(np.mean(psi))
    if not (-1.0 < mp < 1.0 and 0.0 < ms < 1.0):
        raise ScenarioError(f"initial means ({mp:.4g}, {ms:.4g}) must lie "
                            f"strictly inside (-1,1) x (0,1)")
    mu_phi, mu_psi = chemical_potential(grid, spec, phi, psi)
    state = SimState(0.0, u, ScalarField(grid, phi), ScalarField(grid, psi),
                     ScalarField(grid, mu_phi), ScalarField(grid, mu_psi))
    state.validate(spec)
    return state


def _uniform(config, grid):
    shape = (grid.nx, grid.ny)
    return (np.full(shape, config.phi_mean), np.full(shape, config.psi_mean),
            StaggeredVelocity(grid))


def _spinodal(config, grid):
    rng = np.random.default_rng(config.seed)
    noise = rng.uniform(-1.0, 1.0, (grid.nx, grid.ny))
    phi = config.phi_mean + config.amplitude * noise
    # keep a 1% margin of the half-width so extreme configs stay interior
    phi = np.clip(phi, -0.98, 0.98)
    psi = np.full((grid.nx, grid.ny), config.psi_mean)
    return phi, psi, StaggeredVelocity(grid)


def _droplet(config, grid):
    cx = config.center_x if config.center_x >= 0 else 0.5 * grid.lx
    cy = config.center_y if config.center_y >= 0 else 0.5 * grid.ly
    x, y = grid.cell_centers()
    dist = np.hypot(x - cx, y - cy)
    width = 3.0 * grid.dx
    # capped argument keeps the profile strictly off the pure phases
    # (tanh saturates to exactly 1.0 in floats beyond ~19)
    phi = np.tanh(np.clip((config.radius - dist) / width, -10.0, 10.0))
    psi = config.psi_base + config.psi_boost * (1.0 - phi ** 2)
    return phi, psi, StaggeredVelocity(grid)


def _file(config, grid):
    phi = _load_cell_field(config.phi_file, grid, "phi")
    psi = _load_cell_field(config.psi_file, grid, "psi")
    u = StaggeredVelocity(grid)
    if config.ux_file or config.uy_file:
        if not (config.ux_file and config.uy_file):
            raise ScenarioError("velocity input needs both ux_file and "
                                "uy_file")
        ux = _load_face_field(config.ux_file, grid, (grid.nx + 1, grid.ny),
                              "ux")
        uy = _load_face_field(config.uy_file, grid, (grid.nx, grid.ny + 1),
                              "uy")
        ux[0, :] = ux[-1, :] = 0.0        # no penetration before projecting
        uy[:, 0] = uy[:, -1] = 0.0
        u.ux[:], u.uy[:], _ = leray_project(grid, ux, uy)
    return phi, psi, u


def _load_cell_field(path, grid, name):
    arr, lx, ly = _read(path, name)
    if arr.shape != (grid.nx, grid.ny):
        raise ScenarioError(f"{name} snapshot shape {arr.shape} does not "
                            f"match the {grid.nx}x{grid.ny} grid")
    _check_extent(lx, ly, grid, name)
    return arr


def _load_face_field(path, grid, shape, name):
    arr, lx, ly = _read(path, name)
    if arr.shape != shape:
        raise ScenarioError(f"{name} snapshot shape {arr.shape} does not "
                            f"match the expected face shape {shape}")
    _check_extent(lx, ly, grid, name)
    return arr


def _read(path, name):
    try:
        return read_snapshot(path)
    except (OSError, SnapshotError) as exc:
        raise ScenarioError(f"cannot load {name} from {path}: {exc}") from exc


def _check_extent(lx, ly, grid, name):
    if abs(lx - grid.lx) > 1e-12 * grid.lx or abs(ly - grid.ly) > 1e-12 * grid.ly:
        raise ScenarioError(f"{name} snapshot extent ({lx}, {ly}) does not "
                            f"match the domain ({grid.lx}, {grid.ly})")
