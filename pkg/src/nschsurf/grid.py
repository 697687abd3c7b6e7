"""Uniform rectangular grid and the two field containers.

Cell-centered scalars live on an nx x ny lattice of cell midpoints.  The
staggered velocity keeps x-normal components on the (nx+1) x ny vertical
faces and y-normal components on the nx x (ny+1) horizontal faces; walls
carry no-slip, so boundary-normal face values are pinned to zero.
"""

import numpy as np
from dataclasses import dataclass, field

__all__ = ["Grid2D", "ScalarField", "StaggeredVelocity"]


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 cells per direction")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain side lengths must be positive")

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def cell_volume(self):
        return self.dx * self.dy

    @property
    def measure(self):
        return self.lx * self.ly

    def cell_centers(self):
        """Meshgrid-style (X, Y) arrays of cell midpoints, shape (nx, ny)."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return x[:, None] * np.ones(self.ny), np.ones(self.nx)[:, None] * y

    def mean(self, f):
        # uniform cells: the volume-weighted mean is the plain average
        return float(np.mean(f))

    def integral(self, f):
        return float(np.sum(f)) * self.cell_volume

    def l2_norm(self, f):
        return float(np.sqrt(np.sum(f * f) * self.cell_volume))

    def zeros(self):
        return np.zeros((self.nx, self.ny))

    def zeros_faces(self):
        return (np.zeros((self.nx + 1, self.ny)),
                np.zeros((self.nx, self.ny + 1)))


@dataclass
class ScalarField:
    """Cell-centered scalar with its grid; data shape (nx, ny)."""

    grid: Grid2D
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"scalar shape {self.data.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("scalar field contains non-finite entries")

    def mean(self):
        return self.grid.mean(self.data)

    def copy(self):
        return ScalarField(self.grid, self.data.copy())


@dataclass
class StaggeredVelocity:
    """MAC velocity; boundary-normal entries are forced to zero on entry."""

    grid: Grid2D
    ux: np.ndarray = field(default=None)
    uy: np.ndarray = field(default=None)

    def __post_init__(self):
        g = self.grid
        if self.ux is None:
            self.ux, self.uy = g.zeros_faces()
            return
        self.ux = np.asarray(self.ux, dtype=float)
        self.uy = np.asarray(self.uy, dtype=float)
        if self.ux.shape != (g.nx + 1, g.ny) or self.uy.shape != (g.nx, g.ny + 1):
            raise ValueError("staggered component shapes do not match grid")
        if not (np.all(np.isfinite(self.ux)) and np.all(np.isfinite(self.uy))):
            raise ValueError("velocity contains non-finite entries")
        self.ux[0, :] = 0.0
        self.ux[-1, :] = 0.0
        self.uy[:, 0] = 0.0
        self.uy[:, -1] = 0.0

    def copy(self):
        return StaggeredVelocity(self.grid, self.ux.copy(), self.uy.copy())
