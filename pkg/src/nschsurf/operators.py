"""Discrete calculus on the uniform MAC grid.

Cell-centered scalars see homogeneous Neumann walls (reflected ghosts), the
staggered velocity sees no-slip (zero normal component, reflected tangential
ghosts).  Everything is built from two primitives, the face gradient and the
face-flux divergence, so that

    div_face(grad_cc(f)) == neumann_laplacian(f)        exactly, and
    <div_face(F), g> == -<F, grad_cc(g)>_faces          exactly

for any flux F with zero boundary-normal entries.  That summation-by-parts
identity is what the per-step energy audits lean on, so no operator here may
break it.

The zero-mean inverse of the Neumann Laplacian comes in two independent
routes: a cosine-transform diagonalization (the default; exact up to
round-off and bitwise deterministic) and a conjugate-gradient solve kept as
a cross-check.  Tests compare them; production code must not blend them.
"""

import numpy as np
from functools import lru_cache
from scipy.fft import dctn, idctn

__all__ = [
    "neumann_laplacian", "grad_cc", "div_face", "face_average", "advect",
    "inverse_neumann", "inverse_neumann_cg", "leray_project",
    "l2_inner", "star_norm", "h_neg1_norm",
    "sym_grad", "corner_average", "symmetric_gradient_norm", "face_inner",
]


# ---------------------------------------------------------------------------
# First-order primitives
# ---------------------------------------------------------------------------

def grad_cc(grid, f):
    """Face-normal gradient of a cell scalar; boundary faces get 0
    (that is the reflected-ghost Neumann difference)."""
    gx = np.zeros((grid.nx + 1, grid.ny))
    gy = np.zeros((grid.nx, grid.ny + 1))
    gx[1:-1, :] = (f[1:, :] - f[:-1, :]) / grid.dx
    gy[:, 1:-1] = (f[:, 1:] - f[:, :-1]) / grid.dy
    return gx, gy


def div_face(grid, fx, fy):
    """Cell divergence of a face flux pair."""
    return ((fx[1:, :] - fx[:-1, :]) / grid.dx
            + (fy[:, 1:] - fy[:, :-1]) / grid.dy)


def neumann_laplacian(grid, f):
    gx, gy = grad_cc(grid, f)
    return div_face(grid, gx, gy)


def face_average(grid, f):
    """Centered two-point average of a cell scalar onto faces; boundary
    faces copy the adjacent cell value."""
    fx = np.empty((grid.nx + 1, grid.ny))
    fy = np.empty((grid.nx, grid.ny + 1))
    fx[1:-1, :] = 0.5 * (f[1:, :] + f[:-1, :])
    fx[0, :], fx[-1, :] = f[0, :], f[-1, :]
    fy[:, 1:-1] = 0.5 * (f[:, 1:] + f[:, :-1])
    fy[:, 0], fy[:, -1] = f[:, 0], f[:, -1]
    return fx, fy


def advect(grid, ux, uy, f, upwind=False):
    """Flux-form transport div(u f) with face-interpolated f.

    Centered face values keep the energy audits sharp (the momentum force
    term uses the same interpolation, so the two pairings cancel exactly);
    the upwind variant is a robustness fallback for coarse grids.
    """
    if upwind:
        fx = np.where(ux[1:-1, :] > 0, f[:-1, :], f[1:, :])
        fy = np.where(uy[:, 1:-1] > 0, f[:, :-1], f[:, 1:])
        fluxx = np.zeros_like(ux)
        fluxy = np.zeros_like(uy)
        fluxx[1:-1, :] = ux[1:-1, :] * fx
        fluxy[:, 1:-1] = uy[:, 1:-1] * fy
    else:
        fx, fy = face_average(grid, f)
        fluxx = ux * fx
        fluxy = uy * fy
        fluxx[0, :] = fluxx[-1, :] = 0.0
        fluxy[:, 0] = fluxy[:, -1] = 0.0
    return div_face(grid, fluxx, fluxy)


# ---------------------------------------------------------------------------
# Neumann Poisson inverses
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _neumann_eigs(nx, ny, dx, dy):
    kx = np.arange(nx)
    ky = np.arange(ny)
    lx = -(4.0 / dx ** 2) * np.sin(kx * np.pi / (2 * nx)) ** 2
    ly = -(4.0 / dy ** 2) * np.sin(ky * np.pi / (2 * ny)) ** 2
    return lx[:, None] + ly[None, :]


def inverse_neumann(grid, f):
    """Zero-mean g with -neumann_laplacian(g) = f - mean(f), by cosine
    diagonalization of the exact flux-form stencil."""
    lam = _neumann_eigs(grid.nx, grid.ny, grid.dx, grid.dy)
    fhat = dctn(f, type=2, norm="ortho")
    ghat = np.zeros_like(fhat)
    ghat.flat[1:] = fhat.flat[1:] / (-lam.flat[1:])
    # fhat[0,0] (the mean mode) is dropped: inverse acts on the zero-mean part
    return idctn(ghat, type=2, norm="ortho")


def inverse_neumann_cg(grid, f, rtol=1e-10, maxiter=None):
    """Same inverse by conjugate gradients on the zero-mean subspace;
    returns (g, iterations).  Kept as an independent route for tests."""
    if maxiter is None:
        maxiter = 20 * (grid.nx + grid.ny)
    b = f - np.mean(f)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.sum(r * r)
    bnorm = np.sqrt(np.sum(b * b))
    if bnorm == 0.0:
        return x, 0
    for it in range(1, maxiter + 1):
        ap = -neumann_laplacian(grid, p)
        alpha = rs / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.sum(r * r)
        if np.sqrt(rs_new) <= rtol * bnorm:
            x -= np.mean(x)
            return x, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise RuntimeError(
        f"poisson cg stalled after {maxiter} iterations, "
        f"relative residual {np.sqrt(rs) / bnorm:.3e}")


def leray_project(grid, ux, uy):
    """Remove the discrete-gradient part: returns (ux, uy, p) with
    div_face of the output zero to round-off and mean(p) = 0.

    Exactness rests on div_face(grad_cc(p)) being the same stencil the
    cosine inverse diagonalizes.
    """
    d = div_face(grid, ux, uy)
    p = -inverse_neumann(grid, d)
    gx, gy = grad_cc(grid, p)
    return ux - gx, uy - gy, p


# ---------------------------------------------------------------------------
# Inner products and norms
# ---------------------------------------------------------------------------

def l2_inner(grid, f, g):
    return float(np.sum(f * g)) * grid.cell_volume


def face_inner(grid, ax, ay, bx, by):
    """Face-volume weighted inner product of two staggered pairs."""
    return (float(np.sum(ax * bx)) + float(np.sum(ay * by))) * grid.cell_volume


def star_norm(grid, f):
    """Dual seminorm ||f - mean f||_* induced by the inverse Laplacian."""
    f0 = f - np.mean(f)
    g = inverse_neumann(grid, f0)
    val = l2_inner(grid, f0, g)
    return float(np.sqrt(max(val, 0.0)))


def h_neg1_norm(grid, f):
    m = np.mean(f)
    return float(np.sqrt(star_norm(grid, f) ** 2 + m * m))


# ---------------------------------------------------------------------------
# Symmetrized velocity gradient
# ---------------------------------------------------------------------------

def sym_grad(grid, ux, uy, noslip_ghosts=True):
    """Strain components: dxx, dyy at cells, dxy at the (nx+1) x (ny+1)
    corners.  With noslip_ghosts the tangential ghost is the reflection
    -u_interior (wall value zero); without, the ghost copies the interior
    value so rigid translations give exactly zero strain."""
    dxx = (ux[1:, :] - ux[:-1, :]) / grid.dx
    dyy = (uy[:, 1:] - uy[:, :-1]) / grid.dy

    dy_ux = np.empty((grid.nx + 1, grid.ny + 1))
    dy_ux[:, 1:-1] = (ux[:, 1:] - ux[:, :-1]) / grid.dy
    dx_uy = np.empty((grid.nx + 1, grid.ny + 1))
    dx_uy[1:-1, :] = (uy[1:, :] - uy[:-1, :]) / grid.dx
    if noslip_ghosts:
        dy_ux[:, 0] = 2.0 * ux[:, 0] / grid.dy
        dy_ux[:, -1] = -2.0 * ux[:, -1] / grid.dy
        dx_uy[0, :] = 2.0 * uy[0, :] / grid.dx
        dx_uy[-1, :] = -2.0 * uy[-1, :] / grid.dx
    else:
        dy_ux[:, 0] = 0.0
        dy_ux[:, -1] = 0.0
        dx_uy[0, :] = 0.0
        dx_uy[-1, :] = 0.0
    dxy = 0.5 * (dy_ux + dx_uy)
    return dxx, dyy, dxy


def corner_average(grid, f):
    """Cell scalar onto corners: mean of the 4/2/1 adjacent cells."""
    fp = np.pad(f, 1, mode="edge")
    return 0.25 * (fp[:-1, :-1] + fp[1:, :-1] + fp[:-1, 1:] + fp[1:, 1:])


def _corner_weights(grid):
    wx = np.ones(grid.nx + 1)
    wx[0] = wx[-1] = 0.5
    wy = np.ones(grid.ny + 1)
    wy[0] = wy[-1] = 0.5
    return grid.cell_volume * wx[:, None] * wy[None, :]


def symmetric_gradient_norm(grid, ux, uy, nu=None, noslip_ghosts=True):
    """Weighted strain quadrature  sum nu |D u|^2  with |D|^2 =
    dxx^2 + dyy^2 + 2 dxy^2; cell terms get cell volumes, corner terms get
    the trapezoid corner weights.  nu is a cell field (or None for 1)."""
    dxx, dyy, dxy = sym_grad(grid, ux, uy, noslip_ghosts)
    if nu is None:
        nu_c = 1.0
        nu_cor = 1.0
    else:
        nu_c = nu
        nu_cor = corner_average(grid, nu)
    cell_part = np.sum(nu_c * (dxx ** 2 + dyy ** 2)) * grid.cell_volume
    corner_part = np.sum(2.0 * nu_cor * dxy ** 2 * _corner_weights(grid))
    return float(cell_part + corner_part)
