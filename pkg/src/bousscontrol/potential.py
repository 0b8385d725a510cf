"""Mixed Dirichlet-Neumann Laplace solve for the return potential.

The potential solves  -Lap(phi) = 0  on omega1 with phi = -1 on the left end
(gamma_minus), phi = +1 on the right end (gamma_plus) and zero normal
derivative on the horizontal sides (sigma).  On the canonical rectangle the
exact solution is affine in x and lies in the kernel of the 5-point stencil,
which the acceptance suite exploits as an oracle.

The potential is then continued to the full omega3 grid: point-symmetric
reflection across the Dirichlet ends, even reflection across the Neumann
sides, multiplied by a C^2 per-axis quintic cutoff that equals 1 on a pad
beyond omega2 and vanishes well before the omega3 boundary.  Keeping the
cutoff flat past omega2 is what lets the induced flow push every particle of
closure(omega2) out of it; the particles come to rest on the cutoff shoulder,
strictly between omega2 and the support edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .geometry import Grid2D, StripGeometry
from .numerics import gradient, smoothstep5

DEFAULT_CUTOFF_PAD = 0.2
DEFAULT_CUTOFF_WIDTH = 0.2
EDGE_CLEARANCE = 0.05  # support must end at least this far from the omega3 boundary


@dataclass
class ReturnPotential:
    grid: Grid2D
    phi: np.ndarray          # extended potential on the omega3 grid
    grad: np.ndarray         # (2, ny+1, nx+1) centered gradient of phi
    support_mask: np.ndarray
    cutoff: np.ndarray
    residual_inf: float      # 5-point residual on interior omega1 nodes
    sigma_flux_inf: float    # one-sided normal difference on sigma
    cutoff_pad: float
    cutoff_width: float


@dataclass
class PotentialAudit:
    min_grad_omega1: float
    phi_min: float
    phi_max: float
    gradient_floor: float
    passed: bool

    def summary(self):
        state = "pass" if self.passed else "FAIL"
        return (
            f"potential audit [{state}]: min|grad phi| on omega1 = {self.min_grad_omega1:.6g} "
            f"(floor {self.gradient_floor:g}), phi range [{self.phi_min:.6g}, {self.phi_max:.6g}]"
        )


def _laplace_system(nny, nnx, h):
    """Sparse mixed-BC operator on the omega1 node window, row-major layout."""
    def k(j, i):
        return j * nnx + i

    rows, cols, data = [], [], []
    inv_h2 = 1.0 / h ** 2
    for j in range(nny):
        for i in range(nnx):
            r = k(j, i)
            if i == 0 or i == nnx - 1:          # Dirichlet ends
                rows.append(r); cols.append(r); data.append(1.0)
            elif j == 0:                          # Neumann bottom (ghost-eliminated)
                rows += [r, r, r, r]
                cols += [r, k(0, i - 1), k(0, i + 1), k(1, i)]
                data += [4.0 * inv_h2, -inv_h2, -inv_h2, -2.0 * inv_h2]
            elif j == nny - 1:                    # Neumann top
                rows += [r, r, r, r]
                cols += [r, k(j, i - 1), k(j, i + 1), k(j - 1, i)]
                data += [4.0 * inv_h2, -inv_h2, -inv_h2, -2.0 * inv_h2]
            else:
                rows += [r, r, r, r, r]
                cols += [r, k(j, i - 1), k(j, i + 1), k(j - 1, i), k(j + 1, i)]
                data += [4.0 * inv_h2, -inv_h2, -inv_h2, -inv_h2, -inv_h2]
    return coo_matrix((data, (rows, cols)), shape=(nny * nnx, nny * nnx)).tocsc()


def solve_omega1_potential(geom: StripGeometry, grid: Grid2D) -> np.ndarray:
    """Direct sparse solve of the mixed problem on the omega1 window."""
    w1 = grid.window(geom.omega1)
    nny, nnx = w1.shape
    A = _laplace_system(nny, nnx, grid.h)
    b = np.zeros(nny * nnx)
    b[0::nnx] = -1.0          # left column: gamma_minus
    b[nnx - 1::nnx] = 1.0     # right column: gamma_plus
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise RuntimeError(f"singular Laplace system for omega1 window {w1}: {exc}") from exc
    phi = lu.solve(b).reshape(nny, nnx)
    return phi


def extend_potential(
    phi1: np.ndarray,
    geom: StripGeometry,
    grid: Grid2D,
    cutoff_pad: float = DEFAULT_CUTOFF_PAD,
    cutoff_width: float = DEFAULT_CUTOFF_WIDTH,
):
    """Continue the omega1 potential to the omega3 grid and apply the cutoff.

    Returns (phi_ext, cutoff).  Reflections are exact index arithmetic because
    every rectangle edge lies on a node line: values continue point-symmetric
    through the Dirichlet ends (C^1 there) and even through the Neumann sides.
    """
    r1, r2, r3 = geom.omega1, geom.omega2, geom.omega3
    reach = cutoff_pad + cutoff_width + (r2.x0 - r1.x0)  # max reflection depth in x
    if reach >= min(r1.width, r1.height):
        raise ValueError(
            f"cutoff pad+width {cutoff_pad}+{cutoff_width} too deep for reflection "
            f"across omega1 of size {r1.width}x{r1.height}"
        )
    margin3 = r3.x1 - r2.x1
    if cutoff_pad + cutoff_width > margin3 - EDGE_CLEARANCE:
        raise ValueError(
            f"cutoff pad+width {cutoff_pad + cutoff_width} exceeds the omega2->omega3 "
            f"margin {margin3} minus edge clearance {EDGE_CLEARANCE}"
        )

    w1 = grid.window(r1)
    NY, NX = grid.shape
    J, I = np.mgrid[0:NY, 0:NX]

    IM = I.copy()
    CX = np.zeros(grid.shape)
    SX = np.ones(grid.shape)
    right = I > w1.ix1
    left = I < w1.ix0
    IM[right] = 2 * w1.ix1 - I[right]
    CX[right] = 2.0
    SX[right] = -1.0
    IM[left] = 2 * w1.ix0 - I[left]
    CX[left] = -2.0
    SX[left] = -1.0

    JM = J.copy()
    above = J > w1.iy1
    below = J < w1.iy0
    JM[above] = 2 * w1.iy1 - J[above]
    JM[below] = 2 * w1.iy0 - J[below]

    # clamp to the window just in case; out-of-depth reflections were rejected above
    IM = np.clip(IM, w1.ix0, w1.ix1)
    JM = np.clip(JM, w1.iy0, w1.iy1)

    embedded = np.zeros(grid.shape)
    embedded[w1.yslice, w1.xslice] = phi1
    phi_raw = CX + SX * embedded[JM, IM]

    X, Y = grid.mesh()
    chi = _axis_ramp(X, r2.x0, r2.x1, cutoff_pad, cutoff_width) * _axis_ramp(
        Y, r2.y0, r2.y1, cutoff_pad, cutoff_width
    )
    return phi_raw * chi, chi


def _axis_ramp(coord, lo, hi, pad, width):
    """1 on [lo-pad, hi+pad], quintic descent to 0 over `width` outside."""
    excess = np.maximum(np.maximum(lo - coord, coord - hi), 0.0)
    return 1.0 - smoothstep5((excess - pad) / width)


def solve_return_potential(
    geom: StripGeometry,
    grid: Grid2D,
    cutoff_pad: float = DEFAULT_CUTOFF_PAD,
    cutoff_width: float = DEFAULT_CUTOFF_WIDTH,
) -> ReturnPotential:
    phi1 = solve_omega1_potential(geom, grid)

    h = grid.h
    lap = (
        phi1[1:-1, 2:] + phi1[1:-1, :-2] + phi1[2:, 1:-1] + phi1[:-2, 1:-1]
        - 4.0 * phi1[1:-1, 1:-1]
    ) / h ** 2
    residual_inf = float(np.max(np.abs(lap))) if lap.size else 0.0
    sigma_flux = max(
        float(np.max(np.abs(phi1[1, :] - phi1[0, :]))),
        float(np.max(np.abs(phi1[-1, :] - phi1[-2, :]))),
    ) / h
    phi_ext, chi = extend_potential(phi1, geom, grid, cutoff_pad, cutoff_width)
    gx, gy = gradient(phi_ext, h)
    return ReturnPotential(
        grid=grid,
        phi=phi_ext,
        grad=np.stack([gx, gy]),
        support_mask=chi > 0.0,
        cutoff=chi,
        residual_inf=residual_inf,
        sigma_flux_inf=sigma_flux,
        cutoff_pad=cutoff_pad,
        cutoff_width=cutoff_width,
    )


def audit_return_potential(pot: ReturnPotential, gradient_floor: float = 1e-3) -> PotentialAudit:
    """Check the interior-potential bounds and the gradient floor on omega1.

    Always returns a report; `passed` is False when min |grad phi| drops below
    the floor or the potential leaves [-1, 1] on omega1.
    """
    geom = pot.grid.geometry
    w1 = pot.grid.window(geom.omega1)
    speed = np.hypot(w1.view(pot.grad[0]), w1.view(pot.grad[1]))
    phi1 = w1.view(pot.phi)
    min_grad = float(speed.min())
    phi_min = float(phi1.min())
    phi_max = float(phi1.max())
    passed = (
        min_grad >= gradient_floor
        and phi_min >= -1.0 - 1e-12
        and phi_max <= 1.0 + 1e-12
    )
    return PotentialAudit(
        min_grad_omega1=min_grad,
        phi_min=phi_min,
        phi_max=phi_max,
        gradient_floor=gradient_floor,
        passed=bool(passed),
    )
