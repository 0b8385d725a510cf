"""Velocity recovery from vorticity via the streamfunction Poisson problem.

Per time slab:  -Lap(psi) = zeta - mu(t) * curl(y0)  with psi = 0 on the
omega boundary, then  y = perp_grad(psi) + ybar + mu(t) * y0.  The 2D
orientation is fixed once: perp_grad(psi) = (d2 psi, -d1 psi), so that
curl(perp_grad(psi)) = -Lap(psi) and the normal trace of perp_grad(psi)
vanishes on straight boundary edges (tangential derivative of a constant).
The factorized operator is shared across slabs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .geometry import Grid2D
from .numerics import perp_grad


class StreamFunctionSolver:
    """Homogeneous-Dirichlet Poisson solver on the omega window."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        self.window = grid.window(grid.geometry.omega)
        ny, nx = self.window.shape
        if ny < 3 or nx < 3:
            raise ValueError("omega window too small for an interior Poisson solve")
        self.ny_i, self.nx_i = ny - 2, nx - 2
        h = grid.h
        tx = sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(self.nx_i, self.nx_i))
        ty = sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(self.ny_i, self.ny_i))
        ix = sparse.identity(self.nx_i)
        iy = sparse.identity(self.ny_i)
        A = (sparse.kron(iy, tx) + sparse.kron(ty, ix)) / h ** 2
        self._lu = splu(A.tocsc())

    def solve(self, rhs):
        """Solve -Lap(psi) = rhs on the window; rhs given on all window nodes."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != self.window.shape:
            raise ValueError(f"rhs shape {rhs.shape} != omega window {self.window.shape}")
        b = rhs[1:-1, 1:-1].ravel()
        psi_i = self._lu.solve(b)
        if not np.all(np.isfinite(psi_i)):
            raise FloatingPointError("streamfunction solve returned non-finite values")
        psi = np.zeros(self.window.shape)
        psi[1:-1, 1:-1] = psi_i.reshape(self.ny_i, self.nx_i)
        return psi

    def residual_inf(self, psi, rhs):
        h = self.grid.h
        lap = (
            psi[1:-1, 2:] + psi[1:-1, :-2] + psi[2:, 1:-1] + psi[:-2, 1:-1]
            - 4.0 * psi[1:-1, 1:-1]
        ) / h ** 2
        return float(np.max(np.abs(lap + rhs[1:-1, 1:-1])))


def recover_velocity(solver: StreamFunctionSolver, zeta, zeta0, ybar_slab, y0, mu_t):
    """One-slab velocity recovery; all fields are omega-window arrays.

    zeta0 is the curl of y0 in the same discretization used to produce zeta,
    so a slab with zeta = mu_t * zeta0 recovers y = ybar + mu_t * y0 exactly.
    """
    rhs = zeta - mu_t * zeta0
    psi = solver.solve(rhs)
    gx, gy = perp_grad(psi, solver.grid.h)
    y = np.stack([gx + ybar_slab[0] + mu_t * y0[0], gy + ybar_slab[1] + mu_t * y0[1]])
    return y, psi


@dataclass
class FluxAudit:
    total: float
    per_edge: dict
    tolerance: float
    ok: bool


def boundary_flux_audit(y, grid: Grid2D, tolerance: float = 1e-8) -> FluxAudit:
    """Trapezoidal flux of y through gamma0; zero-mean is the control contract."""
    geom = grid.geometry
    h = grid.h
    per_edge = {}
    for edge in geom.gamma0_edges:
        per_edge[edge] = _edge_flux(y, edge, h)
    total = float(sum(per_edge.values()))
    return FluxAudit(total=total, per_edge=per_edge, tolerance=tolerance,
                     ok=abs(total) <= tolerance)


def _edge_flux(y, edge, h):
    """Trapezoid of y.n along one omega edge of the window field."""
    if edge == "left":
        vals = -y[0][:, 0]
    elif edge == "right":
        vals = y[0][:, -1]
    elif edge == "bottom":
        vals = -y[1][0, :]
    elif edge == "top":
        vals = y[1][-1, :]
    else:
        raise ValueError(f"unknown omega edge {edge!r}")
    return float(h * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


def normal_trace_error(y, ybar_slab, y0, mu_t, grid: Grid2D) -> float:
    """max |(y - ybar - mu_t y0) . n| over the omega boundary nodes."""
    diff = y - np.stack([ybar_slab[0] + mu_t * y0[0], ybar_slab[1] + mu_t * y0[1]])
    edges = [
        np.abs(diff[0][:, 0]), np.abs(diff[0][:, -1]),
        np.abs(diff[1][0, :]), np.abs(diff[1][-1, :]),
    ]
    return float(max(e.max() for e in edges))
