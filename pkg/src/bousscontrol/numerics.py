"""Shared low-level numerics: smooth bumps, cutoffs, finite differences, interpolation.

Everything here operates on plain numpy arrays laid out as [iy, ix] with a
uniform spacing h shared by both axes.  Derivatives are 2nd-order centered in
the interior and 2nd-order one-sided on the outermost rows/columns, so that
polynomials of degree <= 2 differentiate exactly up to the boundary.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


# ---------------------------------------------------------------------------
# smooth profiles
# ---------------------------------------------------------------------------

def smoothstep5(u):
    """Quintic smoothstep: 0 -> 1 on [0, 1] with vanishing 1st/2nd endpoint derivatives."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 + u * (-15.0 + 6.0 * u))


def mollifier(s):
    """Standard unit bump exp(1 - 1/(1-s^2)) on |s|<1, zero outside; peak value 1 at s=0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si ** 2))
    return out


def mollifier_d(s):
    """Derivative of :func:`mollifier` with respect to s."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    g = 1.0 - si ** 2
    out[inside] = np.exp(1.0 - 1.0 / g) * (-2.0 * si / g ** 2)
    return out


def radial_bump(x, y, center, radius, amplitude=1.0):
    """Radially symmetric compactly supported bump, peak `amplitude` at `center`."""
    q = ((x - center[0]) ** 2 + (y - center[1]) ** 2) / radius ** 2
    out = np.zeros_like(q)
    inside = q < 1.0
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - q[inside]))
    return out


def radial_bump_grad(x, y, center, radius, amplitude=1.0):
    """Analytic gradient (d/dx, d/dy) of :func:`radial_bump`."""
    dx = x - center[0]
    dy = y - center[1]
    q = (dx ** 2 + dy ** 2) / radius ** 2
    gx = np.zeros_like(q)
    gy = np.zeros_like(q)
    inside = q < 1.0
    g = 1.0 - q[inside]
    dB = np.exp(1.0 - 1.0 / g) * (-1.0 / g ** 2)
    gx[inside] = dB * 2.0 * dx[inside] / radius ** 2
    gy[inside] = dB * 2.0 * dy[inside] / radius ** 2
    return gx, gy


# ---------------------------------------------------------------------------
# finite differences (uniform h, [iy, ix] layout)
# ---------------------------------------------------------------------------

def ddx(f, h):
    """d/dx, centered interior, 2nd-order one-sided at the left/right columns."""
    out = np.empty_like(f)
    out[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2.0 * h)
    out[:, 0] = (-3.0 * f[:, 0] + 4.0 * f[:, 1] - f[:, 2]) / (2.0 * h)
    out[:, -1] = (3.0 * f[:, -1] - 4.0 * f[:, -2] + f[:, -3]) / (2.0 * h)
    return out


def ddy(f, h):
    """d/dy, centered interior, 2nd-order one-sided at the bottom/top rows."""
    out = np.empty_like(f)
    out[1:-1, :] = (f[2:, :] - f[:-2, :]) / (2.0 * h)
    out[0, :] = (-3.0 * f[0, :] + 4.0 * f[1, :] - f[2, :]) / (2.0 * h)
    out[-1, :] = (3.0 * f[-1, :] - 4.0 * f[-2, :] + f[-3, :]) / (2.0 * h)
    return out


def gradient(f, h):
    return ddx(f, h), ddy(f, h)


def curl2d(vx, vy, h):
    """Scalar curl of a 2D field: d(vy)/dx - d(vx)/dy."""
    return ddx(vy, h) - ddy(vx, h)


def div2d(vx, vy, h):
    return ddx(vx, h) + ddy(vy, h)


def perp_grad(psi, h):
    """Rotated gradient (d psi/dy, -d psi/dx); divergence-free by construction."""
    return ddy(psi, h), -ddx(psi, h)


def laplacian5(f, h):
    """5-point Laplacian on interior nodes; boundary rows returned as zero."""
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = (
        f[1:-1, 2:] + f[1:-1, :-2] + f[2:, 1:-1] + f[:-2, 1:-1]
        - 4.0 * f[1:-1, 1:-1]
    ) / h ** 2
    return out


# ---------------------------------------------------------------------------
# cubic-spline sampling of grid fields
# ---------------------------------------------------------------------------

class BicubicSampler:
    """Evaluate one or more grid arrays at scattered points via cubic B-splines.

    Coefficients are prefiltered once per array (scipy mirror boundary); the
    basis weights are computed once per point batch and shared across arrays,
    which is the hot path of the semi-Lagrangian solver.
    """

    def __init__(self, x0, y0, h, shape):
        self.x0 = float(x0)
        self.y0 = float(y0)
        self.h = float(h)
        self.ny, self.nx = shape

    def filter(self, values):
        """Prefilter a grid array into spline coefficients."""
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite values in field handed to BicubicSampler")
        return ndimage.spline_filter(values, order=3, mode="mirror")

    def _weights(self, xs, ys):
        gx = np.clip((xs - self.x0) / self.h, 0.0, self.nx - 1.0)
        gy = np.clip((ys - self.y0) / self.h, 0.0, self.ny - 1.0)
        ix = np.clip(np.floor(gx).astype(np.int64), 1, self.nx - 3)
        iy = np.clip(np.floor(gy).astype(np.int64), 1, self.ny - 3)
        tx = gx - ix
        ty = gy - iy
        wx = _bspline_weights(tx)
        wy = _bspline_weights(ty)
        return ix, iy, wx, wy

    def sample_many(self, coeff_arrays, xs, ys):
        """Sample several prefiltered arrays at the same points; returns a list."""
        ix, iy, wx, wy = self._weights(xs, ys)
        base = (iy - 1) * self.nx + (ix - 1)
        rows = [base + k * self.nx for k in range(4)]
        out = []
        for c in coeff_arrays:
            flat = c.reshape(-1)
            acc = np.zeros_like(xs, dtype=float)
            for k in range(4):
                idx = rows[k]
                rowval = (
                    flat.take(idx) * wx[0]
                    + flat.take(idx + 1) * wx[1]
                    + flat.take(idx + 2) * wx[2]
                    + flat.take(idx + 3) * wx[3]
                )
                acc += rowval * wy[k]
            out.append(acc)
        return out

    def sample(self, coeff, xs, ys):
        return self.sample_many([coeff], xs, ys)[0]


def _bspline_weights(t):
    """Cubic B-spline basis weights for fractional offsets t in [0,1)."""
    t2 = t * t
    t3 = t2 * t
    w0 = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0
    w1 = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0
    w2 = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0
    w3 = t3 / 6.0
    return w0, w1, w2, w3
