"""Linear extension operators from a source rectangle to the omega3 grid.

The construction is a first-order (point-symmetric) reflection across each
source face,

    f_ext(b + s) = 2 f(b) - f(b - s),

composed for corners, followed by a per-axis quintic cutoff that is 1 on the
source rectangle and 0 beyond the mid-surface between source and support
faces.  Point symmetry keeps the one-sided first differences matched across
the source boundary (an even reflection would not); the cutoff confines the
support.  The operator is linear, restriction-exact at shared nodes, and in
general does not preserve divergence-freeness of vector fields.
"""

from __future__ import annotations

import numpy as np

from .geometry import Grid2D, Rect
from .numerics import smoothstep5


class ExtensionOperator:
    """Extend fields sampled on `source` so they vanish outside `support`."""

    def __init__(self, grid: Grid2D, source: Rect, support: Rect):
        self.grid = grid
        self.source = source
        self.support = support
        self.src = grid.window(source)
        self.sup = grid.window(support)
        if not (
            self.sup.ix0 <= self.src.ix0 and self.sup.ix1 >= self.src.ix1
            and self.sup.iy0 <= self.src.iy0 and self.sup.iy1 >= self.src.iy1
        ):
            raise ValueError("support rectangle must contain the source rectangle")
        for gap, size, axis in (
            (source.x0 - support.x0, source.width, "left"),
            (support.x1 - source.x1, source.width, "right"),
            (source.y0 - support.y0, source.height, "bottom"),
            (support.y1 - source.y1, source.height, "top"),
        ):
            if gap >= size:
                raise ValueError(
                    f"{axis} gap {gap} too wide: reflection depth exceeds the source size {size}"
                )
        self._chi = self._build_cutoff()

    def _build_cutoff(self):
        X, Y = np.meshgrid(
            self.grid.xs[self.sup.xslice], self.grid.ys[self.sup.yslice]
        )
        chi = np.ones_like(X)
        chi *= _half_ramp(X, self.source.x0, self.support.x0, side=-1)
        chi *= _half_ramp(X, self.source.x1, self.support.x1, side=+1)
        chi *= _half_ramp(Y, self.source.y0, self.support.y0, side=-1)
        chi *= _half_ramp(Y, self.source.y1, self.support.y1, side=+1)
        return chi

    # -- core ---------------------------------------------------------------

    def _reflect_to_support(self, f):
        src, sup = self.src, self.sup
        sy, sx = src.shape
        # x-pass on the source rows
        strip = np.zeros((sy, sup.shape[1]))
        off = src.ix0 - sup.ix0
        strip[:, off:off + sx] = f
        ib0, ib1 = off, off + sx - 1
        left = np.arange(0, ib0)
        if left.size:
            strip[:, left] = 2.0 * strip[:, [ib0]] - strip[:, 2 * ib0 - left]
        right = np.arange(ib1 + 1, sup.shape[1])
        if right.size:
            strip[:, right] = 2.0 * strip[:, [ib1]] - strip[:, 2 * ib1 - right]
        # y-pass on the full support window
        out = np.zeros(sup.shape)
        joff = src.iy0 - sup.iy0
        out[joff:joff + sy, :] = strip
        jb0, jb1 = joff, joff + sy - 1
        below = np.arange(0, jb0)
        if below.size:
            out[below, :] = 2.0 * out[[jb0], :] - out[2 * jb0 - below, :]
        above = np.arange(jb1 + 1, sup.shape[0])
        if above.size:
            out[above, :] = 2.0 * out[[jb1], :] - out[2 * jb1 - above, :]
        return out

    def extend_scalar(self, f) -> np.ndarray:
        """Extend a scalar source-window array to the full omega3 grid."""
        f = np.asarray(f, dtype=float)
        if f.shape != self.src.shape:
            raise ValueError(
                f"field shape {f.shape} does not match the source window {self.src.shape}"
            )
        ext = self._reflect_to_support(f) * self._chi
        out = np.zeros(self.grid.shape)
        out[self.sup.yslice, self.sup.xslice] = ext
        return out

    def extend_vector(self, f) -> np.ndarray:
        """Componentwise extension of a (2, ny, nx) source-window field."""
        f = np.asarray(f, dtype=float)
        if f.ndim != 3 or f.shape[0] != 2:
            raise ValueError(f"expected a (2, ny, nx) field, got {f.shape}")
        return np.stack([self.extend_scalar(f[0]), self.extend_scalar(f[1])])

    def restrict(self, arr):
        """Source-window view of an omega3-shaped array."""
        return arr[..., self.src.yslice, self.src.xslice]


def _half_ramp(coord, face, limit, side):
    """Cutoff factor for one face: 1 at the face, 0 beyond the mid-surface."""
    gap = (limit - face) * side
    if gap <= 0.0:
        return np.ones_like(coord)
    width = 0.5 * gap
    excess = (coord - face) * side
    return 1.0 - smoothstep5(np.clip(excess, 0.0, None) / width)
