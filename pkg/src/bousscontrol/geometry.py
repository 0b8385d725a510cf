"""Nested strip domains, boundary decomposition, and the shared Cartesian grids.

The working geometry is a chain of axis-aligned rectangles

    omega  (physical domain)  inside  omega1  (flushing strip)
    omega1 strictly inside omega2 strictly inside omega3,

with the two vertical ends of omega1 acting as inflow (`gamma_minus`) and
outflow (`gamma_plus`) segments and its horizontal sides as the no-penetration
arcs `sigma`.  The control portion `gamma0` and the temperature-control
portion `gamma_heat` are unions of edges of omega.  All solvers share one
uniform grid covering omega3; the nesting is expressed through node masks and
index windows, never through separate meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OMEGA_EDGES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    def contains(self, x, y, tol=0.0):
        return (
            (x >= self.x0 - tol) & (x <= self.x1 + tol)
            & (y >= self.y0 - tol) & (y <= self.y1 + tol)
        )

    def strictly_inside(self, other: "Rect", margin=0.0):
        """True if self + margin fits inside other."""
        return (
            self.x0 - margin > other.x0 - 1e-12 and self.x1 + margin < other.x1 + 1e-12
            and self.y0 - margin > other.y0 - 1e-12 and self.y1 + margin < other.y1 + 1e-12
        ) and (
            self.x0 > other.x0 and self.x1 < other.x1
            and self.y0 > other.y0 and self.y1 < other.y1
        )

    def expand(self, margin):
        return Rect(self.x0 - margin, self.x1 + margin, self.y0 - margin, self.y1 + margin)

    def exterior_distance(self, x, y):
        """Euclidean distance from points to the rectangle (0 inside)."""
        dx = np.maximum(np.maximum(self.x0 - x, x - self.x1), 0.0)
        dy = np.maximum(np.maximum(self.y0 - y, y - self.y1), 0.0)
        return np.hypot(dx, dy)


@dataclass(frozen=True)
class StripGeometry:
    """The nested domains plus labeled boundary pieces."""

    omega: Rect
    omega1: Rect
    omega2: Rect
    omega3: Rect
    gamma0_edges: tuple = ("left", "right")
    gamma_heat_edges: tuple = ("left",)

    @property
    def gamma_minus_x(self):
        return self.omega1.x0

    @property
    def gamma_plus_x(self):
        return self.omega1.x1

    def omega_edge_segments(self, edges):
        """(point_a, point_b) segments of the omega boundary for named edges."""
        r = self.omega
        table = {
            "left": ((r.x0, r.y0), (r.x0, r.y1)),
            "right": ((r.x1, r.y0), (r.x1, r.y1)),
            "bottom": ((r.x0, r.y0), (r.x1, r.y0)),
            "top": ((r.x0, r.y1), (r.x1, r.y1)),
        }
        return [table[e] for e in edges]


def build_strip_geometry(
    omega: Rect,
    omega1: Rect,
    margin2: float,
    margin3: float,
    gamma0_edges=("left", "right"),
    gamma_heat_edges=("left",),
) -> StripGeometry:
    """Assemble and validate the nested strip geometry.

    omega2 and omega3 are the uniform expansions of omega1 by margin2 and by
    margin2 + margin3.  Rejects non-nested or zero-margin configurations.
    """
    if margin2 <= 0.0 or margin3 <= 0.0:
        raise ValueError(f"margins must be positive, got margin2={margin2}, margin3={margin3}")
    if not omega.strictly_inside(omega1):
        raise ValueError(f"omega {omega} must lie strictly inside omega1 {omega1}")
    omega2 = omega1.expand(margin2)
    omega3 = omega2.expand(margin3)
    for name, edges in (("gamma0", gamma0_edges), ("gamma_heat", gamma_heat_edges)):
        if not edges:
            raise ValueError(f"{name} needs at least one omega edge")
        bad = [e for e in edges if e not in OMEGA_EDGES]
        if bad:
            raise ValueError(f"unknown {name} edges {bad}; valid: {OMEGA_EDGES}")
    geom = StripGeometry(
        omega=omega, omega1=omega1, omega2=omega2, omega3=omega3,
        gamma0_edges=tuple(gamma0_edges), gamma_heat_edges=tuple(gamma_heat_edges),
    )
    _validate(geom)
    return geom


def validate_strip_geometry(geom: StripGeometry):
    _validate(geom)


def _validate(geom: StripGeometry):
    if not geom.omega.strictly_inside(geom.omega1):
        raise ValueError("omega must be strictly inside omega1")
    if not geom.omega1.strictly_inside(geom.omega2):
        raise ValueError("omega1 must be compactly inside omega2")
    if not geom.omega2.strictly_inside(geom.omega3):
        raise ValueError("omega2 must be compactly inside omega3")


def classify_node(geom: StripGeometry, point, h: float) -> str:
    """Deterministic region/boundary tag of one point; boundary tolerance h/2.

    Returns one of: 'gamma0', 'gamma_wall', 'gamma_minus', 'gamma_plus',
    'sigma', 'omega', 'ring1', 'ring2', 'ring3', 'exterior'.  Points beyond
    the omega3 box are tagged 'exterior', never rejected.
    """
    x, y = float(point[0]), float(point[1])
    tol = 0.5 * h
    if not geom.omega3.contains(x, y, tol=tol):
        return "exterior"
    tag = _omega_boundary_tag(geom, x, y, tol)
    if tag is not None:
        return tag
    tag = _omega1_boundary_tag(geom, x, y, tol)
    if tag is not None:
        return tag
    if geom.omega.contains(x, y):
        return "omega"
    if geom.omega1.contains(x, y):
        return "ring1"
    if geom.omega2.contains(x, y):
        return "ring2"
    return "ring3"


def _on_segment(x, y, seg, tol):
    (ax, ay), (bx, by) = seg
    if ax == bx:  # vertical
        return abs(x - ax) <= tol and (min(ay, by) - tol) <= y <= (max(ay, by) + tol)
    return abs(y - ay) <= tol and (min(ax, bx) - tol) <= x <= (max(ax, bx) + tol)


def _omega_boundary_tag(geom, x, y, tol):
    if not geom.omega.contains(x, y, tol=tol):
        return None
    for seg in geom.omega_edge_segments(geom.gamma0_edges):
        if _on_segment(x, y, seg, tol):
            return "gamma0"
    wall = [e for e in OMEGA_EDGES if e not in geom.gamma0_edges]
    for seg in geom.omega_edge_segments(wall):
        if _on_segment(x, y, seg, tol):
            return "gamma_wall"
    return None


def _omega1_boundary_tag(geom, x, y, tol):
    r = geom.omega1
    if not r.contains(x, y, tol=tol):
        return None
    if abs(x - r.x0) <= tol and r.y0 - tol <= y <= r.y1 + tol:
        return "gamma_minus"
    if abs(x - r.x1) <= tol and r.y0 - tol <= y <= r.y1 + tol:
        return "gamma_plus"
    if abs(y - r.y0) <= tol or abs(y - r.y1) <= tol:
        return "sigma"
    return None


@dataclass(frozen=True)
class Window:
    """Inclusive node-index window of a rectangle inside a Grid2D."""

    ix0: int
    ix1: int
    iy0: int
    iy1: int

    @property
    def xslice(self):
        return slice(self.ix0, self.ix1 + 1)

    @property
    def yslice(self):
        return slice(self.iy0, self.iy1 + 1)

    @property
    def shape(self):
        return (self.iy1 - self.iy0 + 1, self.ix1 - self.ix0 + 1)

    def view(self, arr):
        """Slice an omega3-shaped array (trailing two axes) to this window."""
        return arr[..., self.yslice, self.xslice]


@dataclass
class Grid2D:
    """Uniform node grid covering the omega3 bounding box."""

    geometry: StripGeometry
    h: float
    nx: int  # cells along x
    ny: int  # cells along y
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return (self.ny + 1, self.nx + 1)

    def mesh(self):
        return np.meshgrid(self.xs, self.ys)

    def index_of(self, value, origin, name):
        q = (value - origin) / self.h
        i = int(round(q))
        if abs(q - i) > 1e-9:
            raise ValueError(f"{name}={value} does not land on the grid (h={self.h})")
        return i

    def window(self, rect: Rect) -> Window:
        ix0 = self.index_of(rect.x0, self.geometry.omega3.x0, "rect.x0")
        ix1 = self.index_of(rect.x1, self.geometry.omega3.x0, "rect.x1")
        iy0 = self.index_of(rect.y0, self.geometry.omega3.y0, "rect.y0")
        iy1 = self.index_of(rect.y1, self.geometry.omega3.y0, "rect.y1")
        return Window(ix0, ix1, iy0, iy1)

    def node_mask(self, rect: Rect) -> np.ndarray:
        w = self.window(rect)
        m = np.zeros(self.shape, dtype=bool)
        m[w.yslice, w.xslice] = True
        return m

    def region_tags(self) -> np.ndarray:
        """Integer mask: 0=omega, 1=ring1, 2=ring2, 3=ring3 for every node."""
        tags = np.full(self.shape, 3, dtype=np.int8)
        tags[self.node_mask(self.geometry.omega2)] = 2
        tags[self.node_mask(self.geometry.omega1)] = 1
        tags[self.node_mask(self.geometry.omega)] = 0
        return tags


def build_grid(geom: StripGeometry, h: float) -> Grid2D:
    """Uniform grid over omega3; every rectangle edge must land on a node line."""
    if h <= 0.0:
        raise ValueError("grid spacing h must be positive")
    box = geom.omega3
    nx = int(round(box.width / h))
    ny = int(round(box.height / h))
    if abs(nx * h - box.width) > 1e-9 or abs(ny * h - box.height) > 1e-9:
        raise ValueError(f"h={h} does not tile the omega3 box {box}")
    xs = box.x0 + h * np.arange(nx + 1)
    ys = box.y0 + h * np.arange(ny + 1)
    grid = Grid2D(geometry=geom, h=h, nx=nx, ny=ny, xs=xs, ys=ys)
    for name, rect in (("omega", geom.omega), ("omega1", geom.omega1), ("omega2", geom.omega2)):
        try:
            grid.window(rect)
        except ValueError as exc:
            raise ValueError(f"{name} is not grid-aligned: {exc}") from exc
    return grid


@dataclass(frozen=True)
class TimeGrid:
    """Uniform slab partition of [t0, t1]."""

    n_steps: int
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if not self.t1 > self.t0:
            raise ValueError("empty time interval")

    @property
    def dt(self):
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t):
        q = (t - self.t0) / self.dt
        i = int(round(q))
        if abs(q - i) > 1e-9 or not (0 <= i <= self.n_steps):
            raise ValueError(f"t={t} is not a slab boundary of {self}")
        return i


def canonical_geometry(gamma0_edges=("left", "right"), gamma_heat_edges=("left",)) -> StripGeometry:
    """The default test family: omega1 = [0,2]x[0,1] with omega centered inside."""
    return build_strip_geometry(
        omega=Rect(0.5, 1.5, 0.25, 0.75),
        omega1=Rect(0.0, 2.0, 0.0, 1.0),
        margin2=0.25,
        margin3=0.5,
        gamma0_edges=gamma0_edges,
        gamma_heat_edges=gamma_heat_edges,
    )
