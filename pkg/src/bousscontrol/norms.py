"""Discrete surrogates for Hoelder norms and the transport growth estimate.

The norm of order (m, alpha) is the sum of sup-norms of all finite-difference
derivatives up to order m plus, for each derivative of exact order m, the
discrete Hoelder quotient

    max |D(x) - D(y)| / |x - y|^alpha   over node pairs with 0 < |x-y| <= 1.

The distance cap at 1 gives the classical bounded-seminorm variant (an
equivalent norm) and is what makes the norm monotone in m.  Pair handling:
all pairs when the slab has at most ``ALLPAIRS_NODES`` nodes, otherwise a
seeded stratified sample of anchor nodes with near and far partners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ddx, ddy

ALLPAIRS_NODES = 2000
PAIR_DISTANCE_CAP = 1.0
_ANCHORS = 2048
_NEAR_PARTNERS = 6
_FAR_PARTNERS = 2
_NEAR_REACH = 12  # cells


@dataclass
class HolderReport:
    sup_norm: float
    deriv_sups: tuple
    seminorms: tuple
    total: float
    m: int
    alpha: float

    def csv_row(self, run_id="", t_slab=""):
        semis = ";".join(f"{s:.17g}" for s in self.seminorms)
        return (
            f"{run_id},{t_slab},{self.m},{self.alpha:.17g},"
            f"{self.sup_norm:.17g},{semis},{self.total:.17g}"
        )


def _second_x(f, h):
    out = np.empty_like(f)
    out[:, 1:-1] = (f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]) / h ** 2
    out[:, 0] = (2.0 * f[:, 0] - 5.0 * f[:, 1] + 4.0 * f[:, 2] - f[:, 3]) / h ** 2
    out[:, -1] = (2.0 * f[:, -1] - 5.0 * f[:, -2] + 4.0 * f[:, -3] - f[:, -4]) / h ** 2
    return out


def _second_y(f, h):
    out = np.empty_like(f)
    out[1:-1, :] = (f[2:, :] - 2.0 * f[1:-1, :] + f[:-2, :]) / h ** 2
    out[0, :] = (2.0 * f[0, :] - 5.0 * f[1, :] + 4.0 * f[2, :] - f[3, :]) / h ** 2
    out[-1, :] = (2.0 * f[-1, :] - 5.0 * f[-2, :] + 4.0 * f[-3, :] - f[-4, :]) / h ** 2
    return out


def derivative_stack(values, h, m):
    """Per-order lists of derivative arrays of a scalar slab, orders 0..m."""
    if m == 0:
        return [[values]]
    fx, fy = ddx(values, h), ddy(values, h)
    if m == 1:
        return [[values], [fx, fy]]
    return [[values], [fx, fy], [_second_x(values, h), ddy(fx, h), _second_y(values, h)]]


def _components(field):
    field = np.asarray(field, dtype=float)
    if field.ndim == 2:
        return [field]
    if field.ndim == 3:
        return [field[k] for k in range(field.shape[0])]
    raise ValueError(f"expected a (ny,nx) or (ncomp,ny,nx) field, got shape {field.shape}")


def _pair_indices(shape, seed):
    """Deterministic anchor/partner index pairs for large slabs."""
    ny, nx = shape
    n = ny * nx
    rng = np.random.default_rng(seed)
    # stratified anchors: proportional allocation over an 8x8 block partition
    by = max(1, ny // 8)
    bx = max(1, nx // 8)
    anchors = []
    per_block = max(1, _ANCHORS // ((ny // by + 1) * (nx // bx + 1)))
    for j0 in range(0, ny, by):
        for i0 in range(0, nx, bx):
            jj = rng.integers(j0, min(j0 + by, ny), size=per_block)
            ii = rng.integers(i0, min(i0 + bx, nx), size=per_block)
            anchors.append(jj * nx + ii)
    a = np.concatenate(anchors)
    near = []
    for _ in range(_NEAR_PARTNERS):
        dj = rng.integers(-_NEAR_REACH, _NEAR_REACH + 1, size=a.size)
        di = rng.integers(-_NEAR_REACH, _NEAR_REACH + 1, size=a.size)
        jj = np.clip(a // nx + dj, 0, ny - 1)
        ii = np.clip(a % nx + di, 0, nx - 1)
        near.append(jj * nx + ii)
    far = [rng.integers(0, n, size=a.size) for _ in range(_FAR_PARTNERS)]
    b = np.concatenate(near + far)
    a = np.tile(a, _NEAR_PARTNERS + _FAR_PARTNERS)
    keep = a != b
    return a[keep], b[keep]


def _seminorm_sampled(flat_vals, coords, pairs, alpha):
    a, b = pairs
    d = np.hypot(coords[0][a] - coords[0][b], coords[1][a] - coords[1][b])
    ok = (d > 0.0) & (d <= PAIR_DISTANCE_CAP)
    if not np.any(ok):
        return 0.0
    best = 0.0
    for v in flat_vals:
        q = np.abs(v[a[ok]] - v[b[ok]]) / d[ok] ** alpha
        best = max(best, float(q.max()))
    return best


def _seminorm_allpairs(flat_vals, coords, alpha, chunk=256):
    n = coords[0].size
    best = 0.0
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        dx = coords[0][s:e, None] - coords[0][None, :]
        dy = coords[1][s:e, None] - coords[1][None, :]
        d = np.hypot(dx, dy)
        ok = (d > 0.0) & (d <= PAIR_DISTANCE_CAP)
        if not np.any(ok):
            continue
        dak = d[ok] ** alpha
        for v in flat_vals:
            dv = np.abs(v[s:e, None] - v[None, :])
            q = dv[ok] / dak
            best = max(best, float(q.max()))
    return best


def holder_norm(field, h, m, alpha, seed=0) -> HolderReport:
    """Discrete (m, alpha) Hoelder norm of a scalar or vector slab."""
    if m not in (0, 1, 2):
        raise ValueError(f"derivative order m={m} not supported (max 2)")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    comps = _components(field)
    ny, nx = comps[0].shape
    if min(ny, nx) < m + 2 or ny * nx == 0:
        raise ValueError(f"field of shape {(ny, nx)} too small for m={m}")
    stacks = [derivative_stack(c, h, m) for c in comps]

    deriv_sups = []
    for order in range(m + 1):
        arrays = [d for st in stacks for d in st[order]]
        deriv_sups.append(max(float(np.max(np.abs(a))) for a in arrays))

    n_nodes = ny * nx
    iy, ix = np.mgrid[0:ny, 0:nx]
    coords = (h * ix.ravel(), h * iy.ravel())
    n_top = len(stacks[0][m])  # seminorm slots, one per derivative direction
    if n_nodes <= ALLPAIRS_NODES:
        semis = [
            _seminorm_allpairs([st[m][k].ravel() for st in stacks], coords, alpha)
            for k in range(n_top)
        ]
    else:
        pairs = _pair_indices((ny, nx), seed)
        semis = [
            _seminorm_sampled([st[m][k].ravel() for st in stacks], coords, pairs, alpha)
            for k in range(n_top)
        ]
    total = float(sum(deriv_sups) + sum(semis))
    return HolderReport(
        sup_norm=deriv_sups[0],
        deriv_sups=tuple(deriv_sups),
        seminorms=tuple(semis),
        total=total,
        m=m,
        alpha=alpha,
    )


def time_sup_norm(history, h, m, alpha, seed=0) -> float:
    """max over time slabs of the (m, alpha) norm; history indexed [slab, ...]."""
    history = np.asarray(history, dtype=float)
    if history.ndim not in (3, 4) or history.shape[0] == 0:
        raise ValueError(f"expected a non-empty time-indexed field, got shape {history.shape}")
    return max(holder_norm(history[n], h, m, alpha, seed=seed).total for n in range(history.shape[0]))


@dataclass
class GronwallReport:
    holds: bool
    margin: float
    lhs: float
    rhs: float
    k_supplied: float
    k_min: float


def check_gronwall_bound(u_hist, g_hist, v_hist, h, dt, m, alpha, K, seed=0) -> GronwallReport:
    """Verify the transport growth bound

        max_t ||u(t)||_{m,a} <= (int ||g|| dt + ||u(0)||_{m,a}) * exp(K int ||v(t)||_{m,a} dt)

    for the supplied K, and report the smallest K for which it holds
    (bisection; +inf when no finite K works because the data term vanishes).
    """
    u_hist = np.asarray(u_hist, dtype=float)
    v_hist = np.asarray(v_hist, dtype=float)
    if u_hist.shape[0] != v_hist.shape[0]:
        raise ValueError("u and v histories disagree in slab count")
    if g_hist is not None:
        g_hist = np.asarray(g_hist, dtype=float)
        if g_hist.shape[0] != u_hist.shape[0]:
            raise ValueError("g history disagrees in slab count")

    n = u_hist.shape[0]
    u_norms = np.array([holder_norm(u_hist[i], h, m, alpha, seed=seed).total for i in range(n)])
    v_norms = np.array([holder_norm(v_hist[i], h, m, alpha, seed=seed).total for i in range(n)])
    if g_hist is None:
        g_int = 0.0
    else:
        g_norms = np.array([holder_norm(g_hist[i], h, m, alpha, seed=seed).total for i in range(n)])
        g_int = float(np.trapz(g_norms, dx=dt))
    v_int = float(np.trapz(v_norms, dx=dt))
    lhs = float(u_norms.max())
    base = g_int + float(u_norms[0])

    def rhs(k):
        return base * np.exp(k * v_int)

    holds = lhs <= rhs(K) * (1.0 + 1e-12)
    if base <= 0.0:
        k_min = 0.0 if lhs <= 1e-300 else np.inf
    elif lhs <= base:
        k_min = 0.0
    elif v_int <= 0.0:
        k_min = np.inf
    else:
        lo, hi = 0.0, 1.0
        while rhs(hi) < lhs and hi < 1e12:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if rhs(mid) < lhs:
                lo = mid
            else:
                hi = mid
        k_min = hi
    return GronwallReport(
        holds=bool(holds),
        margin=float(rhs(K) - lhs),
        lhs=lhs,
        rhs=float(rhs(K)),
        k_supplied=float(K),
        k_min=float(k_min),
    )
