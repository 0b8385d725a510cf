"""Characteristic flow maps of compactly supported velocities on omega3.

A velocity is the sum of a separable base part  scale * profile(t) * B(x)
(the return field) and an optional perturbation given either as a static
field or as a per-slab stack interpolated linearly in time.  Spatial
evaluation is cubic B-spline interpolation with shared weights; time
integration is classical RK4 with a fixed number of sub-steps per slab,
aligned to the global sub-step lattice so that slab-aligned compositions of
the map reproduce the same step sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid2D, Rect, TimeGrid
from .numerics import BicubicSampler, radial_bump
from .profiles import TimeProfile

logger = logging.getLogger(__name__)


class FlowMap:
    """Evaluator for the flow Y(x, t, s) of a grid velocity field."""

    def __init__(
        self,
        grid: Grid2D,
        time_grid: TimeGrid,
        base_field=None,
        base_profile: TimeProfile | None = None,
        base_scale: float = 1.0,
        pert_static=None,
        pert_stack=None,
        substeps: int = 4,
    ):
        self.grid = grid
        self.time_grid = time_grid
        self.substeps = int(substeps)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        box = grid.geometry.omega3
        self.box = box
        self.sampler = BicubicSampler(box.x0, box.y0, grid.h, grid.shape)
        self.base_profile = base_profile
        self.base_scale = float(base_scale)
        self.clamp_events = 0

        self._base = None
        if base_field is not None:
            bf = np.asarray(base_field, dtype=float)
            if not np.all(np.isfinite(bf)):
                raise ValueError("NaN/inf in base velocity field")
            self._base = [self.sampler.filter(bf[0]), self.sampler.filter(bf[1])]

        self._pert_static = None
        if pert_static is not None:
            ps = np.asarray(pert_static, dtype=float)
            self._pert_static = [self.sampler.filter(ps[0]), self.sampler.filter(ps[1])]

        self._stack = None
        self._stack_cache: dict[int, list] = {}
        if pert_stack is not None:
            st = np.asarray(pert_stack, dtype=float)
            if st.shape[0] != time_grid.n_steps + 1:
                raise ValueError("perturbation stack does not match the time grid")
            if not np.all(np.isfinite(st)):
                raise ValueError("NaN/inf in perturbation stack")
            self._stack = st

    # -- velocity -----------------------------------------------------------

    def _stack_coeffs(self, n):
        c = self._stack_cache.get(n)
        if c is None:
            c = [self.sampler.filter(self._stack[n, 0]), self.sampler.filter(self._stack[n, 1])]
            self._stack_cache[n] = c
            while len(self._stack_cache) > 6:
                self._stack_cache.pop(next(iter(self._stack_cache)))
        return c

    def velocity(self, xs, ys, t):
        arrays = []
        if self._base is not None:
            arrays += self._base
        if self._pert_static is not None:
            arrays += self._pert_static
        lam = 0.0
        if self._stack is not None:
            tg = self.time_grid
            pos = (t - tg.t0) / tg.dt
            n = int(np.clip(np.floor(pos), 0, tg.n_steps - 1))
            lam = float(np.clip(pos - n, 0.0, 1.0))
            arrays += self._stack_coeffs(n) + self._stack_coeffs(n + 1)
        if not arrays:
            return np.zeros_like(xs), np.zeros_like(ys)
        vals = self.sampler.sample_many(arrays, xs, ys)
        k = 0
        vx = np.zeros_like(xs, dtype=float)
        vy = np.zeros_like(ys, dtype=float)
        if self._base is not None:
            amp = self.base_scale * (self.base_profile(t) if self.base_profile is not None else 1.0)
            vx += amp * vals[k]
            vy += amp * vals[k + 1]
            k += 2
        if self._pert_static is not None:
            vx += vals[k]
            vy += vals[k + 1]
            k += 2
        if self._stack is not None:
            vx += (1.0 - lam) * vals[k] + lam * vals[k + 2]
            vy += (1.0 - lam) * vals[k + 1] + lam * vals[k + 3]
        return vx, vy

    # -- integration --------------------------------------------------------

    def _step_times(self, t_from, t_to):
        """Sub-step boundaries from t_from to t_to along the global lattice."""
        if t_to == t_from:
            return np.array([t_from])
        dt_sub = self.time_grid.dt / self.substeps
        lo, hi = (t_from, t_to) if t_to > t_from else (t_to, t_from)
        k0 = int(np.floor((lo - self.time_grid.t0) / dt_sub + 1e-12)) + 1
        k1 = int(np.ceil((hi - self.time_grid.t0) / dt_sub - 1e-12)) - 1
        inner = self.time_grid.t0 + dt_sub * np.arange(k0, k1 + 1)
        inner = inner[(inner > lo + 1e-14) & (inner < hi - 1e-14)]
        ts = np.concatenate(([lo], inner, [hi]))
        if t_to < t_from:
            ts = ts[::-1]
        return ts

    def advect(self, xs, ys, t_from, t_to, return_path=False):
        """Integrate points from time t_from to t_to; clamps to the omega3 box."""
        x = np.array(xs, dtype=float, copy=True)
        y = np.array(ys, dtype=float, copy=True)
        ts = self._step_times(t_from, t_to)
        path = [(x.copy(), y.copy())] if return_path else None
        for a, b in zip(ts[:-1], ts[1:]):
            dt = b - a
            k1x, k1y = self.velocity(x, y, a)
            k2x, k2y = self.velocity(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, a + 0.5 * dt)
            k3x, k3y = self.velocity(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, a + 0.5 * dt)
            k4x, k4y = self.velocity(x + dt * k3x, y + dt * k3y, b)
            x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            if return_path:
                path.append((x.copy(), y.copy()))
        xc = np.clip(x, self.box.x0, self.box.x1)
        yc = np.clip(y, self.box.y0, self.box.y1)
        n_clamped = int(np.count_nonzero((xc != x) | (yc != y)))
        if n_clamped:
            self.clamp_events += n_clamped
            logger.debug("advect clamped %d of %d points to the omega3 box", n_clamped, x.size)
        if return_path:
            path[-1] = (xc, yc)
            return xc, yc, path
        return xc, yc

    def advect_point(self, point, t_to, t_from):
        """Position at time t_to of the particle sitting at `point` at time t_from."""
        xs = np.array([point[0]], dtype=float)
        ys = np.array([point[1]], dtype=float)
        x, y = self.advect(xs, ys, t_from, t_to)
        return np.array([x[0], y[0]])


def return_flow(potential, gamma: TimeProfile, time_grid: TimeGrid, M: float, substeps=4) -> FlowMap:
    """Flow map of the return field  M * gamma(t) * grad(phi_ext)."""
    return FlowMap(
        grid=potential.grid,
        time_grid=time_grid,
        base_field=potential.grad,
        base_profile=gamma,
        base_scale=M,
        substeps=substeps,
    )


# ---------------------------------------------------------------------------
# diffeomorphism diagnostics
# ---------------------------------------------------------------------------

def verify_group_property(flow: FlowMap, xs, ys, r, s, t) -> float:
    """max |Y(Y(x,s,r),t,s) - Y(x,t,r)| over the sample."""
    ax, ay = flow.advect(xs, ys, r, s)
    bx, by = flow.advect(ax, ay, s, t)
    cx, cy = flow.advect(xs, ys, r, t)
    return float(np.max(np.hypot(bx - cx, by - cy)))


def verify_inverse_property(flow: FlowMap, xs, ys, s, t) -> float:
    """max |Y(Y(x,t,s),s,t) - x| over the sample."""
    ax, ay = flow.advect(xs, ys, s, t)
    bx, by = flow.advect(ax, ay, t, s)
    return float(np.max(np.hypot(bx - xs, by - ys)))


# ---------------------------------------------------------------------------
# flushing
# ---------------------------------------------------------------------------

CHECKPOINT_PAIRS = ((0.0, 0.5), (0.5, 1.0))


@dataclass
class FlushCheck:
    ok: bool
    clearance: float          # min exterior distance over nodes and checkpoint pairs
    required: float
    pair_clearances: tuple


def check_flush(flow: FlowMap, rect: Rect, grid: Grid2D, required: float,
                pairs=CHECKPOINT_PAIRS) -> FlushCheck:
    """Do all nodes of the closed rectangle leave it over each checkpoint pair?"""
    w = grid.window(rect)
    X, Y = np.meshgrid(grid.xs[w.xslice], grid.ys[w.yslice])
    xs, ys = X.ravel(), Y.ravel()
    clearances = []
    for t_from, t_to in pairs:
        fx, fy = flow.advect(xs, ys, t_from, t_to)
        clearances.append(float(rect.exterior_distance(fx, fy).min()))
    cmin = min(clearances)
    return FlushCheck(ok=cmin >= required, clearance=cmin, required=required,
                      pair_clearances=tuple(clearances))


@dataclass
class FlushCertificate:
    strength: float               # accepted amplitude multiplier of the return field
    clearance: float
    required_clearance: float
    predicted_threshold: float    # width(omega2) / int_0^{1/2} gamma
    attempts: list = field(default_factory=list)

    def summary(self):
        return (
            f"flush certificate: M={self.strength:g}, clearance={self.clearance:.4g} "
            f"(required {self.required_clearance:.4g}), predicted threshold "
            f"M~{self.predicted_threshold:.4g}, attempts={[a[0] for a in self.attempts]}"
        )


def select_flush_amplitude(
    potential,
    gamma: TimeProfile,
    grid: Grid2D,
    time_grid: TimeGrid,
    substeps: int = 4,
    required_clearance: float | None = None,
    m_start: float = 1.0,
    m_max: float = 2.0 ** 16,
) -> FlushCertificate:
    """Doubling search for the smallest power-of-two field strength that
    flushes every node of closure(omega2) across both checkpoint pairs."""
    geom = grid.geometry
    if required_clearance is None:
        required_clearance = 2.0 * grid.h
    half_integral = gamma.params.get("half_integral") or gamma.integral(0.0, 0.5)
    if half_integral <= 0.0:
        raise ValueError("flushing profile has vanishing half-interval integral")
    predicted = geom.omega2.width / half_integral

    attempts = []
    m = float(m_start)
    while m <= m_max:
        flow = return_flow(potential, gamma, time_grid, m, substeps=substeps)
        res = check_flush(flow, geom.omega2, grid, required_clearance)
        attempts.append((m, res.ok, res.clearance))
        if res.ok:
            return FlushCertificate(
                strength=m,
                clearance=res.clearance,
                required_clearance=required_clearance,
                predicted_threshold=predicted,
                attempts=attempts,
            )
        m *= 2.0
    raise RuntimeError(
        f"no field strength up to {m_max} flushes omega2 "
        f"(predicted threshold ~{predicted:.3g}); geometry/profile cannot flush"
    )


@dataclass
class PerturbationMargin:
    empirical: float            # largest tested amplitude passing every trial
    formula: float              # Gronwall-style pessimistic bound
    clearance: float
    trials: int
    records: list               # (amplitude, n_pass, n_trials, worst_clearance)


def estimate_perturbation_margin(
    potential,
    gamma: TimeProfile,
    grid: Grid2D,
    time_grid: TimeGrid,
    strength: float,
    extension,
    clearance: float,
    substeps: int = 4,
    trials: int = 16,
    seed: int = 0,
    amplitudes=None,
) -> PerturbationMargin:
    """Empirical size of velocity perturbations that keep the flush property.

    Perturbs the return field by extended random smooth fields of graded
    amplitude and returns the largest amplitude for which both checkpoint
    flushes retain clearance >= clearance/2 in every trial.  The Gronwall
    bound value  clearance / (2 C exp(M ||grad phi||_0 int gamma))  is
    reported alongside; it is vastly more pessimistic by construction.
    """
    if clearance <= 0.0:
        raise ValueError("flush clearance must be positive before perturbing")
    geom = grid.geometry
    if amplitudes is None:
        amplitudes = [clearance * 2.0 ** (-j) for j in range(8)]
    rng = np.random.default_rng(seed)
    w_omega = grid.window(geom.omega)
    X, Y = np.meshgrid(grid.xs[w_omega.xslice], grid.ys[w_omega.yslice])

    fields = []
    gain = 1.0
    for _ in range(trials):
        comps = []
        for _c in range(2):
            f = np.zeros_like(X)
            for _b in range(3):
                cx = rng.uniform(geom.omega.x0, geom.omega.x1)
                cy = rng.uniform(geom.omega.y0, geom.omega.y1)
                rad = rng.uniform(0.08, 0.2)
                sgn = rng.choice([-1.0, 1.0])
                f += sgn * radial_bump(X, Y, (cx, cy), rad)
            sup = np.max(np.abs(f))
            comps.append(f / sup if sup > 0 else f)
        ext = extension.extend_vector(np.stack(comps))
        sup_ext = float(np.max(np.abs(ext)))
        gain = max(gain, sup_ext)
        fields.append(ext)

    records = []
    empirical = 0.0
    for amp in sorted(amplitudes, reverse=True):
        n_pass = 0
        worst = np.inf
        for ext in fields:
            flow = FlowMap(
                grid=grid,
                time_grid=time_grid,
                base_field=potential.grad,
                base_profile=gamma,
                base_scale=strength,
                pert_static=amp * ext,
                substeps=substeps,
            )
            res = check_flush(flow, geom.omega2, grid, 0.5 * clearance)
            worst = min(worst, res.clearance)
            if res.ok:
                n_pass += 1
        records.append((amp, n_pass, trials, worst))
        if n_pass == trials and empirical == 0.0:
            empirical = amp
            break

    sup_grad = float(np.max(np.hypot(potential.grad[0], potential.grad[1])))
    half = gamma.params.get("half_integral") or gamma.integral(0.0, 0.5)
    formula = clearance / (2.0 * gain * np.exp(strength * sup_grad * half))
    return PerturbationMargin(
        empirical=empirical,
        formula=float(formula),
        clearance=clearance,
        trials=trials,
        records=records,
    )


def potential_monotonicity(flow: FlowMap, potential, xs, ys, times) -> float:
    """Min discrete slope of t -> phi_ext(Y(x,t,0)) along sampled trajectories."""
    times = np.asarray(times, dtype=float)
    coeff = flow.sampler.filter(potential.phi)
    vals = []
    px, py = np.array(xs, dtype=float), np.array(ys, dtype=float)
    vals.append(flow.sampler.sample(coeff, px, py))
    for a, b in zip(times[:-1], times[1:]):
        px, py = flow.advect(px, py, a, b)
        vals.append(flow.sampler.sample(coeff, px, py))
    vals = np.array(vals)
    slopes = np.diff(vals, axis=0) / np.diff(times)[:, None]
    return float(slopes.min())
