"""Parabolic pipeline for the diffusive case: penalized null control of the
advected temperature on an extended domain, the outer damped fixed point, and
the two-phase strategy (temperature to zero first, then steer the velocity).

The temperature is controlled indirectly: extend the initial datum and the
advecting velocity through the controllable boundary portion into a slightly
larger rectangle, drive the extended state to (near) zero with a distributed
control supported in a patch outside the physical domain, and restrict back.
The restriction's trace on the controllable edge is the realized boundary
control; on the rest of the physical boundary the extended problem's
homogeneous Dirichlet condition makes the trace vanish identically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .control import (
    ControlTrace,
    GlobalRun,
    ReturnInfrastructure,
    check_velocity_data,
    global_exact_control,
)
from .extension import ExtensionOperator
from .geometry import Grid2D, Rect, TimeGrid
from .norms import time_sup_norm
from .numerics import BicubicSampler, curl2d, perp_grad
from .recovery import StreamFunctionSolver
from .transport import buoyancy_source

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtendedDomain:
    """Rectangle containing omega, sharing its boundary except the heat edge."""

    omega_tilde: Rect
    control_patch: Rect
    heat_edge: str

    def validate(self, omega: Rect):
        p, t = self.control_patch, self.omega_tilde
        if not (p.x0 > t.x0 and p.x1 < t.x1 and p.y0 > t.y0 and p.y1 < t.y1):
            raise ValueError("control patch must be strictly inside omega_tilde")
        overlap = not (
            p.x1 <= omega.x0 or p.x0 >= omega.x1 or p.y1 <= omega.y0 or p.y0 >= omega.y1
        )
        if overlap:
            raise ValueError("control patch must be disjoint from closure(omega)")


def build_extended_domain(grid: Grid2D, bulge: float = 0.25) -> ExtendedDomain:
    """Bulge omega outward through the heat edge; place the patch in the bulge."""
    geom = grid.geometry
    edges = geom.gamma_heat_edges
    if len(edges) != 1:
        raise ValueError("the heat pipeline expects exactly one temperature-control edge")
    edge = edges[0]
    o = geom.omega
    if edge == "left":
        tilde = Rect(o.x0 - bulge, o.x1, o.y0, o.y1)
    elif edge == "right":
        tilde = Rect(o.x0, o.x1 + bulge, o.y0, o.y1)
    elif edge == "bottom":
        tilde = Rect(o.x0, o.x1, o.y0 - bulge, o.y1)
    else:
        tilde = Rect(o.x0, o.x1, o.y0, o.y1 + bulge)
    if not geom.omega2.strictly_inside(geom.omega3) or not tilde.strictly_inside(geom.omega3):
        raise ValueError("omega_tilde does not fit inside the omega3 box")
    patch = _bulge_patch(o, tilde, edge)
    dom = ExtendedDomain(omega_tilde=tilde, control_patch=patch, heat_edge=edge)
    dom.validate(o)
    grid.window(tilde)       # raises if not grid-aligned
    grid.window(patch)
    return dom


def _bulge_patch(o: Rect, t: Rect, edge):
    """Patch occupying the middle of the bulge, inset by a quarter on each side."""
    if edge in ("left", "right"):
        lo, hi = (t.x0, o.x0) if edge == "left" else (o.x1, t.x1)
        b = hi - lo
        return Rect(lo + 0.25 * b, hi - 0.25 * b, o.y0 + 0.125 * o.height, o.y1 - 0.125 * o.height)
    lo, hi = (t.y0, o.y0) if edge == "bottom" else (o.y1, t.y1)
    b = hi - lo
    return Rect(o.x0 + 0.125 * o.width, o.x1 - 0.125 * o.width, lo + 0.25 * b, hi - 0.25 * b)


# ---------------------------------------------------------------------------
# implicit advection-diffusion stepping
# ---------------------------------------------------------------------------

class AdvectionDiffusionSolver:
    """Backward-Euler stepping of  u_t - kappa Lap(u) + w.grad(u) = v 1_patch
    on the omega_tilde window with homogeneous Dirichlet boundary."""

    def __init__(self, grid: Grid2D, domain: ExtendedDomain, kappa: float, time_grid: TimeGrid):
        if kappa <= 0.0:
            raise ValueError("kappa must be positive for the parabolic solver")
        self.grid = grid
        self.domain = domain
        self.kappa = float(kappa)
        self.time_grid = time_grid
        self.window = grid.window(domain.omega_tilde)
        ny, nx = self.window.shape
        self.ny_i, self.nx_i = ny - 2, nx - 2
        self.h = grid.h
        pw = grid.window(domain.control_patch)
        iy = np.arange(pw.iy0, pw.iy1 + 1) - self.window.iy0 - 1
        ix = np.arange(pw.ix0, pw.ix1 + 1) - self.window.ix0 - 1
        if iy.min() < 0 or ix.min() < 0 or iy.max() >= self.ny_i or ix.max() >= self.nx_i:
            raise ValueError("control patch leaves the interior of omega_tilde")
        J, I = np.meshgrid(iy, ix, indexing="ij")
        self.patch_flat = (J * self.nx_i + I).ravel()
        self.patch_shape = J.shape
        self._lap = self._laplacian()

    def _laplacian(self):
        tx = sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(self.nx_i, self.nx_i))
        ty = sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(self.ny_i, self.ny_i))
        ix = sparse.identity(self.nx_i)
        iy = sparse.identity(self.ny_i)
        return (sparse.kron(iy, tx) + sparse.kron(ty, ix)) / self.h ** 2

    def _advection(self, w_slab):
        """Centered first-order advection matrix for one velocity slab."""
        wx = w_slab[0][1:-1, 1:-1].ravel()
        wy = w_slab[1][1:-1, 1:-1].ravel()
        n = self.nx_i * self.ny_i
        c = 1.0 / (2.0 * self.h)
        dx = sparse.diags([-c, c], [-1, 1], shape=(self.nx_i, self.nx_i)).tolil()
        dx[0, :] = 0.0
        dx[-1, :] = 0.0  # one-sided differences would break the Dirichlet stencil; the
        dx = sparse.kron(sparse.identity(self.ny_i), dx)  # boundary value is zero anyway
        dy = sparse.diags([-c, c], [-1, 1], shape=(self.ny_i, self.ny_i)).tolil()
        dy[0, :] = 0.0
        dy[-1, :] = 0.0
        dy = sparse.kron(dy, sparse.identity(self.nx_i))
        return sparse.diags(wx) @ dx + sparse.diags(wy) @ dy

    def factor(self, w_hist):
        """One LU per implicit step; w_hist has n_steps+1 velocity slabs."""
        tg = self.time_grid
        if w_hist.shape[0] != tg.n_steps + 1:
            raise ValueError("velocity history does not match the time grid")
        peclet = self.h * float(np.max(np.abs(w_hist))) / self.kappa
        if peclet > 2.0:
            logger.warning("cell Peclet number %.2f > 2; centered advection may wiggle", peclet)
        eye = sparse.identity(self.nx_i * self.ny_i, format="csc")
        lus = []
        for n in range(1, tg.n_steps + 1):
            wt = w_hist[n].reshape(2, *self.window.shape)
            A = (eye + tg.dt * (self.kappa * self._lap + self._advection(wt))).tocsc()
            lus.append(splu(A))
        return lus

    # interior <-> window helpers
    def to_interior(self, u_window):
        return np.asarray(u_window, dtype=float)[1:-1, 1:-1].ravel()

    def to_window(self, u_int):
        u = np.zeros(self.window.shape)
        u[1:-1, 1:-1] = u_int.reshape(self.ny_i, self.nx_i)
        return u

    def forward(self, lus, u0_window, v_hist=None):
        """March the state; v_hist is (n_steps+1, patch...) with v[0] unused."""
        tg = self.time_grid
        u = self.to_interior(u0_window)
        hist = np.empty((tg.n_steps + 1,) + self.window.shape)
        hist[0] = self.to_window(u)
        for n in range(1, tg.n_steps + 1):
            rhs = u.copy()
            if v_hist is not None:
                rhs[self.patch_flat] += tg.dt * v_hist[n].ravel()
            u = lus[n - 1].solve(rhs)
            hist[n] = self.to_window(u)
        if not np.all(np.isfinite(hist)):
            raise FloatingPointError("advection-diffusion sweep produced non-finite values")
        return hist

    def adjoint(self, lus, g_terminal_window):
        """Exact transpose sweep.  Returns (p0_interior, per-step patch gradients).

        With u^{n} = A_n^{-1}(u^{n-1} + dt B v^n) one has
        <g, u^N> = <p^0, u^0> + dt sum_n <B^T q^n, v^n>,
        where q^n = A_n^{-T} p^n and p^{n-1} = q^n.
        """
        tg = self.time_grid
        p = self.to_interior(g_terminal_window)
        grads = np.zeros((tg.n_steps + 1,) + self.patch_shape)
        for n in range(tg.n_steps, 0, -1):
            q = lus[n - 1].solve(p, trans="T")
            grads[n] = q[self.patch_flat].reshape(self.patch_shape)
            p = q
        return p, grads

    def state_norm(self, u_window):
        return float(np.sqrt(self.h ** 2 * np.sum(np.asarray(u_window) ** 2)))

    def control_norm(self, v_hist):
        return float(np.sqrt(self.time_grid.dt * self.h ** 2 * np.sum(np.asarray(v_hist) ** 2)))


# ---------------------------------------------------------------------------
# penalized HUM
# ---------------------------------------------------------------------------

@dataclass
class HumSolution:
    control: np.ndarray          # (n_steps+1, patch shape), slot 0 unused
    state: np.ndarray            # (n_steps+1, window shape)
    terminal_norm: float
    control_norm: float
    penalization: float
    cg_iterations: int
    cg_residual: float


def hum_null_control(
    solver: AdvectionDiffusionSolver,
    u0_window,
    w_hist,
    eps_pen: float,
    cg_tol: float = 1e-12,
    cg_max_iter: int = 2000,
    lus=None,
) -> HumSolution:
    """Minimize  1/2 ||v||^2 + 1/(2 eps) ||u(T)||^2  by CG on the control.

    Each Hessian application is one forward plus one adjoint sweep with the
    exact transposed operators, so the optimality system is solved to the CG
    tolerance and the terminal norm decays as eps_pen -> 0.
    """
    if eps_pen <= 0.0:
        raise ValueError("penalization parameter must be positive")
    if lus is None:
        lus = solver.factor(np.asarray(w_hist))
    tg = solver.time_grid

    def hessian(v):
        uT = solver.forward(lus, np.zeros(solver.window.shape), v)[-1]
        _, grads = solver.adjoint(lus, uT)
        return v + grads / eps_pen

    free_T = solver.forward(lus, u0_window)[-1]
    _, g0 = solver.adjoint(lus, free_T)
    b = -g0 / eps_pen

    v = np.zeros((tg.n_steps + 1,) + solver.patch_shape)
    r = b - hessian(v)
    p = r.copy()
    rs = float(np.sum(r * r))
    b_norm = max(np.sqrt(float(np.sum(b * b))), 1e-300)
    it = 0
    while np.sqrt(rs) / b_norm > cg_tol and it < cg_max_iter:
        hp = hessian(p)
        alpha = rs / float(np.sum(p * hp))
        v += alpha * p
        r -= alpha * hp
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    if it >= cg_max_iter:
        logger.warning("HUM conjugate gradients stalled: residual %.3e after %d iterations",
                       np.sqrt(rs) / b_norm, it)
    state = solver.forward(lus, u0_window, v)
    return HumSolution(
        control=v,
        state=state,
        terminal_norm=solver.state_norm(state[-1]),
        control_norm=solver.control_norm(v),
        penalization=eps_pen,
        cg_iterations=it,
        cg_residual=float(np.sqrt(rs) / b_norm),
    )


def penalization_sweep(solver, u0_window, w_hist, eps_values, **kw):
    """HUM solves over a decreasing penalization ladder; shares factorizations."""
    lus = solver.factor(np.asarray(w_hist))
    return [hum_null_control(solver, u0_window, w_hist, e, lus=lus, **kw)
            for e in sorted(eps_values, reverse=True)]


# ---------------------------------------------------------------------------
# buoyancy-forced Euler evolution on omega (no controls, y.n = 0 everywhere)
# ---------------------------------------------------------------------------

def euler_evolution(infra: ReturnInfrastructure, time_grid: TimeGrid, y0, theta_bar):
    """Initial-value vorticity/streamfunction solve driven by a temperature history.

    Semi-Lagrangian vorticity transport with the buoyancy source, velocity
    recovered each slab with zero normal trace; one predictor/corrector pass
    per slab for 2nd-order coupling.
    """
    grid = infra.grid
    stream: StreamFunctionSolver = infra.stream
    w = stream.window
    h = grid.h
    dt = time_grid.dt
    omega_rect = grid.geometry.omega
    sampler = BicubicSampler(omega_rect.x0, omega_rect.y0, h, w.shape)
    X, Y = np.meshgrid(grid.xs[w.xslice], grid.ys[w.yslice])
    xs, ys = X.ravel(), Y.ravel()

    def feet(vel):
        cvx = sampler.filter(vel[0])
        cvy = sampler.filter(vel[1])
        fx, fy = xs.copy(), ys.copy()
        mx = my = None
        nsub = infra.substeps
        dts = -dt / nsub
        for s in range(nsub):
            k1 = sampler.sample_many([cvx, cvy], fx, fy)
            p2 = (fx + 0.5 * dts * k1[0], fy + 0.5 * dts * k1[1])
            k2 = sampler.sample_many([cvx, cvy], *p2)
            p3 = (fx + 0.5 * dts * k2[0], fy + 0.5 * dts * k2[1])
            k3 = sampler.sample_many([cvx, cvy], *p3)
            p4 = (fx + dts * k3[0], fy + dts * k3[1])
            k4 = sampler.sample_many([cvx, cvy], *p4)
            fx = fx + (dts / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            fy = fy + (dts / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            fx = np.clip(fx, omega_rect.x0, omega_rect.x1)
            fy = np.clip(fy, omega_rect.y0, omega_rect.y1)
            if s + 1 == nsub // 2:
                mx, my = fx.copy(), fy.copy()
        if mx is None:
            mx, my = fx, fy
        return fx, fy, mx, my

    n = time_grid.n_steps
    zeta = curl2d(y0[0], y0[1], h)
    y_hist = np.empty((n + 1, 2) + w.shape)
    y_hist[0] = y0
    zeta_hist = np.empty((n + 1,) + w.shape)
    zeta_hist[0] = zeta
    for i in range(n):
        src_a = buoyancy_source(theta_bar[i], infra.k, h)
        src_b = buoyancy_source(theta_bar[i + 1], infra.k, h)
        s_avg = 0.5 * (src_a + src_b)
        cs = sampler.filter(s_avg)

        def advance(vel):
            fx, fy, mx, my = feet(vel)
            cz = sampler.filter(zeta)
            znew = sampler.sample(cz, fx, fy).reshape(w.shape)
            znew += dt * sampler.sample(cs, mx, my).reshape(w.shape)
            psi = stream.solve(znew)
            gx, gy = perp_grad(psi, h)
            return znew, np.stack([gx, gy])

        _, y_pred = advance(y_hist[i])
        zeta_new, y_new = advance(0.5 * (y_hist[i] + y_pred))
        zeta = zeta_new
        zeta_hist[i + 1] = zeta
        y_hist[i + 1] = y_new
    return y_hist, zeta_hist


# ---------------------------------------------------------------------------
# outer fixed point and the two-phase strategy
# ---------------------------------------------------------------------------

@dataclass
class HeatSetup:
    infra: ReturnInfrastructure
    domain: ExtendedDomain
    time_grid: TimeGrid
    kappa: float
    eps_pen: float = 1e-8
    hum_tol: float = 1e-4
    lambda_tol: float = 1e-7
    lambda_max_iter: int = 30
    damping: float = 0.5
    ext_state: ExtensionOperator = None
    ext_velocity: ExtensionOperator = None
    solver: AdvectionDiffusionSolver = None

    def __post_init__(self):
        grid = self.infra.grid
        if self.ext_state is None:
            self.ext_state = ExtensionOperator(grid, grid.geometry.omega, self.domain.omega_tilde)
        if self.ext_velocity is None:
            self.ext_velocity = ExtensionOperator(grid, grid.geometry.omega, self.domain.omega_tilde)
        if self.solver is None:
            self.solver = AdvectionDiffusionSolver(grid, self.domain, self.kappa, self.time_grid)


def build_heat_setup(infra: ReturnInfrastructure, T_star=0.5, n_steps=32,
                     kappa=0.05, bulge=0.25, **kw) -> HeatSetup:
    domain = build_extended_domain(infra.grid, bulge=bulge)
    tg = TimeGrid(n_steps=n_steps, t0=0.0, t1=T_star)
    return HeatSetup(infra=infra, domain=domain, time_grid=tg, kappa=kappa, **kw)


@dataclass
class TemperaturePhase:
    y: np.ndarray                  # velocity history on the omega window
    theta: np.ndarray              # realized temperature on the omega window
    boundary_control: np.ndarray   # Dirichlet trace on the heat edge, per slab
    hum: HumSolution
    terminal_theta_inf: float
    offgamma_trace_inf: float
    lambda_iterations: int
    lambda_converged: bool
    lambda_history: list
    ball_norm: float


def temperature_phase(setup: HeatSetup, y0, theta0) -> TemperaturePhase:
    """Outer damped Picard loop: temperature guess -> velocity -> HUM -> restriction."""
    infra = setup.infra
    grid = infra.grid
    tg = setup.time_grid
    h = grid.h
    alpha = infra.tol.alpha
    check_velocity_data(y0, grid)
    _check_all_edges_zero(y0)
    wo = grid.window(grid.geometry.omega)
    wt = setup.solver.window

    u0_full = setup.ext_state.extend_scalar(theta0)
    u0 = np.array(wt.view(u0_full), copy=True)

    theta_bar = np.repeat(theta0[None, :, :], tg.n_steps + 1, axis=0)
    lam_history = []
    converged = False
    y_hist = None
    hum = None
    theta_new = None
    for it in range(setup.lambda_max_iter):
        y_hist, _ = euler_evolution(infra, tg, y0, theta_bar)
        w_hist = np.empty((tg.n_steps + 1, 2) + wt.shape)
        for n in range(tg.n_steps + 1):
            ext = setup.ext_velocity.extend_vector(y_hist[n])
            w_hist[n] = wt.view(ext)
        hum = hum_null_control(setup.solver, u0, w_hist, setup.eps_pen)
        theta_new = _restrict_state(hum.state, wt, wo)
        change = time_sup_norm(theta_new - theta_bar, h, 1, alpha, seed=infra.seed)
        lam_history.append(change)
        theta_bar = theta_bar + setup.damping * (theta_new - theta_bar)
        if change <= setup.lambda_tol:
            converged = True
            break
    if not converged:
        logger.warning("outer temperature fixed point did not converge: history %s", lam_history)

    ball = time_sup_norm(theta_bar, h, 1, alpha, seed=infra.seed)
    if ball > 1.0:
        logger.warning("temperature guess left the unit ball: %.3e", ball)
    trace, off_gamma = _boundary_traces(hum.state, wt, wo, setup.domain.heat_edge)
    terminal = float(np.max(np.abs(theta_new[-1])))
    return TemperaturePhase(
        y=y_hist, theta=theta_new, boundary_control=trace, hum=hum,
        terminal_theta_inf=terminal, offgamma_trace_inf=off_gamma,
        lambda_iterations=len(lam_history), lambda_converged=converged,
        lambda_history=lam_history, ball_norm=ball,
    )


def _check_all_edges_zero(y0):
    worst = max(
        float(np.max(np.abs(y0[0][:, 0]))), float(np.max(np.abs(y0[0][:, -1]))),
        float(np.max(np.abs(y0[1][0, :]))), float(np.max(np.abs(y0[1][-1, :]))),
    )
    if worst > 1e-8:
        raise ValueError(
            f"kappa>0 runs need y0.n = 0 on the whole boundary; max |y0.n| = {worst:.3e}"
        )


def _restrict_state(state, wt, wo):
    out = np.empty((state.shape[0],) + wo.shape)
    oy = wo.iy0 - wt.iy0
    ox = wo.ix0 - wt.ix0
    for n in range(state.shape[0]):
        out[n] = state[n][oy:oy + wo.shape[0], ox:ox + wo.shape[1]]
    return out


def _boundary_traces(state, wt, wo, heat_edge):
    """(trace on the heat edge per slab, max |trace| on the other omega edges)."""
    theta = _restrict_state(state, wt, wo)
    picks = {
        "left": theta[:, :, 0], "right": theta[:, :, -1],
        "bottom": theta[:, 0, :], "top": theta[:, -1, :],
    }
    trace = np.array(picks[heat_edge])
    off = max(float(np.max(np.abs(picks[e]))) for e in picks if e != heat_edge)
    return trace, off


@dataclass
class TwoPhaseRun:
    phase1: TemperaturePhase
    phase2: GlobalRun
    times: np.ndarray
    terminal_velocity_error: float
    terminal_theta_inf: float
    offgamma_trace_inf: float
    trace: ControlTrace


def two_phase_control(setup: HeatSetup, y0, y1, T=1.0, theta0=None) -> TwoPhaseRun:
    """Temperature to zero on [0, T*], then exact velocity control on [T*, T]."""
    T_star = setup.time_grid.t1
    if not 0.0 < T_star < T:
        raise ValueError(f"phase split T*={T_star} must lie inside (0, T={T})")
    if theta0 is None:
        raise ValueError("theta0 is required (it is the controlled quantity)")
    phase1 = temperature_phase(setup, y0, theta0)
    if phase1.terminal_theta_inf > setup.hum_tol:
        logger.warning(
            "phase-1 terminal temperature %.3e exceeds hum_tol %.3e",
            phase1.terminal_theta_inf, setup.hum_tol,
        )
    y_mid = phase1.y[-1]
    zeros = np.zeros_like(theta0)
    phase2 = global_exact_control(setup.infra, y_mid, y1, zeros, zeros, T=T - T_star)
    times = np.concatenate([setup.time_grid.times, T_star + phase2.times])
    trace = phase2.trace  # boundary velocity controls live in phase 2
    return TwoPhaseRun(
        phase1=phase1,
        phase2=phase2,
        times=times,
        terminal_velocity_error=phase2.terminal_velocity_error,
        terminal_theta_inf=phase1.terminal_theta_inf,
        offgamma_trace_inf=phase1.offgamma_trace_inf,
        trace=trace,
    )
