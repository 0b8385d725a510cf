"""Semi-Lagrangian transport on the omega3 grid.

Each slab update evaluates the previous slab at the foot of the backward
characteristic (cubic interpolation, RK4 back-trace) and integrates the
source along the characteristic by the midpoint rule:

    u(x, t+dt) = u(X_back(x), t) + dt * S_mid(X_mid(x)),

with S_mid the average of the source at the two slab ends sampled at the
characteristic midpoint.  Velocities are compactly supported inside omega3,
so no boundary handling is needed; back-traces cannot leave the box.

The two flushing stages of the control pipeline live here as well: the
temperature is transported on [0, 1/2] from its extended datum and glued
with zero afterwards; the vorticity picks up the buoyancy source on the
first half, is re-extended at t = 1/2, and is flushed source-free on the
second half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowmap import FlowMap
from .geometry import TimeGrid
from .numerics import ddx, ddy


def buoyancy_source(theta, k, h):
    """Vorticity source -k x grad(theta) = k2 d1(theta) - k1 d2(theta)."""
    return k[1] * ddx(theta, h) - k[0] * ddy(theta, h)


class BackTracer:
    """Backward characteristic feet per slab, optionally cached and shared."""

    def __init__(self, flow: FlowMap, cache: bool | None = None):
        self.flow = flow
        grid = flow.grid
        X, Y = grid.mesh()
        self._xs = X.ravel()
        self._ys = Y.ravel()
        self.shape = grid.shape
        if cache is None:
            cache = self._xs.size <= 100_000
        self._cache: dict[int, tuple] | None = {} if cache else None

    def feet(self, n):
        """Feet and midpoints of the backward trace over slab n -> n+1."""
        if self._cache is not None and n in self._cache:
            return self._cache[n]
        tg = self.flow.time_grid
        t_lo = tg.times[n]
        t_hi = tg.times[n + 1]
        fx, fy, path = self.flow.advect(self._xs, self._ys, t_hi, t_lo, return_path=True)
        mx, my = path[self.flow.substeps // 2]
        out = (fx, fy, mx, my)
        if self._cache is not None:
            self._cache[n] = out
        return out


@dataclass
class TransportProblem:
    flow: FlowMap
    initial: np.ndarray              # slab field on the omega3 grid
    t_start: float
    t_end: float
    source: np.ndarray | None = None  # per-slab source stack aligned with the flow's time grid


def solve_transport(problem: TransportProblem, tracer: BackTracer | None = None) -> np.ndarray:
    """March the slab updates; returns the history including both endpoints."""
    flow = problem.flow
    tg: TimeGrid = flow.time_grid
    n0 = tg.index_of(problem.t_start)
    n1 = tg.index_of(problem.t_end)
    if n1 <= n0:
        raise ValueError("transport interval must be forward and non-empty")
    if tracer is None:
        tracer = BackTracer(flow)
    u = np.array(problem.initial, dtype=float, copy=True)
    if u.shape != flow.grid.shape:
        raise ValueError(f"initial datum shape {u.shape} != grid shape {flow.grid.shape}")
    src = problem.source
    if src is not None and src.shape[0] != tg.n_steps + 1:
        raise ValueError("source stack does not match the time grid")
    hist = np.empty((n1 - n0 + 1,) + u.shape)
    hist[0] = u
    sampler = flow.sampler
    for n in range(n0, n1):
        fx, fy, mx, my = tracer.feet(n)
        cu = sampler.filter(u)
        unew = sampler.sample(cu, fx, fy).reshape(u.shape)
        if src is not None:
            s_avg = 0.5 * (src[n] + src[n + 1])
            cs = sampler.filter(s_avg)
            unew += tg.dt * sampler.sample(cs, mx, my).reshape(u.shape)
        if not np.all(np.isfinite(unew)):
            raise FloatingPointError(f"transport produced non-finite values at slab {n + 1}")
        u = unew
        hist[n - n0 + 1] = u
    return hist


@dataclass
class TemperatureStage:
    theta_star: np.ndarray       # full-grid history on [0, 1/2]
    theta_omega: np.ndarray      # glued history on the omega window over [0, 1]
    residual_omega2: float       # max |theta*(1/2)| over closure(omega2)
    residual_omega: float        # max |theta*(1/2)| over closure(omega)
    flush_tol: float


def temperature_stage(
    flow: FlowMap,
    theta0_omega: np.ndarray,
    extension,
    flush_tol_rel: float = 1e-3,
    tracer: BackTracer | None = None,
) -> TemperatureStage:
    """Transport the extended temperature datum on [0,1/2] and glue with zero.

    Requires a flush-certified flow: the datum support must have left
    closure(omega2) at t = 1/2, which is asserted against
    flush_tol_rel * sup|datum|.
    """
    grid = flow.grid
    tg = flow.time_grid
    datum = extension.extend_scalar(theta0_omega)
    hist = solve_transport(
        TransportProblem(flow=flow, initial=datum, t_start=0.0, t_end=0.5), tracer=tracer
    )
    w2 = grid.window(grid.geometry.omega2)
    wo = grid.window(grid.geometry.omega)
    res2 = float(np.max(np.abs(w2.view(hist[-1]))))
    reso = float(np.max(np.abs(wo.view(hist[-1]))))
    tol = flush_tol_rel * float(np.max(np.abs(datum)))
    if res2 > tol:
        raise RuntimeError(
            f"temperature flush audit failed: max over omega2 at t=1/2 is {res2:.3e} "
            f"> tol {tol:.3e} (velocity left the certified ball or grid too coarse)"
        )
    n_half = hist.shape[0] - 1
    theta_omega = np.zeros((tg.n_steps + 1,) + wo.shape)
    for n in range(n_half):
        theta_omega[n] = wo.view(hist[n])
    theta_omega[n_half] = wo.view(hist[n_half])  # measured glue jump, zeros afterwards
    return TemperatureStage(
        theta_star=hist,
        theta_omega=theta_omega,
        residual_omega2=res2,
        residual_omega=reso,
        flush_tol=tol,
    )


@dataclass
class VorticityStage:
    zeta_omega: np.ndarray       # glued history on the omega window over [0, 1]
    residual_omega: float        # max |zeta(1)| over omega
    residual_omega2: float       # max |zeta**(1)| over closure(omega2)
    flush_tol: float
    zeta0_omega: np.ndarray      # curl datum restricted to omega (Poisson right-hand side)


def vorticity_stage(
    flow: FlowMap,
    y0_omega: np.ndarray,
    theta_star: np.ndarray,
    extension_scalar,
    extension_vector,
    k=(0.0, 1.0),
    flush_tol_rel: float = 1e-3,
    tracer: BackTracer | None = None,
    tracer_late: BackTracer | None = None,
) -> VorticityStage:
    """Two-stage vorticity transport with buoyancy forcing on the first half."""
    if k[0] == 0.0 and k[1] == 0.0:
        raise ValueError("buoyancy direction k must be non-zero")
    grid = flow.grid
    tg = flow.time_grid
    h = grid.h
    y0_ext = extension_vector.extend_vector(y0_omega)
    zeta0 = ddx(y0_ext[1], h) - ddy(y0_ext[0], h)

    n_half = tg.index_of(0.5)
    source = np.zeros((tg.n_steps + 1,) + grid.shape)
    for n in range(n_half + 1):
        source[n] = buoyancy_source(theta_star[n], k, h)

    hist1 = solve_transport(
        TransportProblem(flow=flow, initial=zeta0, t_start=0.0, t_end=0.5, source=source),
        tracer=tracer,
    )
    wo = grid.window(grid.geometry.omega)
    w2 = grid.window(grid.geometry.omega2)
    zeta_half_omega = np.array(wo.view(hist1[-1]), copy=True)
    datum2 = extension_scalar.extend_scalar(zeta_half_omega)
    hist2 = solve_transport(
        TransportProblem(flow=flow, initial=datum2, t_start=0.5, t_end=1.0),
        tracer=tracer_late or tracer,
    )
    res_omega = float(np.max(np.abs(wo.view(hist2[-1]))))
    res_omega2 = float(np.max(np.abs(w2.view(hist2[-1]))))
    scale = max(float(np.max(np.abs(zeta0))), float(np.max(np.abs(datum2))))
    tol = flush_tol_rel * scale
    if res_omega > tol:
        raise RuntimeError(
            f"vorticity flush audit failed: max over omega at t=1 is {res_omega:.3e} > tol {tol:.3e}"
        )
    zeta_omega = np.empty((tg.n_steps + 1,) + wo.shape)
    for n in range(n_half):
        zeta_omega[n] = wo.view(hist1[n])
    for n in range(n_half, tg.n_steps + 1):
        zeta_omega[n] = wo.view(hist2[n - n_half])
    return VorticityStage(
        zeta_omega=zeta_omega,
        residual_omega=res_omega,
        residual_omega2=res_omega2,
        flush_tol=tol,
        zeta0_omega=np.array(wo.view(zeta0), copy=True),
    )
