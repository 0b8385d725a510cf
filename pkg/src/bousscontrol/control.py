"""Return-method control: the velocity fixed-point map, the local null-control
run, and the global scaled/time-reversed glue.

One application of the map takes a candidate advecting velocity z on the
physical window, extends its deviation from the return field to omega3,
transports temperature and vorticity through the flushing window, and
rebuilds a velocity from the transported vorticity via the streamfunction
solve.  Iterating the map from  z0 = ybar + mu * y0  drives both transported
quantities to zero at their scheduled times, which is what makes the
terminal velocity and temperature vanish.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .extension import ExtensionOperator
from .flowmap import FlowMap, select_flush_amplitude, FlushCertificate
from .geometry import Grid2D, StripGeometry, TimeGrid, build_grid, canonical_geometry
from .norms import holder_norm, time_sup_norm
from .numerics import div2d, perp_grad, radial_bump, radial_bump_grad
from .potential import ReturnPotential, audit_return_potential, solve_return_potential
from .profiles import TimeProfile, make_gamma, make_mu
from .recovery import StreamFunctionSolver, boundary_flux_audit, recover_velocity
from .transport import BackTracer, temperature_stage, vorticity_stage

logger = logging.getLogger(__name__)


@dataclass
class ControlTolerances:
    fp_tol: float = 1e-8
    k_max: int = 50
    flush_tol_rel: float = 1e-3
    glue_tol: float = 1e-3
    delta_test: float = 0.05
    alpha: float = 0.5
    gradient_floor: float = 1e-3
    nu: float = 0.5              # soft ball radius in the (0,2,alpha) surrogate
    flux_tol: float = 1e-8


@dataclass
class ReturnInfrastructure:
    """Everything a control run needs, built once and shared."""

    geom: StripGeometry
    grid: Grid2D
    time_grid: TimeGrid
    potential: ReturnPotential
    gamma: TimeProfile
    mu: TimeProfile
    strength: float
    certificate: FlushCertificate | None
    ext_scalar: ExtensionOperator
    ext_vector: ExtensionOperator
    stream: StreamFunctionSolver
    k: tuple
    substeps: int
    tol: ControlTolerances
    seed: int = 0

    def omega_window(self):
        return self.grid.window(self.geom.omega)

    def ybar_slab(self, n):
        """Return-field slab restricted to the omega window."""
        w = self.omega_window()
        g = self.strength * float(self.gamma(self.time_grid.times[n]))
        return g * np.stack([w.view(self.potential.grad[0]), w.view(self.potential.grad[1])])

    def ybar_history(self):
        n = self.time_grid.n_steps
        return np.stack([self.ybar_slab(i) for i in range(n + 1)])

    def make_flow(self, pert_stack=None) -> FlowMap:
        return FlowMap(
            grid=self.grid,
            time_grid=self.time_grid,
            base_field=self.potential.grad,
            base_profile=self.gamma,
            base_scale=self.strength,
            pert_stack=pert_stack,
            substeps=self.substeps,
        )


def build_infrastructure(
    geom: StripGeometry | None = None,
    h: float = 1.0 / 64.0,
    n_steps: int = 64,
    gamma_width: float = 0.1,
    gamma_amplitude: float = 1.0,
    strength: float | None = None,
    substeps: int = 4,
    k=(0.0, 1.0),
    tol: ControlTolerances | None = None,
    seed: int = 0,
) -> ReturnInfrastructure:
    """Solve the potential, certify flushing, and assemble the shared stack."""
    geom = geom or canonical_geometry()
    tol = tol or ControlTolerances()
    grid = build_grid(geom, h)
    time_grid = TimeGrid(n_steps=n_steps, t0=0.0, t1=1.0)
    potential = solve_return_potential(geom, grid)
    audit = audit_return_potential(potential, tol.gradient_floor)
    if not audit.passed:
        raise RuntimeError(f"return potential rejected: {audit.summary()}")
    gamma = make_gamma(gamma_width, gamma_amplitude)
    mu = make_mu()
    certificate = None
    if strength is None:
        certificate = select_flush_amplitude(potential, gamma, grid, time_grid, substeps=substeps)
        strength = certificate.strength
        logger.info(certificate.summary())
    ext_scalar = ExtensionOperator(grid, geom.omega, geom.omega2)
    ext_vector = ExtensionOperator(grid, geom.omega, geom.omega2)
    stream = StreamFunctionSolver(grid)
    return ReturnInfrastructure(
        geom=geom, grid=grid, time_grid=time_grid, potential=potential,
        gamma=gamma, mu=mu, strength=float(strength), certificate=certificate,
        ext_scalar=ext_scalar, ext_vector=ext_vector, stream=stream,
        k=tuple(k), substeps=substeps, tol=tol, seed=seed,
    )


# ---------------------------------------------------------------------------
# data intake
# ---------------------------------------------------------------------------

def check_velocity_data(y0, grid: Grid2D, scale_hint=None):
    """Contract check for initial velocities: solenoidal, no flux off gamma0."""
    h = grid.h
    scale = scale_hint or max(float(np.max(np.abs(y0))), 1e-30)
    div = div2d(y0[0], y0[1], h)
    div_tol = 50.0 * h ** 2 * scale / h  # O(h^2) consistency of the sampled field
    bad_div = float(np.max(np.abs(div[1:-1, 1:-1])))
    if bad_div > div_tol:
        raise ValueError(
            f"initial velocity violates the divergence-free contract: "
            f"max |div y0| = {bad_div:.3e} > {div_tol:.3e}"
        )
    geom = grid.geometry
    wall = [e for e in ("left", "right", "bottom", "top") if e not in geom.gamma0_edges]
    worst = 0.0
    for edge in wall:
        if edge == "left":
            worst = max(worst, float(np.max(np.abs(y0[0][:, 0]))))
        elif edge == "right":
            worst = max(worst, float(np.max(np.abs(y0[0][:, -1]))))
        elif edge == "bottom":
            worst = max(worst, float(np.max(np.abs(y0[1][0, :]))))
        elif edge == "top":
            worst = max(worst, float(np.max(np.abs(y0[1][-1, :]))))
    if worst > 1e-10 + 1e-6 * scale:
        raise ValueError(
            f"initial velocity has normal flux off gamma0: max |y0.n| = {worst:.3e}"
        )


def solenoidal_bump(grid: Grid2D, center, radius, amplitude):
    """Divergence-free named shape: perp-gradient of a radial bump, sup-normalized."""
    w = grid.window(grid.geometry.omega)
    X, Y = np.meshgrid(grid.xs[w.xslice], grid.ys[w.yslice])
    gx, gy = radial_bump_grad(X, Y, center, radius)
    sup = max(float(np.max(np.hypot(gy, gx))), 1e-300)
    return amplitude / sup * np.stack([gy, -gx])


def scalar_bump(grid: Grid2D, center, radius, amplitude):
    w = grid.window(grid.geometry.omega)
    X, Y = np.meshgrid(grid.xs[w.xslice], grid.ys[w.yslice])
    return radial_bump(X, Y, center, radius, amplitude)


# ---------------------------------------------------------------------------
# the fixed-point map
# ---------------------------------------------------------------------------

@dataclass
class MapResult:
    y: np.ndarray                # (n+1, 2, wy, wx) recovered velocity history
    theta: np.ndarray            # glued temperature on the omega window
    zeta: np.ndarray             # glued vorticity on the omega window
    theta_residual_omega2: float
    theta_residual_omega: float
    zeta_residual_omega: float
    zeta_residual_omega2: float
    psi_final: np.ndarray
    flux_audits: list


def fixed_point_map(infra: ReturnInfrastructure, y0, theta0, z_hist) -> MapResult:
    """One application  z -> y  of the control map for data (y0, theta0)."""
    tg = infra.time_grid
    n = tg.n_steps
    ybar = infra.ybar_history()
    pert = np.empty((n + 1, 2) + infra.grid.shape)
    for i in range(n + 1):
        pert[i] = infra.ext_vector.extend_vector(z_hist[i] - ybar[i])
    flow = infra.make_flow(pert_stack=pert)
    tracer = BackTracer(flow)

    tstage = temperature_stage(
        flow, theta0, infra.ext_scalar, flush_tol_rel=infra.tol.flush_tol_rel, tracer=tracer
    )
    vstage = vorticity_stage(
        flow, y0, tstage.theta_star, infra.ext_scalar, infra.ext_vector,
        k=infra.k, flush_tol_rel=infra.tol.flush_tol_rel, tracer=tracer,
    )

    y = np.empty_like(z_hist)
    audits = []
    psi = None
    mu_vals = infra.mu(tg.times)
    for i in range(n + 1):
        y_i, psi = recover_velocity(
            infra.stream, vstage.zeta_omega[i], vstage.zeta0_omega,
            ybar[i], y0, float(mu_vals[i]),
        )
        y[i] = y_i
        audits.append(boundary_flux_audit(y_i, infra.grid, infra.tol.flux_tol))
    return MapResult(
        y=y,
        theta=tstage.theta_omega,
        zeta=vstage.zeta_omega,
        theta_residual_omega2=tstage.residual_omega2,
        theta_residual_omega=tstage.residual_omega,
        zeta_residual_omega=vstage.residual_omega,
        zeta_residual_omega2=vstage.residual_omega2,
        psi_final=psi,
        flux_audits=audits,
    )


# ---------------------------------------------------------------------------
# local null control
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    k: int
    step_norm: float             # ||z_{k+1} - z_k|| in the (0,1,alpha) surrogate
    ball_norm: float             # ||z_{k+1} - ybar|| in the (0,2,alpha) surrogate
    theta_residual: float
    zeta_residual: float


@dataclass
class FixedPointReport:
    iterations: list = field(default_factory=list)
    converged: bool = False
    n_iterations: int = 0
    warnings: list = field(default_factory=list)

    def step_norms(self):
        return [r.step_norm for r in self.iterations]

    def csv_rows(self):
        rows = ["k,step_norm,ball_norm,theta_residual,zeta_residual"]
        for r in self.iterations:
            rows.append(
                f"{r.k},{r.step_norm:.17g},{r.ball_norm:.17g},"
                f"{r.theta_residual:.17g},{r.zeta_residual:.17g}"
            )
        return rows


@dataclass
class InflowRecord:
    t: float
    edge: str
    arc: float
    y1: float
    y2: float
    theta: float


@dataclass
class ControlTrace:
    times: np.ndarray
    flux: np.ndarray             # per-slab gamma0 net flux
    normal_velocity: dict        # edge -> (n+1, edge_len) arrays of y.n
    inflow: list                 # InflowRecord entries
    theta_gamma: np.ndarray | None = None   # kappa>0 runs: Dirichlet values on gamma

    def csv_rows(self):
        rows = ["t,edge,arc,y_n,inflow,y1,y2,theta"]
        for rec in self.inflow:
            rows.append(
                f"{rec.t:.17g},{rec.edge},{rec.arc:.17g},,1,"
                f"{rec.y1:.17g},{rec.y2:.17g},{rec.theta:.17g}"
            )
        return rows


def extract_controls(y_hist, theta_hist, grid: Grid2D, times, inflow_threshold=None) -> ControlTrace:
    """Sample the realized boundary controls on gamma0 from run histories."""
    geom = grid.geometry
    h = grid.h
    if inflow_threshold is None:
        inflow_threshold = h * 1e-6
    n = len(times)
    normal = {}
    flux = np.zeros(n)
    inflow = []
    for edge in geom.gamma0_edges:
        samples = []
        for i in range(n):
            yn, tangential = _edge_normal_velocity(y_hist[i], edge)
            samples.append(yn)
            arc = h * np.arange(yn.size)
            mask = yn < -inflow_threshold
            for j in np.nonzero(mask)[0]:
                y1, y2 = _edge_components(y_hist[i], edge, j)
                th = _edge_scalar(theta_hist[i], edge, j) if theta_hist is not None else 0.0
                inflow.append(InflowRecord(
                    t=float(times[i]), edge=edge, arc=float(arc[j]),
                    y1=float(y1), y2=float(y2), theta=float(th),
                ))
        normal[edge] = np.array(samples)
    for i in range(n):
        audit = boundary_flux_audit(y_hist[i], grid)
        flux[i] = audit.total
    return ControlTrace(times=np.asarray(times, dtype=float), flux=flux,
                        normal_velocity=normal, inflow=inflow)


def _edge_normal_velocity(y, edge):
    if edge == "left":
        return -y[0][:, 0], y[1][:, 0]
    if edge == "right":
        return y[0][:, -1], y[1][:, -1]
    if edge == "bottom":
        return -y[1][0, :], y[0][0, :]
    if edge == "top":
        return y[1][-1, :], y[0][-1, :]
    raise ValueError(f"unknown edge {edge!r}")


def _edge_components(y, edge, j):
    if edge == "left":
        return y[0][j, 0], y[1][j, 0]
    if edge == "right":
        return y[0][j, -1], y[1][j, -1]
    if edge == "bottom":
        return y[0][0, j], y[1][0, j]
    return y[0][-1, j], y[1][-1, j]


def _edge_scalar(f, edge, j):
    if edge == "left":
        return f[j, 0]
    if edge == "right":
        return f[j, -1]
    if edge == "bottom":
        return f[0, j]
    return f[-1, j]


@dataclass
class LocalRun:
    y: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray
    report: FixedPointReport
    trace: ControlTrace
    terminal_velocity_inf: float
    terminal_theta_inf: float
    terminal_zeta_inf: float
    theta_residual_omega2: float
    zeta_residual_omega2: float


def local_null_control(infra: ReturnInfrastructure, y0, theta0) -> LocalRun:
    """Picard iteration of the control map until the velocity history settles.

    Starts from z0 = ybar + mu * y0 and stops when the (0,1,alpha) step norm
    drops below fp_tol (or K_max is hit, reported as non-convergence).
    """
    tol = infra.tol
    grid = infra.grid
    tg = infra.time_grid
    h = grid.h
    check_velocity_data(y0, grid)
    ybar = infra.ybar_history()
    mu_vals = infra.mu(tg.times)
    z = np.array([ybar[i] + float(mu_vals[i]) * y0 for i in range(tg.n_steps + 1)])

    report = FixedPointReport()
    result = None
    converged = False
    for k in range(tol.k_max):
        result = fixed_point_map(infra, y0, theta0, z)
        diff = result.y - z
        step = time_sup_norm(diff, h, 1, tol.alpha, seed=infra.seed)
        ball = time_sup_norm(result.y - ybar, h, 2, tol.alpha, seed=infra.seed)
        report.iterations.append(IterationRecord(
            k=k + 1, step_norm=step, ball_norm=ball,
            theta_residual=result.theta_residual_omega2,
            zeta_residual=result.zeta_residual_omega,
        ))
        if ball > 2.0 * tol.nu:
            raise RuntimeError(
                f"iterate left the admissible ball: ||y - ybar||_(0,2,a) = {ball:.3e} "
                f"> 2 nu = {2 * tol.nu:.3e}; data too large for the local result"
            )
        if ball > tol.nu:
            msg = f"soft ball exit at iteration {k + 1}: {ball:.3e} > nu = {tol.nu:.3e}"
            report.warnings.append(msg)
            logger.warning(msg)
        z = result.y
        if step <= tol.fp_tol:
            converged = True
            break
    report.converged = converged
    report.n_iterations = len(report.iterations)
    if not converged:
        logger.warning("fixed-point iteration did not converge after %d steps", tol.k_max)

    trace = extract_controls(result.y, result.theta, grid, tg.times)
    n_half = tg.index_of(0.5)
    theta_tail = float(np.max(np.abs(result.theta[n_half:])))
    return LocalRun(
        y=result.y, theta=result.theta, zeta=result.zeta,
        report=report, trace=trace,
        terminal_velocity_inf=float(np.max(np.abs(result.y[-1]))),
        terminal_theta_inf=theta_tail,
        terminal_zeta_inf=float(np.max(np.abs(result.zeta[-1]))),
        theta_residual_omega2=result.theta_residual_omega2,
        zeta_residual_omega2=result.zeta_residual_omega2,
    )


# ---------------------------------------------------------------------------
# global exact control (scaling + time reversal)
# ---------------------------------------------------------------------------

@dataclass
class GlobalRun:
    times: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    epsilon: float
    leg_a: LocalRun
    leg_b: LocalRun
    terminal_velocity_error: float
    terminal_theta_error: float
    junction_jumps: tuple
    trace: ControlTrace


def _admissible_epsilon(T, norms, delta):
    """Largest dyadic fraction T/2^j (j >= 2) meeting the scaled-data bound."""
    ny0, nth0, ny1, nth1 = norms
    j = 2
    while j < 40:
        eps = T / 2 ** j
        if max(eps * ny0, eps ** 2 * nth0) <= delta and max(eps * ny1, eps ** 2 * nth1) <= delta:
            return eps
        j += 1
    raise RuntimeError(
        f"no admissible scaling epsilon: data norms {norms} vs delta={delta}; "
        "the limiting inequality is max(eps*|y|_2a, eps^2*|th|_2a) <= delta"
    )


def global_exact_control(infra: ReturnInfrastructure, y0, y1, theta0, theta1, T=1.0) -> GlobalRun:
    """Steer (y0, theta0) to (y1, theta1) over [0, T].

    Runs the local machinery on scaled data for a forward leg and a
    time-reversed leg, and assembles the three-piece trajectory: scaled leg on
    [0, eps], rest on (eps, T-eps), reversed scaled leg on [T-eps, T].
    """
    h = infra.grid.h
    alpha = infra.tol.alpha
    norms = (
        holder_norm(y0, h, 2, alpha).total,
        holder_norm(theta0, h, 2, alpha).total,
        holder_norm(y1, h, 2, alpha).total,
        holder_norm(theta1, h, 2, alpha).total,
    )
    eps = _admissible_epsilon(T, norms, infra.tol.delta_test)
    leg_a = local_null_control(infra, eps * y0, eps ** 2 * theta0)
    leg_b = local_null_control(infra, -eps * y1, eps ** 2 * theta1)

    tg = infra.time_grid
    taus = tg.times
    n = tg.n_steps
    times = np.concatenate([eps * taus, [0.5 * T], (T - eps * taus)[::-1]])
    ny, wy, wx = leg_a.y.shape[0], leg_a.y.shape[2], leg_a.y.shape[3]
    y_glued = np.zeros((2 * ny + 1, 2, wy, wx))
    th_glued = np.zeros((2 * ny + 1, wy, wx))
    y_glued[:ny] = leg_a.y / eps
    th_glued[:ny] = leg_a.theta / eps ** 2
    y_glued[ny + 1:] = -leg_b.y[::-1] / eps
    th_glued[ny + 1:] = leg_b.theta[::-1] / eps ** 2

    jump_a = float(np.max(np.abs(leg_a.y[-1]))) / eps
    jump_b = float(np.max(np.abs(leg_b.y[-1]))) / eps
    jump_a_th = float(np.max(np.abs(leg_a.theta[-1]))) / eps ** 2
    jump_b_th = float(np.max(np.abs(leg_b.theta[-1]))) / eps ** 2
    term_y = float(np.max(np.abs(y_glued[-1] - y1)))
    term_th = float(np.max(np.abs(th_glued[-1] - theta1)))
    trace = extract_controls(y_glued, th_glued, infra.grid, times)
    return GlobalRun(
        times=times, y=y_glued, theta=th_glued, epsilon=eps,
        leg_a=leg_a, leg_b=leg_b,
        terminal_velocity_error=term_y,
        terminal_theta_error=term_th,
        junction_jumps=(jump_a, jump_a_th, jump_b, jump_b_th),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# contraction measurement
# ---------------------------------------------------------------------------

def random_ball_member(infra: ReturnInfrastructure, y0, amplitude, rng):
    """A candidate velocity history: z0 plus a random solenoidal deviation."""
    grid = infra.grid
    geom = grid.geometry
    w = grid.window(geom.omega)
    X, Y = np.meshgrid(grid.xs[w.xslice], grid.ys[w.yslice])
    stream = np.zeros_like(X)
    for _ in range(3):
        cx = rng.uniform(geom.omega.x0 + 0.15, geom.omega.x1 - 0.15)
        cy = rng.uniform(geom.omega.y0 + 0.12, geom.omega.y1 - 0.12)
        rad = rng.uniform(0.08, 0.14)
        stream += rng.choice([-1.0, 1.0]) * radial_bump(X, Y, (cx, cy), rad)
    gx, gy = perp_grad(stream, grid.h)
    sup = max(float(np.max(np.hypot(gx, gy))), 1e-300)
    dev = amplitude / sup * np.stack([gx, gy])
    tg = infra.time_grid
    mu_vals = infra.mu(tg.times)
    ybar = infra.ybar_history()
    return np.array([ybar[i] + float(mu_vals[i]) * y0 + dev for i in range(tg.n_steps + 1)])


def measure_contraction(infra: ReturnInfrastructure, y0, theta0, n_pairs=5,
                        m_max=4, amplitude=2e-3, seed=7):
    """m-step contraction ratios of the map over random candidate pairs.

    Returns a list of per-pair ratio tuples (r_1, ..., r_m_max) with
    r_m = ||F^m z1 - F^m z2|| / ||z1 - z2|| in the (0,1,alpha) surrogate.
    """
    rng = np.random.default_rng(seed)
    h = infra.grid.h
    alpha = infra.tol.alpha
    ratios = []
    for _ in range(n_pairs):
        z1 = random_ball_member(infra, y0, amplitude, rng)
        z2 = random_ball_member(infra, y0, amplitude, rng)
        d0 = time_sup_norm(z1 - z2, h, 1, alpha, seed=infra.seed)
        row = []
        for _m in range(m_max):
            z1 = fixed_point_map(infra, y0, theta0, z1).y
            z2 = fixed_point_map(infra, y0, theta0, z2).y
            row.append(time_sup_norm(z1 - z2, h, 1, alpha, seed=infra.seed) / d0)
        ratios.append(tuple(row))
    return ratios
