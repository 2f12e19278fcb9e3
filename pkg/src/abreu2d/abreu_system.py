"""Coupled second boundary value problem: the (u, w) system

    scale_eps * U^ij D_ij w = -div((|Du|^2 + delta)^((q-2)/2) Du) + F0_z(x, u)
    w = (det D2u)^(-1),   u = phi,  w = psi  on the boundary

solved by damped Picard alternation between the linearized-MA solve for w and
the Monge-Ampere solve for u, with under-relaxation that halves itself when
the joint residual would increase.
"""

import time
from dataclasses import dataclass, field as dfield

import numpy as np

from .geometry import ScalarField, build_hessian_ops, gradient, hessian
from .linearized_ma import assemble_lma, f0z_term, qlap_rhs, solve_lma
from .monge_ampere import MAOptions, clamped_det, solve_ma

__all__ = ["AbreuProblem", "SBVPOptions", "AbreuSolution", "SolveReport",
           "AprioriChecks", "solve_sbvp", "abreu_residual", "apriori_check",
           "default_rhs"]


@dataclass
class AbreuProblem:
    domain: object
    q: float
    delta: float
    phi: object                      # boundary callable (x, y)
    psi: object                      # boundary callable, inf > 0
    F0z: object = None               # callable (x, y, z); None means 0
    scale_eps: float = 1.0

    def __post_init__(self):
        if self.q <= 1:
            raise ValueError("q must be > 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.q < 2 and self.delta == 0:
            raise ValueError("delta must be positive for q<2")
        if self.scale_eps <= 0:
            raise ValueError("scale_eps must be positive")
        if self.F0z is None:
            self.F0z = lambda x, y, z: np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class SBVPOptions:
    tol: float = 1e-7
    max_outer: int = 200
    relax: float = 0.5
    w_floor_factor: float = 1e-6
    stall_window: int = 25
    ma: MAOptions = dfield(default_factory=MAOptions)


@dataclass
class AprioriChecks:
    sup_abs_u: float = np.nan
    sup_grad_u: float = np.nan
    min_det: float = np.nan
    max_det: float = np.nan
    min_w_interior: float = np.nan
    min_w_boundary: float = np.nan
    grad_bound_ok: bool = False


@dataclass
class SolveReport:
    outer_iters: int = 0
    residual_history: list = dfield(default_factory=list)   # (r_u, r_w) sup norms
    damping_used: float = 1.0
    apriori: AprioriChecks = dfield(default_factory=AprioriChecks)
    wallclock: float = 0.0
    converged: bool = False
    stalled: bool = False
    w_floor_activated: bool = False
    domain_hypothesis_met: bool = True
    n: int = 0
    h: float = 0.0


@dataclass
class AbreuSolution:
    u: ScalarField
    w: ScalarField
    report: SolveReport


def _inf_psi(grid, psi):
    vals = []
    for d in range(4):
        iy, ix, px, py = grid.crossing_points(d)
        if len(ix):
            vals.append(np.min(psi(px, py)))
    if not vals:
        raise ValueError("no boundary crossings found")
    return float(min(vals))


def default_rhs(p, grid):
    """Right-hand side builder for the plain q-Laplacian problem."""
    def rhs(u):
        r = qlap_rhs(u, p.q, p.delta, boundary=p.phi)
        f0 = f0z_term(u, p.F0z)
        return ScalarField(grid, np.nan_to_num(r.values) + np.nan_to_num(f0.values))
    return rhs


def _det_plus(u, p, grid, clamp):
    dxx, dyy, dxy = build_hessian_ops(grid, p.phi, stencil="compact")
    uf = np.nan_to_num(u.values.ravel())
    a11 = dxx.M @ uf + dxx.b
    a22 = dyy.M @ uf + dyy.b
    a12 = dxy.M @ uf + dxy.b
    detp, _ = clamped_det(a11, a12, a22, clamp)
    return detp.reshape(grid.ny, grid.nx)


def abreu_residual(u, w, p, rhs_fn=None, clamp=1e-10):
    """(r1, r2): w-equation residual scale_eps*L_u w - RHS at INTERIOR nodes,
    and MA residual w*det+ D2u - 1 at inside nodes."""
    grid = u.grid
    if rhs_fn is None:
        rhs_fn = default_rhs(p, grid)
    op = assemble_lma(u, check_convex=False)
    Lw = op.apply(w)
    rhs = rhs_fn(u)
    r1 = np.full((grid.ny, grid.nx), np.nan)
    ii = grid.interior
    r1[ii] = p.scale_eps * Lw.values[ii] - rhs.values[ii]
    detp = _det_plus(u, p, grid, clamp)
    r2 = np.where(grid.inside, w.values * detp - 1.0, np.nan)
    return ScalarField(grid, r1), ScalarField(grid, r2)


def _joint_residual(u, w, p, rhs_fn, clamp):
    r1, r2 = abreu_residual(u, w, p, rhs_fn, clamp)
    s1 = float(np.nanmax(np.abs(r1.values)))
    s2 = float(np.nanmax(np.abs(r2.values)))
    return s1, s2, max(s1 / p.scale_eps, s2)


def solve_sbvp(p, grid, opts=None, rhs_fn=None, u0=None):
    """Damped Picard iteration for the coupled system on a prebuilt grid."""
    opts = opts or SBVPOptions()
    t0 = time.perf_counter()
    if rhs_fn is None:
        rhs_fn = default_rhs(p, grid)
    inf_psi = _inf_psi(grid, p.psi)
    if inf_psi <= 0:
        raise ValueError("inf psi on the boundary must be positive")
    w_floor = opts.w_floor_factor * inf_psi

    report = SolveReport(n=grid.nx, h=grid.h,
                         domain_hypothesis_met=grid.domain.uniformly_convex)
    ones = np.ones((grid.ny, grid.nx))
    if u0 is None:
        g0 = ScalarField(grid, ones * (1.0 / _mean_psi(grid, p.psi)))
        u, _ = solve_ma(grid, g0, p.phi, opts.ma)
    else:
        u = u0.copy()
    w = ScalarField(grid, ones * _mean_psi(grid, p.psi))

    s1, s2, joint = _joint_residual(u, w, p, rhs_fn, opts.ma.clamp)
    report.residual_history.append((s2, s1))
    best = (joint, u.copy(), w.copy())
    no_decrease = 0
    tau_used = opts.relax
    floor_hit = False

    for it in range(opts.max_outer):
        op = assemble_lma(u, check_convex=False)
        rhs = rhs_fn(u)
        rhs_scaled = ScalarField(grid, np.nan_to_num(rhs.values) / p.scale_eps)
        w_new = solve_lma(op, rhs_scaled, p.psi)
        wv = w_new.values.copy()
        low = grid.inside & (wv < w_floor)
        if low.any():
            floor_hit = True
            wv[low] = w_floor
            w_new = ScalarField(grid, wv)
        g = ScalarField(grid, np.where(grid.inside, 1.0 / w_new.values, np.nan))
        u_new, ma_rep = solve_ma(grid, g, p.phi, opts.ma, u0=u)

        du = float(np.nanmax(np.abs(u_new.values - u.values)))
        dw = float(np.nanmax(np.abs(w_new.values - w.values)))
        tau = opts.relax
        while True:
            u_c = ScalarField(grid, (1 - tau) * u.values + tau * u_new.values)
            w_c = ScalarField(grid, (1 - tau) * w.values + tau * w_new.values)
            s1c, s2c, joint_c = _joint_residual(u_c, w_c, p, rhs_fn, opts.ma.clamp)
            if joint_c <= joint or tau < 1e-3:
                break
            tau *= 0.5
        tau_used = tau
        u, w = u_c, w_c
        s1, s2, joint_new = _joint_residual(u, w, p, rhs_fn, opts.ma.clamp)
        report.residual_history.append((s2, s1))
        report.outer_iters = it + 1
        if joint_new < best[0]:
            best = (joint_new, u.copy(), w.copy())
            no_decrease = 0
        else:
            no_decrease += 1
        joint = joint_new
        if max(du, dw) <= opts.tol:
            report.converged = True
            break
        if no_decrease >= opts.stall_window:
            report.stalled = True
            break

    if report.stalled:
        _, u, w = best

    # consistency resolve: w from the final u so the reported w-equation
    # residual is the algebraic one
    op = assemble_lma(u, check_convex=False)
    rhs = rhs_fn(u)
    rhs_scaled = ScalarField(grid, np.nan_to_num(rhs.values) / p.scale_eps)
    w = solve_lma(op, rhs_scaled, p.psi)
    if np.any(w.values[grid.inside] < w_floor):
        floor_hit = True

    s1, s2, joint = _joint_residual(u, w, p, rhs_fn, opts.ma.clamp)
    report.residual_history.append((s2, s1))
    report.damping_used = tau_used
    report.w_floor_activated = floor_hit
    sol = AbreuSolution(u, w, report)
    report.apriori = apriori_check(sol, p)
    report.wallclock = time.perf_counter() - t0
    return sol


def _mean_psi(grid, psi):
    vals = []
    for d in range(4):
        iy, ix, px, py = grid.crossing_points(d)
        if len(ix):
            vals.append(psi(px, py))
    return float(np.mean(np.concatenate(vals))) if vals else 1.0


def apriori_check(sol, p):
    """Gradient bound, determinant bounds and minimum-of-w bookkeeping."""
    grid = sol.u.grid
    u = sol.u.values
    out = AprioriChecks()
    out.sup_abs_u = float(np.nanmax(np.abs(u[grid.inside])))
    Du = gradient(sol.u, boundary=p.phi)
    gnorm = np.hypot(Du.v1, Du.v2)
    out.sup_grad_u = float(np.nanmax(gnorm[grid.inside]))
    detp = _det_plus(sol.u, p, grid, 1e-10)
    out.min_det = float(np.nanmin(detp[grid.interior]))
    out.max_det = float(np.nanmax(detp[grid.interior]))
    out.min_w_interior = float(np.nanmin(sol.w.values[grid.interior]))
    if grid.badj.any():
        out.min_w_boundary = float(np.nanmin(sol.w.values[grid.badj]))

    # |Du(x)| <= (max phi on boundary - u(x)) / dist(x, boundary), with dist
    # bounded below by |rho| / sup|grad rho|
    phimax = -np.inf
    for d in range(4):
        iy, ix, px, py = grid.crossing_points(d)
        if len(ix):
            phimax = max(phimax, float(np.max(p.phi(px, py))))
    gx, gy = np.gradient(grid.rho_vals, grid.h)
    L = float(np.nanmax(np.hypot(gx, gy)))
    dist_lb = np.abs(grid.rho_vals) / max(L, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = (phimax - u) / dist_lb
    ok = gnorm[grid.interior] <= bound[grid.interior] * (1 + 1e-9) + 10 * grid.h ** 2
    out.grad_bound_ok = bool(np.all(ok))
    return out
