"""Dirichlet Monge-Ampere solver: det D2u = g, u = phi on the boundary.

Damped Newton iteration on the clamped determinant det+ (discrete Hessian
eigenvalues floored at a small kappa before taking the product), so the
linearized operator stays elliptic far from the convex set.  The equation is
enforced at INTERIOR nodes; BOUNDARY_ADJACENT nodes carry Shortley-Weller
interpolation rows tying the value to phi at the rho=0 crossing along the
shortest cut direction.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._linalg import SingularSystem, solve_sparse
from .geometry import ScalarField, boundary_closure, build_hessian_ops, hessian

__all__ = ["MAOptions", "MAReport", "NonPositiveRHS", "SingularSystem",
           "solve_ma", "newton_step", "assert_convex", "clamped_det"]


class NonPositiveRHS(ValueError):
    pass


@dataclass
class MAOptions:
    tol: float = 1e-8
    max_newton: int = 100
    damping: float = 1.0          # initial step fraction
    clamp: float = 1e-10          # eigenvalue floor kappa

    def __post_init__(self):
        if self.tol <= 0 or self.max_newton < 1 or not (0 < self.damping <= 1):
            raise ValueError("bad MAOptions")


@dataclass
class MAReport:
    converged: bool = False
    stalled: bool = False
    iters: int = 0
    residual_history: list = field(default_factory=list)
    min_eig: float = np.nan
    wallclock: float = 0.0


def clamped_det(a11, a12, a22, kappa):
    """det+ and the cofactor of the clamped Hessian (the Newton coefficient)."""
    m = 0.5 * (a11 + a22)
    dd = 0.5 * (a11 - a22)
    s = np.sqrt(dd * dd + a12 * a12)
    lam1 = m - s
    lam2 = m + s
    l1c = np.maximum(lam1, kappa)
    l2c = np.maximum(lam2, kappa)
    detp = l1c * l2c
    s_safe = np.where(s > 0, s, 1.0)
    c2 = np.where(s > 0, dd / s_safe, 1.0)
    s2 = np.where(s > 0, a12 / s_safe, 0.0)
    # cofactor swaps the clamped eigenvalues on the eigenprojectors of H
    m11 = 0.5 * (l2c * (1 - c2) + l1c * (1 + c2))
    m22 = 0.5 * (l2c * (1 + c2) + l1c * (1 - c2))
    m12 = 0.5 * (l1c - l2c) * s2
    return detp, (m11, m12, m22)


class _MASystem:
    """Discrete rows for one (grid, phi) pair, shared by residual and Jacobian.

    The determinant equation is enforced at every inside node whose
    Shortley-Weller axis stencils exist (phi enters through the stencil
    offsets, and is exact on quadratics).  The rare sliver nodes where a
    stencil cannot be formed fall back to an interpolation row tying the value
    to phi at the nearest crossing.
    """

    def __init__(self, grid, phi, opts):
        self.grid = grid
        self.opts = opts
        self.n = grid.n_nodes
        self.dxx, self.dyy, self.dxy = build_hessian_ops(grid, phi, stencil="compact")
        row_ok = (np.abs(self.dxx.M).sum(axis=1).A1 + np.abs(self.dxx.b) > 0) \
            & (np.abs(self.dyy.M).sum(axis=1).A1 + np.abs(self.dyy.b) > 0)
        self.pde_mask = grid.inside.ravel() & row_ok
        self.pde_flat = np.flatnonzero(self.pde_mask)
        self.closure, rhs_fn, self.closure_mask = boundary_closure(
            grid, grid.badj.ravel() & ~self.pde_mask)
        self.closure_rhs = rhs_fn(phi)
        dead = ~grid.inside.ravel() | (grid.inside.ravel() & ~self.pde_mask
                                       & ~self.closure_mask)
        k = np.flatnonzero(dead)
        self.ext_eye = sp.csr_matrix((np.ones(len(k)), (k, k)), shape=(self.n, self.n))
        self.pde_sel = sp.csr_matrix((np.ones(len(self.pde_flat)),
                                      (self.pde_flat, self.pde_flat)), shape=(self.n, self.n))

    def hessian_arrays(self, u_flat):
        a11 = self.dxx.M @ u_flat + self.dxx.b
        a22 = self.dyy.M @ u_flat + self.dyy.b
        a12 = self.dxy.M @ u_flat + self.dxy.b
        return a11, a12, a22

    def residual(self, u_flat, g_flat):
        a11, a12, a22 = self.hessian_arrays(u_flat)
        detp, _ = clamped_det(a11, a12, a22, self.opts.clamp)
        r = np.zeros(self.n)
        r[self.pde_flat] = (detp - g_flat)[self.pde_flat]
        r += self.closure @ u_flat - self.closure_rhs
        return r

    def jacobian(self, u_flat):
        a11, a12, a22 = self.hessian_arrays(u_flat)
        _, (m11, m12, m22) = clamped_det(a11, a12, a22, self.opts.clamp)
        J = (sp.diags(m11) @ self.dxx.M + sp.diags(m22) @ self.dyy.M
             + sp.diags(2.0 * m12) @ self.dxy.M)
        return self.pde_sel @ J + self.closure + self.ext_eye


def _check_rhs(grid, g):
    gv = g.values
    if np.any(gv[grid.inside] <= 0) or np.any(~np.isfinite(gv[grid.inside])):
        raise NonPositiveRHS("g must be positive at all non-EXTERIOR nodes")


def _initial_iterate(system, g_flat):
    # Poisson surrogate: lap u0 = 2 sqrt(g), u0 = phi on the boundary (AM-GM in 2D)
    A = system.pde_sel @ (system.dxx.M + system.dyy.M) + system.closure + system.ext_eye
    b = np.zeros(system.n)
    b[system.pde_flat] = (2.0 * np.sqrt(g_flat) - (system.dxx.b + system.dyy.b))[system.pde_flat]
    b += system.closure_rhs
    return solve_sparse(A, b)


def solve_ma(grid, g, phi, opts=None, u0=None):
    """Damped Newton solve of det+ D2u = g with u = phi at rho=0 crossings.

    u0, when given, warm-starts Newton; the default initial iterate solves the
    Poisson surrogate."""
    opts = opts or MAOptions()
    _check_rhs(grid, g)
    t0 = time.perf_counter()
    system = _MASystem(grid, phi, opts)
    g_flat = np.nan_to_num(g.values.ravel())
    if u0 is not None:
        u = np.nan_to_num(u0.values.ravel())
    else:
        u = _initial_iterate(system, g_flat)
    report = MAReport()
    r = system.residual(u, g_flat)
    sup = float(np.max(np.abs(r)))
    report.residual_history.append(sup)
    best_u, best_sup = u.copy(), sup
    for it in range(opts.max_newton):
        if sup <= opts.tol:
            report.converged = True
            break
        J = system.jacobian(u)
        delta = solve_sparse(J, -r)
        tau = opts.damping
        accepted = False
        while tau >= 1e-6:
            u_try = u + tau * delta
            r_try = system.residual(u_try, g_flat)
            sup_try = float(np.max(np.abs(r_try)))
            if sup_try <= (1.0 - 1e-4 * tau) * sup:
                u, r, sup = u_try, r_try, sup_try
                accepted = True
                break
            tau *= 0.5
        report.iters = it + 1
        if not accepted:
            report.stalled = True
            break
        report.residual_history.append(sup)
        if sup < best_sup:
            best_u, best_sup = u.copy(), sup
    else:
        pass
    if not report.converged and sup <= opts.tol:
        report.converged = True
    if not report.converged:
        u = best_u if best_sup < sup else u
    uf = ScalarField(grid, u.reshape(grid.ny, grid.nx))
    ok, mn = assert_convex(uf)
    report.min_eig = mn
    report.wallclock = time.perf_counter() - t0
    return uf, report


def newton_step(u, g, phi, opts=None):
    """One Newton correction: solves U^ij(u) D_ij delta = g - det+ D2u with
    delta = 0 on the boundary rows; returns (delta, residual sup-norm)."""
    opts = opts or MAOptions()
    grid = u.grid
    system = _MASystem(grid, phi, opts)
    g_flat = np.nan_to_num(g.values.ravel())
    u_flat = np.nan_to_num(u.values.ravel())
    r = system.residual(u_flat, g_flat)
    delta = solve_sparse(system.jacobian(u_flat), -r)
    sup = float(np.max(np.abs(r[system.pde_flat]))) if len(system.pde_flat) else 0.0
    return ScalarField(grid, delta.reshape(grid.ny, grid.nx)), sup


def assert_convex(u):
    """(ok, min eigenvalue of the discrete Hessian over INTERIOR nodes)."""
    H = hessian(u)
    lo, _ = H.eigenvalues()
    vals = lo[u.grid.interior]
    mn = float(np.min(vals)) if vals.size else np.nan
    return bool(mn >= -1e-8), mn
