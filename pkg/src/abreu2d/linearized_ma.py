"""Linearized Monge-Ampere operator L_u w = U^ij D_ij w in divergence (flux) form.

Fluxes U^ij D_j w live on half-nodes (edges between adjacent inside nodes)
with cofactor coefficients averaged from the two endpoint nodes; the transverse
derivative at an edge averages the endpoint centered differences.  Assembly
goes through the discrete bilinear form, so the interior block is symmetric by
construction and rows sum to zero wherever no boundary data enters.

Dirichlet data psi is imposed through interpolation rows at BOUNDARY_ADJACENT
nodes; the equation rows live at INTERIOR nodes.
"""

import numpy as np
import scipy.sparse as sp

from ._linalg import SingularSystem, solve_sparse
from .geometry import (ScalarField, VectorField, _shift, boundary_closure,
                       cofactor, gradient, hessian)
from .monge_ampere import assert_convex

__all__ = ["LMAOperator", "NonConvexCoefficient", "SingularFlux",
           "assemble_lma", "solve_lma", "qlap_rhs", "f0z_term"]


class NonConvexCoefficient(ValueError):
    pass


class SingularFlux(ValueError):
    pass


def _edge_ops(grid, axis):
    """(D_along, A_transverse, cols_L, cols_R) for edges along `axis` with both
    endpoints inside.  D_along is the exact midpoint difference; A_transverse
    averages the endpoints' centered transverse differences, falling back to
    one-sided where a transverse neighbor is missing."""
    ny, nx = grid.ny, grid.nx
    n = grid.n_nodes
    h = grid.h
    inside = grid.inside
    step = 1 if axis == 0 else nx
    if axis == 0:
        pair = inside[:, :-1] & inside[:, 1:]
        iyL, ixL = np.nonzero(pair)
        kL = iyL * nx + ixL
    else:
        pair = inside[:-1, :] & inside[1:, :]
        iyL, ixL = np.nonzero(pair)
        kL = iyL * nx + ixL
    kR = kL + step
    ne = len(kL)
    e = np.arange(ne)
    D = sp.csr_matrix((np.concatenate([np.full(ne, -1.0 / h), np.full(ne, 1.0 / h)]),
                       (np.concatenate([e, e]), np.concatenate([kL, kR]))), shape=(ne, n))
    # transverse stencil per endpoint with centered/one-sided cascade
    t_step = nx if axis == 0 else 1
    ins = inside.ravel()
    rows, cols, vals = [], [], []
    for endpoint in (kL, kR):
        up_ok = np.zeros(ne, dtype=bool)
        dn_ok = np.zeros(ne, dtype=bool)
        up = endpoint + t_step
        dn = endpoint - t_step
        if t_step == 1:
            valid_up = (endpoint % nx) + 1 < nx
            valid_dn = (endpoint % nx) >= 1
        else:
            valid_up = up < n
            valid_dn = dn >= 0
        up_ok[valid_up] = ins[up[valid_up]]
        dn_ok[valid_dn] = ins[dn[valid_dn]]
        both = up_ok & dn_ok
        only_up = up_ok & ~dn_ok
        only_dn = dn_ok & ~up_ok
        w = 0.5  # endpoint averaging weight
        for mask, pts_w in ((both, [(up, w / (2 * h)), (dn, -w / (2 * h))]),
                            (only_up, [(up, w / h), (endpoint, -w / h)]),
                            (only_dn, [(endpoint, w / h), (dn, -w / h)])):
            if not mask.any():
                continue
            for pts, wt in pts_w:
                rows.append(e[mask])
                cols.append(pts[mask])
                vals.append(np.full(mask.sum(), wt))
    if rows:
        A = sp.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))), shape=(ne, n))
    else:
        A = sp.csr_matrix((ne, n))
    return D, A, kL, kR


class LMAOperator:
    def __init__(self, grid, cof, matrix, form, closure, closure_rhs_fn, pde_flat, edge_data):
        self.grid = grid
        self.cof = cof
        self.matrix = matrix            # full system rows (PDE + closure + identity)
        self.form = form                # symmetric bilinear form matrix M (energy)
        self.closure = closure
        self.closure_rhs_fn = closure_rhs_fn
        self.pde_flat = pde_flat
        self.edge_data = edge_data      # (Dx, Ax_t, Dy, Ay_t, coefficient diagonals)

    def apply(self, w):
        """L_u w at INTERIOR nodes (NaN elsewhere)."""
        grid = self.grid
        out = np.full(grid.n_nodes, np.nan)
        Lw = -(self.form @ np.nan_to_num(w.values.ravel())) / grid.h ** 2
        out[self.pde_flat] = Lw[self.pde_flat]
        return ScalarField(grid, out.reshape(grid.ny, grid.nx))

    def flux(self, w):
        """Edge fluxes (U^1j D_j w on x-edges, U^2j D_j w on y-edges)."""
        Dx, Ayx, Dy, Axy, (c11, c12x, c22, c12y) = self.edge_data
        wf = np.nan_to_num(w.values.ravel())
        fx = c11 * (Dx @ wf) + c12x * (Ayx @ wf)
        fy = c22 * (Dy @ wf) + c12y * (Axy @ wf)
        return fx, fy

    def energy_product(self, w, v):
        """Discrete integral of (U grad w) . grad v (the assembled bilinear form)."""
        wf = np.nan_to_num(w.values.ravel())
        vf = np.nan_to_num(v.values.ravel())
        return float(vf @ (self.form @ wf))

    def interior_matrix(self):
        L = -(self.form.tocsr()) / self.grid.h ** 2
        return L[self.pde_flat][:, self.pde_flat]

    def is_negative_definite(self):
        """Cholesky check of -L on the interior block (dense; test-scale grids)."""
        A = -self.interior_matrix().toarray()
        try:
            np.linalg.cholesky(A)
            return True
        except np.linalg.LinAlgError:
            return False


def assemble_lma(u, check_convex=True):
    """Flux-form assembly of w -> U^ij(u) D_ij w with psi-interpolation rows."""
    grid = u.grid
    if check_convex:
        ok, mn = assert_convex(u)
        if not ok:
            raise NonConvexCoefficient(f"coefficient field not convex (min eig {mn:.3e})")
    U = cofactor(hessian(u))
    u11 = np.nan_to_num(U.a11.ravel())
    u12 = np.nan_to_num(U.a12.ravel())
    u22 = np.nan_to_num(U.a22.ravel())

    Dx, Ayx, kLx, kRx = _edge_ops(grid, 0)
    Dy, Axy, kLy, kRy = _edge_ops(grid, 1)
    c11 = 0.5 * (u11[kLx] + u11[kRx])
    c12x = 0.5 * (u12[kLx] + u12[kRx])
    c22 = 0.5 * (u22[kLy] + u22[kRy])
    c12y = 0.5 * (u12[kLy] + u12[kRy])
    h2 = grid.h ** 2

    def dia(v):
        return sp.diags(v)

    form = h2 * (Dx.T @ dia(c11) @ Dx + Dy.T @ dia(c22) @ Dy
                 + 0.5 * (Dx.T @ dia(c12x) @ Ayx + Ayx.T @ dia(c12x) @ Dx)
                 + 0.5 * (Dy.T @ dia(c12y) @ Axy + Axy.T @ dia(c12y) @ Dy))
    form = sp.csr_matrix(form)

    pde_flat = np.flatnonzero(grid.interior.ravel())
    n = grid.n_nodes
    pde_sel = sp.csr_matrix((np.ones(len(pde_flat)), (pde_flat, pde_flat)), shape=(n, n))
    closure, rhs_fn, covered = boundary_closure(grid, grid.badj.ravel())
    dead = ~grid.inside.ravel() | (grid.badj.ravel() & ~covered)
    k = np.flatnonzero(dead)
    ext_eye = sp.csr_matrix((np.ones(len(k)), (k, k)), shape=(n, n))
    L = pde_sel @ (-(form) / h2) + closure + ext_eye
    edge_data = (Dx, Ayx, Dy, Axy, (c11, c12x, c22, c12y))
    return LMAOperator(grid, U, sp.csr_matrix(L), form, closure, rhs_fn, pde_flat, edge_data)


def solve_lma(op, f, psi):
    """Sparse direct solve of L_u w = f with w = psi at the rho=0 crossings."""
    grid = op.grid
    b = op.closure_rhs_fn(psi)
    b[op.pde_flat] = np.nan_to_num(f.values.ravel())[op.pde_flat]
    w = solve_sparse(op.matrix, b)
    res = op.matrix @ w - b
    rel = np.max(np.abs(res)) / max(np.max(np.abs(b)), 1e-30)
    if rel > 1e-10:
        raise SingularSystem(f"linear solve residual too large ({rel:.3e})")
    return ScalarField(grid, w.reshape(grid.ny, grid.nx))


def qlap_rhs(u, q, delta, boundary=None):
    """-div((|Du|^2 + delta)^((q-2)/2) Du) with the flux built from half-node
    averaged gradients.  Values at INTERIOR nodes; zero elsewhere inside."""
    if q <= 1:
        raise ValueError("q must be > 1")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    grid = u.grid
    Du = gradient(u, boundary)
    g1 = np.nan_to_num(Du.v1.ravel())
    g2 = np.nan_to_num(Du.v2.ravel())
    if q < 2 and delta == 0.0:
        mag = np.hypot(g1, g2)[grid.inside.ravel()]
        if np.any(mag < 1e-14):
            raise SingularFlux("flux coefficient singular: q < 2, delta = 0 and |Du| ~ 0")
    Dx, _, kLx, kRx = _edge_ops(grid, 0)
    Dy, _, kLy, kRy = _edge_ops(grid, 1)
    n = grid.n_nodes
    h = grid.h

    def edge_flux(kL, kR, comp):
        e1 = 0.5 * (g1[kL] + g1[kR])
        e2 = 0.5 * (g2[kL] + g2[kR])
        coef = (e1 * e1 + e2 * e2 + delta) ** ((q - 2.0) / 2.0)
        return coef * (e1 if comp == 0 else e2)

    fx = edge_flux(kLx, kRx, 0)
    fy = edge_flux(kLy, kRy, 1)
    # negative divergence of edge fluxes: -(F_{+1/2} - F_{-1/2}) / h per axis;
    # an edge is the plus-side edge of its left node and minus-side of its right
    out = np.zeros(n)
    np.add.at(out, kLx, -fx / h)
    np.add.at(out, kRx, fx / h)
    np.add.at(out, kLy, -fy / h)
    np.add.at(out, kRy, fy / h)
    vals = np.zeros(n)
    vals[grid.interior.ravel()] = out[grid.interior.ravel()]
    return ScalarField(grid, vals.reshape(grid.ny, grid.nx))


def f0z_term(u, F0z):
    """Pointwise F0_z(x, y, u(x, y))."""
    grid = u.grid
    return ScalarField(grid, F0z(grid.X, grid.Y, u.values))
