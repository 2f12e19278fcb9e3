"""Convex domains, uniform grids with boundary classification, and discrete calculus.

Nodes are classified INTERIOR (all four axis neighbors strictly inside),
BOUNDARY_ADJACENT (inside, but at least one axis neighbor outside; fractional
crossing distances theta are stored per cut direction), or EXTERIOR.  Fields
hold NaN at EXTERIOR nodes.

Derivative operators are exposed both as field->field functions and as affine
sparse operators (matrix plus boundary-data offset) so solvers can reuse the
same stencils for residuals and Jacobians.
"""

from collections import namedtuple

import numpy as np
import scipy.sparse as sp

EXTERIOR = 0
INTERIOR = 1
BOUNDARY_ADJACENT = 2

# direction order used throughout: +x, -x, +y, -y
DIR_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))

_THETA_TOL = 1e-12      # crossing located to 1e-12*h by bisection
_BISECT_ITERS = 48


class EmptyInteriorError(ValueError):
    pass


class ConvexDomain:
    """Convex region {rho < 0} with rho = 0 on the boundary.

    rho must be callable on numpy arrays (x, y).  inner_rho, when given,
    defines a compactly contained subregion Omega_0 with the same convention.
    """

    def __init__(self, rho, bbox, inner_rho=None, uniformly_convex=True, name="custom",
                 params=None):
        self.rho = rho
        self.bbox = tuple(float(v) for v in bbox)
        self.inner_rho = inner_rho
        self.uniformly_convex = bool(uniformly_convex)
        self.name = name
        self.params = dict(params or {})
        xmin, xmax, ymin, ymax = self.bbox
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("degenerate bounding box")

    def with_inner(self, inner_rho):
        return ConvexDomain(self.rho, self.bbox, inner_rho=inner_rho,
                            uniformly_convex=self.uniformly_convex,
                            name=self.name, params=self.params)


def disk(r=1.0, cx=0.0, cy=0.0):
    def rho(x, y):
        return (x - cx) ** 2 + (y - cy) ** 2 - r * r
    bbox = (cx - r, cx + r, cy - r, cy + r)
    return ConvexDomain(rho, bbox, uniformly_convex=True, name="disk",
                        params={"r": r, "cx": cx, "cy": cy})


def square(a=1.0, cx=0.0, cy=0.0):
    # merely convex: corners, and rho = 0 along grid-aligned sides
    def rho(x, y):
        return np.maximum(np.abs(x - cx), np.abs(y - cy)) - a
    bbox = (cx - a, cx + a, cy - a, cy + a)
    return ConvexDomain(rho, bbox, uniformly_convex=False, name="square",
                        params={"a": a, "cx": cx, "cy": cy})


def superellipse(p=4.0, r=1.0, cx=0.0, cy=0.0):
    if p < 2:
        raise ValueError("superellipse exponent must be >= 2")
    def rho(x, y):
        return (np.abs(x - cx) / r) ** p + (np.abs(y - cy) / r) ** p - 1.0
    bbox = (cx - r, cx + r, cy - r, cy + r)
    return ConvexDomain(rho, bbox, uniformly_convex=(p == 2.0), name="superellipse",
                        params={"p": p, "r": r, "cx": cx, "cy": cy})


def hull_domain(points, pad=0.0):
    """Convex polygon through the hull of sample points, as a defining function.

    Used for dual grids over gradient images; rho is the max of the hull's
    normalized edge affine functions (negative inside).
    """
    from scipy.spatial import ConvexHull

    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    eqs = hull.equations  # rows (a, b, c): a x + b y + c <= 0 inside
    norms = np.hypot(eqs[:, 0], eqs[:, 1])
    A = eqs[:, :2] / norms[:, None]
    c = eqs[:, 2] / norms

    def rho(x, y):
        vals = A[0, 0] * x + A[0, 1] * y + c[0] + pad * 0.0
        for k in range(1, len(c)):
            vals = np.maximum(vals, A[k, 0] * x + A[k, 1] * y + c[k])
        return vals + pad

    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    return ConvexDomain(rho, (xmin, xmax, ymin, ymax), uniformly_convex=False,
                        name="hull", params={"npoints": len(pts)})


class Grid2D:
    """Uniform grid over the domain bounding box with node classification."""

    def __init__(self, domain, nx, ny, h, xs, ys, node_class, theta, rho_vals):
        self.domain = domain
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(h)
        self.xs = xs
        self.ys = ys
        self.X, self.Y = np.meshgrid(xs, ys)
        self.node_class = node_class
        self.theta = theta                      # (4, ny, nx), NaN where not cut
        self.rho_vals = rho_vals
        self.inside = node_class != EXTERIOR
        self.interior = node_class == INTERIOR
        self.badj = node_class == BOUNDARY_ADJACENT
        self.n_nodes = self.nx * self.ny
        if domain.inner_rho is not None:
            self.inner_inside = domain.inner_rho(self.X, self.Y) < 0
        else:
            self.inner_inside = None
        self._cache = {}

    @property
    def bbox(self):
        return (float(self.xs[0]), float(self.xs[-1]), float(self.ys[0]), float(self.ys[-1]))

    def flat(self, iy, ix):
        return iy * self.nx + ix

    def crossing_points(self, d):
        """Coordinates of rho=0 crossings for cut direction d at BOUNDARY_ADJACENT nodes."""
        dx, dy = DIR_STEPS[d]
        th = self.theta[d]
        cut = np.isfinite(th)
        iy, ix = np.nonzero(cut)
        px = self.xs[ix] + th[iy, ix] * self.h * dx
        py = self.ys[iy] + th[iy, ix] * self.h * dy
        return iy, ix, px, py


def _shift(arr, dix, diy, fill):
    """Shift so result[iy, ix] = arr[iy + diy, ix + dix], padding with fill."""
    out = np.full_like(arr, fill)
    ny, nx = arr.shape
    xs_src = slice(max(dix, 0), nx + min(dix, 0))
    xs_dst = slice(max(-dix, 0), nx + min(-dix, 0))
    ys_src = slice(max(diy, 0), ny + min(diy, 0))
    ys_dst = slice(max(-diy, 0), ny + min(-diy, 0))
    out[ys_dst, xs_dst] = arr[ys_src, xs_src]
    return out


def build_grid(domain, n):
    """Classify nodes and locate boundary crossings for an n-node-wide grid.

    Spacing is equal in both axes; the y-range is expanded symmetrically to the
    nearest multiple of h when the bbox aspect requires it.
    """
    if n < 5:
        raise ValueError("need n >= 5")
    xmin, xmax, ymin, ymax = domain.bbox
    h = (xmax - xmin) / (n - 1)
    my = int(np.ceil((ymax - ymin) / h - 1e-12))
    extra = (my * h - (ymax - ymin)) / 2.0
    ymin -= extra
    ymax += extra
    nx, ny = n, my + 1
    xs = xmin + h * np.arange(nx)
    ys = ymin + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    rho_vals = domain.rho(X, Y)
    inside = rho_vals < 0
    if not inside.any():
        raise EmptyInteriorError("empty interior")

    nb_inside = [_shift(inside, dx, dy, False) for dx, dy in DIR_STEPS]
    interior = inside & nb_inside[0] & nb_inside[1] & nb_inside[2] & nb_inside[3]
    if not interior.any():
        raise EmptyInteriorError("empty interior")
    node_class = np.zeros((ny, nx), dtype=np.int8)
    node_class[inside] = BOUNDARY_ADJACENT
    node_class[interior] = INTERIOR

    theta = np.full((4, ny, nx), np.nan)
    badj = inside & ~interior
    for d, (dx, dy) in enumerate(DIR_STEPS):
        cut = badj & ~nb_inside[d]
        if not cut.any():
            continue
        iy, ix = np.nonzero(cut)
        x0 = xs[ix]
        y0 = ys[iy]
        # bisection for the unique sign change of rho along the grid segment
        lo = np.zeros(len(ix))
        hi = np.ones(len(ix))
        r_hi = domain.rho(x0 + h * dx, y0 + h * dy)
        exact = r_hi == 0.0
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            r_mid = domain.rho(x0 + mid * h * dx, y0 + mid * h * dy)
            neg = r_mid < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        t = 0.5 * (lo + hi)
        t[exact] = 1.0
        theta[d, iy, ix] = t
    return Grid2D(domain, nx, ny, h, xs, ys, node_class, theta, rho_vals)


# ---------------------------------------------------------------------------
# fields


class _FieldBase:
    kind = None

    def __init__(self, grid):
        self.grid = grid

    def _mask_exterior(self, arr):
        arr = np.asarray(arr, dtype=float).copy()
        arr[~self.grid.inside] = np.nan
        return arr


class ScalarField(_FieldBase):
    kind = "scalar"

    def __init__(self, grid, values):
        super().__init__(grid)
        self.values = self._mask_exterior(values)

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.X, grid.Y))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.ny, grid.nx)))

    def sample(self, iy, ix):
        if self.grid.node_class[iy, ix] == EXTERIOR:
            raise ValueError("read at EXTERIOR node")
        return self.values[iy, ix]

    def copy(self):
        return ScalarField(self.grid, self.values)

    @property
    def components(self):
        return (self.values,)


class VectorField(_FieldBase):
    kind = "vector"

    def __init__(self, grid, v1, v2):
        super().__init__(grid)
        self.v1 = self._mask_exterior(v1)
        self.v2 = self._mask_exterior(v2)

    @property
    def components(self):
        return (self.v1, self.v2)

    def norm(self):
        return ScalarField(self.grid, np.hypot(self.v1, self.v2))


class SymMatField(_FieldBase):
    """Symmetric 2x2 per node; only one off-diagonal entry is stored."""

    kind = "symmat"

    def __init__(self, grid, a11, a12, a22):
        super().__init__(grid)
        self.a11 = self._mask_exterior(a11)
        self.a12 = self._mask_exterior(a12)
        self.a22 = self._mask_exterior(a22)

    @property
    def components(self):
        return (self.a11, self.a12, self.a22)

    def eigenvalues(self):
        m = 0.5 * (self.a11 + self.a22)
        s = np.sqrt(0.25 * (self.a11 - self.a22) ** 2 + self.a12 ** 2)
        return m - s, m + s

    def det(self):
        return ScalarField(self.grid, self.a11 * self.a22 - self.a12 ** 2)

    def trace(self):
        return ScalarField(self.grid, self.a11 + self.a22)


AffineOp = namedtuple("AffineOp", ["M", "b"])
# AffineOp applies u -> M @ u_flat + b; rows are zero at nodes the stencil
# does not cover (EXTERIOR, or degenerate slivers).


def _apply(op, u_flat):
    return op.M @ u_flat + op.b


def _boundary_values(grid, boundary, d):
    """Evaluate Dirichlet data at the rho=0 crossings in direction d (flat array)."""
    vals = np.zeros((grid.ny, grid.nx))
    iy, ix, px, py = grid.crossing_points(d)
    if len(ix):
        vals[iy, ix] = boundary(px, py)
    return vals


class _Coo:
    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, rows, cols, vals):
        self.rows.append(np.asarray(rows, dtype=np.int64))
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=float))

    def matrix(self, n):
        if not self.rows:
            return sp.csr_matrix((n, n))
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        return sp.csr_matrix(sp.coo_matrix((v, (r, c)), shape=(n, n)))


def _axis_arrays(grid, axis):
    """Per-axis helpers: flat stride, plus/minus-neighbor inside masks, thetas."""
    if axis == 0:
        stride = 1
        plus_d, minus_d = 0, 1
    else:
        stride = grid.nx
        plus_d, minus_d = 2, 3
    inside = grid.inside
    step = DIR_STEPS[plus_d]
    p_in = _shift(inside, step[0], step[1], False)
    m_in = _shift(inside, -step[0], -step[1], False)
    p2_in = _shift(inside, 2 * step[0], 2 * step[1], False)
    m2_in = _shift(inside, -2 * step[0], -2 * step[1], False)
    th_p = grid.theta[plus_d]
    th_m = grid.theta[minus_d]
    return stride, p_in, m_in, p2_in, m2_in, th_p, th_m


def _first_derivative_op(grid, axis, boundary=None):
    """d/dx or d/dy: centered at interior, Shortley-Weller 3-point with boundary
    data at cut nodes, one-sided interior differences otherwise."""
    h = grid.h
    n = grid.n_nodes
    stride, p_in, m_in, _, _, th_p, th_m = _axis_arrays(grid, axis)
    inside = grid.inside
    coo = _Coo()
    b = np.zeros(n)
    idx = np.arange(n).reshape(grid.ny, grid.nx)

    centered = inside & p_in & m_in
    k = idx[centered]
    coo.add(k, k + stride, np.full(len(k), 1.0 / (2 * h)))
    coo.add(k, k - stride, np.full(len(k), -1.0 / (2 * h)))

    cut_p = inside & ~p_in
    cut_m = inside & ~m_in
    if boundary is not None:
        bd_p = _boundary_values(grid, boundary, 0 if axis == 0 else 2).ravel()
        bd_m = _boundary_values(grid, boundary, 1 if axis == 0 else 3).ravel()
        # one cut side, interior on the other: nonuniform 3-point formula
        for sgn, cut, other_in, th in ((+1, cut_p & m_in, m_in, th_p),
                                       (-1, cut_m & p_in, p_in, th_m)):
            if not cut.any():
                continue
            k = idx[cut]
            t = th.ravel()[k]
            a = h            # interior arm
            bb = t * h       # boundary arm
            # value at distance bb on the cut side, interior node at distance a opposite
            w_far = a * a / (a * bb * (a + bb))
            w_near = -bb * bb / (a * bb * (a + bb))
            w_c = (bb * bb - a * a) / (a * bb * (a + bb))
            coo.add(k, k - sgn * stride, sgn * w_near)
            coo.add(k, k, sgn * w_c)
            bd = bd_p if sgn > 0 else bd_m
            b[k] += sgn * w_far * bd[k]
        both = cut_p & cut_m
        if both.any():
            k = idx[both]
            tp = th_p.ravel()[k] * h
            tm = th_m.ravel()[k] * h
            w_p = tm / (tp * (tp + tm))
            w_m = -tp / (tm * (tp + tm))
            w_c = (tp - tm) / (tp * tm)
            coo.add(k, k, w_c)
            b[k] += bd_p[k] * w_p + bd_m[k] * w_m
    else:
        # one-sided interior differences at cut nodes
        for sgn, cut in ((+1, cut_p & m_in), (-1, cut_m & p_in)):
            if not cut.any():
                continue
            k = idx[cut]
            coo.add(k, k, np.full(len(k), sgn * 1.0 / h))
            coo.add(k, k - sgn * stride, np.full(len(k), -sgn * 1.0 / h))
    return AffineOp(coo.matrix(n), b)


def _second_derivative_op(grid, axis, boundary=None, stencil="wide"):
    """d2/dx2 or d2/dy2.

    stencil "wide" composes centered first differences (exact discrete
    commutation with the mixed derivative, used by the cofactor identity);
    "compact" is the 3-point form used by the solvers.  Both fall back to
    Shortley-Weller arms with boundary data at cut nodes, then to shifted
    interior stencils.
    """
    h = grid.h
    n = grid.n_nodes
    stride, p_in, m_in, p2_in, m2_in, th_p, th_m = _axis_arrays(grid, axis)
    inside = grid.inside
    coo = _Coo()
    b = np.zeros(n)
    idx = np.arange(n).reshape(grid.ny, grid.nx)
    covered = np.zeros((grid.ny, grid.nx), dtype=bool)

    if stencil == "wide":
        wide = inside & p2_in & m2_in & p_in & m_in
        if wide.any():
            k = idx[wide]
            w = 1.0 / (4 * h * h)
            coo.add(k, k + 2 * stride, np.full(len(k), w))
            coo.add(k, k - 2 * stride, np.full(len(k), w))
            coo.add(k, k, np.full(len(k), -2 * w))
            covered |= wide

    compact = inside & p_in & m_in & ~covered
    if compact.any():
        k = idx[compact]
        w = 1.0 / (h * h)
        coo.add(k, k + stride, np.full(len(k), w))
        coo.add(k, k - stride, np.full(len(k), w))
        coo.add(k, k, np.full(len(k), -2 * w))
        covered |= compact

    cut_p = inside & ~p_in & ~covered
    cut_m = inside & ~m_in & ~covered
    if boundary is not None:
        bd_p = _boundary_values(grid, boundary, 0 if axis == 0 else 2).ravel()
        bd_m = _boundary_values(grid, boundary, 1 if axis == 0 else 3).ravel()
        one_p = cut_p & m_in
        one_m = cut_m & p_in & ~one_p
        for sgn, mask, th, bd in ((+1, one_p, th_p, bd_p), (-1, one_m, th_m, bd_m)):
            if not mask.any():
                continue
            k = idx[mask]
            t = th.ravel()[k]
            a = h
            bb = t * h
            w_far = 2.0 / (bb * (a + bb))
            w_near = 2.0 / (a * (a + bb))
            w_c = -2.0 / (a * bb)
            coo.add(k, k - sgn * stride, w_near)
            coo.add(k, k, w_c)
            b[k] += w_far * bd[k]
            covered.ravel()[k] = True
        both = cut_p & cut_m & ~covered
        if both.any():
            k = idx[both]
            tp = th_p.ravel()[k] * h
            tm = th_m.ravel()[k] * h
            coo.add(k, k, -2.0 / (tp * tm))
            b[k] += 2.0 * bd_p[k] / (tp * (tp + tm)) + 2.0 * bd_m[k] / (tm * (tp + tm))
            covered.ravel()[k] = True

    # shifted interior stencil (first order) where a side is missing
    for sgn, mask2 in ((+1, m_in & m2_in), (-1, p_in & p2_in)):
        rem = inside & ~covered & mask2
        if not rem.any():
            continue
        k = idx[rem]
        w = 1.0 / (h * h)
        coo.add(k, k, np.full(len(k), w))
        coo.add(k, k - sgn * stride, np.full(len(k), -2 * w))
        coo.add(k, k - sgn * 2 * stride, np.full(len(k), w))
        covered |= rem
    return AffineOp(coo.matrix(n), b)


def build_gradient_ops(grid, boundary=None):
    key = ("grad", id(boundary))
    hit = grid._cache.get(key)
    if hit is None or hit[0] is not boundary:
        ops = (_first_derivative_op(grid, 0, boundary),
               _first_derivative_op(grid, 1, boundary))
        grid._cache[key] = (boundary, ops)
        return ops
    return hit[1]


def _mixed_derivative_op(grid):
    """4-point centered cross stencil; one-sided quadrant crosses (averaged over
    the available quadrants, all exact on quadratics) where diagonal neighbors
    are missing.  Dirichlet data does not enter the mixed derivative."""
    h = grid.h
    n = grid.n_nodes
    inside = grid.inside
    idx = np.arange(n).reshape(grid.ny, grid.nx)
    coo = _Coo()
    diag = {(sx, sy): _shift(inside, sx, sy, False) for sx in (-1, 1) for sy in (-1, 1)}
    ax = {(s, 0): _shift(inside, s, 0, False) for s in (-1, 1)}
    ay = {(0, s): _shift(inside, 0, s, False) for s in (-1, 1)}
    full = inside & diag[(1, 1)] & diag[(1, -1)] & diag[(-1, 1)] & diag[(-1, -1)]
    if full.any():
        k = idx[full]
        w = 1.0 / (4 * h * h)
        for sx in (-1, 1):
            for sy in (-1, 1):
                coo.add(k, k + sx + sy * grid.nx, np.full(len(k), sx * sy * w))
    rest = inside & ~full
    if rest.any():
        quads = {}
        for sx in (-1, 1):
            for sy in (-1, 1):
                quads[(sx, sy)] = rest & diag[(sx, sy)] & ax[(sx, 0)] & ay[(0, sy)]
        n_avail = sum(q.astype(int) for q in quads.values())
        ok = n_avail > 0
        for (sx, sy), q in quads.items():
            m = q & ok
            if not m.any():
                continue
            k = idx[m]
            w = (sx * sy) / (h * h) / n_avail[m]
            coo.add(k, k + sx + sy * grid.nx, w)
            coo.add(k, k + sx, -w)
            coo.add(k, k + sy * grid.nx, -w)
            coo.add(k, k, w)
    return AffineOp(coo.matrix(n), np.zeros(n))


def build_hessian_ops(grid, boundary=None, stencil="wide"):
    """(Dxx, Dyy, Dxy) affine operators."""
    key = ("hess", id(boundary), stencil)
    hit = grid._cache.get(key)
    if hit is None or hit[0] is not boundary:
        ops = (_second_derivative_op(grid, 0, boundary, stencil),
               _second_derivative_op(grid, 1, boundary, stencil),
               _mixed_derivative_op(grid))
        grid._cache[key] = (boundary, ops)
        return ops
    return hit[1]


def gradient(f, boundary=None):
    """First derivatives; second order at INTERIOR nodes, Shortley-Weller at
    cut nodes when Dirichlet data is supplied."""
    grid = f.grid
    ops = build_gradient_ops(grid, boundary)
    u = np.nan_to_num(f.values.ravel())
    return VectorField(grid, _apply(ops[0], u).reshape(grid.ny, grid.nx),
                       _apply(ops[1], u).reshape(grid.ny, grid.nx))


def hessian(f, boundary=None, stencil="wide"):
    grid = f.grid
    dxx, dyy, dxy = build_hessian_ops(grid, boundary, stencil)
    u = np.nan_to_num(f.values.ravel())
    sh = (grid.ny, grid.nx)
    return SymMatField(grid, _apply(dxx, u).reshape(sh), _apply(dxy, u).reshape(sh),
                       _apply(dyy, u).reshape(sh))


def cofactor(H):
    """2x2 cofactor: swaps diagonal entries and negates the off-diagonal."""
    return SymMatField(H.grid, H.a22, -H.a12, H.a11)


def divergence(V, staggered=False):
    """div V by centered differences; the staggered flag averages fluxes to
    half-nodes first, which coincides with the centered form at interior nodes
    and is the adjoint pairing used for variational right-hand sides."""
    grid = V.grid
    ops = build_gradient_ops(grid, None)
    v1 = np.nan_to_num(V.v1.ravel())
    v2 = np.nan_to_num(V.v2.ravel())
    out = _apply(ops[0], v1) + _apply(ops[1], v2)
    return ScalarField(grid, out.reshape(grid.ny, grid.nx))


_REGIONS = ("omega", "omega0", "omega_minus_omega0")


def _cell_weights(grid, region):
    key = ("cellw", region)
    if key in grid._cache:
        return grid._cache[key]
    if region != "omega" and grid.inner_inside is None:
        raise ValueError("region %r needs inner_rho" % region)
    h = grid.h
    # 4x4 midpoint subsample of every cell
    off = (np.arange(4) + 0.5) / 4.0
    ox, oy = np.meshgrid(off, off)
    cx = grid.xs[:-1]
    cy = grid.ys[:-1]
    CX, CY = np.meshgrid(cx, cy)
    frac = np.zeros((grid.ny - 1, grid.nx - 1))
    for k in range(16):
        px = CX + ox.ravel()[k] * h
        py = CY + oy.ravel()[k] * h
        in_om = grid.domain.rho(px, py) < 0
        if region == "omega":
            frac += in_om
        else:
            in_0 = grid.domain.inner_rho(px, py) < 0
            if region == "omega0":
                frac += in_om & in_0
            else:
                frac += in_om & ~in_0
    w = frac / 16.0 * h * h
    grid._cache[key] = w
    return w


def integrate(f, region="omega"):
    """Cell-weighted midpoint rule; cells cut by the zero level set are
    weighted by a 4x4 subsampled inside fraction."""
    if region not in _REGIONS:
        raise ValueError("unknown region %r" % region)
    grid = f.grid
    w = _cell_weights(grid, region)
    v = f.values
    corners = np.stack([v[:-1, :-1], v[:-1, 1:], v[1:, :-1], v[1:, 1:]])
    good = ~np.isnan(corners)
    cnt = good.sum(axis=0)
    total = np.where(good, corners, 0.0).sum(axis=0)
    cellval = np.where(cnt > 0, total / np.maximum(cnt, 1), 0.0)
    return float(np.sum(w * cellval))


def interior_eigenvalue_range(H):
    """(min over INTERIOR of the smaller eigenvalue, its location is not kept)."""
    lo, _ = H.eigenvalues()
    vals = lo[H.grid.interior]
    return float(np.min(vals)) if len(vals) else np.nan


def boundary_closure(grid, which):
    """Dirichlet interpolation rows for the nodes in `which` (flat bool mask).

    Each covered node gets a linear-interpolation row along its least-theta cut
    direction: through the rho=0 crossing and the opposite inner neighbor when
    it exists, else through the two crossings of that axis.  Returns
    (matrix, rhs_fn, covered) with rhs_fn(data) evaluating the boundary
    callable at the stored crossings.
    """
    n = grid.n_nodes
    ny, nx = grid.ny, grid.nx
    rows, cols, vals = [], [], []
    r_row, r_cf, r_px, r_py = [], [], [], []
    covered = np.zeros(n, dtype=bool)
    for k in np.flatnonzero(which):
        iy, ix = divmod(k, nx)
        cuts = [(grid.theta[d, iy, ix], d) for d in range(4)
                if np.isfinite(grid.theta[d, iy, ix])]
        if not cuts:
            continue
        t, d = min(cuts, key=lambda c: (c[0], c[1]))
        dx, dy = DIR_STEPS[d]
        px = grid.xs[ix] + t * grid.h * dx
        py = grid.ys[iy] + t * grid.h * dy
        oy, ox = iy - dy, ix - dx
        covered[k] = True
        d_op = {0: 1, 1: 0, 2: 3, 3: 2}[d]
        if 0 <= oy < ny and 0 <= ox < nx and grid.inside[oy, ox]:
            rows += [k, k]
            cols += [k, oy * nx + ox]
            vals += [1.0, -t / (1.0 + t)]
            r_row.append(k)
            r_cf.append(1.0 / (1.0 + t))
            r_px.append(px)
            r_py.append(py)
        elif np.isfinite(grid.theta[d_op, iy, ix]):
            t_op = grid.theta[d_op, iy, ix]
            rows.append(k)
            cols.append(k)
            vals.append(1.0)
            r_row += [k, k]
            r_cf += [t_op / (t + t_op), t / (t + t_op)]
            r_px += [px, grid.xs[ix] - t_op * grid.h * dx]
            r_py += [py, grid.ys[iy] - t_op * grid.h * dy]
        else:
            rows.append(k)
            cols.append(k)
            vals.append(1.0)
            r_row.append(k)
            r_cf.append(1.0)
            r_px.append(px)
            r_py.append(py)
    mat = sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))
    r_row = np.asarray(r_row, dtype=np.int64)
    r_cf = np.asarray(r_cf)
    r_px = np.asarray(r_px)
    r_py = np.asarray(r_py)

    def rhs_fn(data):
        rhs = np.zeros(n)
        if len(r_row):
            np.add.at(rhs, r_row, r_cf * data(r_px, r_py))
        return rhs

    return mat, rhs_fn, covered
