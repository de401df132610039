"""Bilinear coagulation operators on grid functions.

Both operators share the structure

    (1/x^2) * int_0^x dy  y**(1+s) g(y) * int_{x-y}^inf dz  z**(-s) h(z)

evaluated at all grid nodes for O(N^2) total cost.  The inner integrals come
from suffix moment tables of h (accumulated from the right, so exponentially
small values keep relative accuracy); the outer integral is split at y = x/2
and the upper half substituted t = x - y, which puts every power-type
endpoint singularity at the origin of its own log coordinate where the
composite rules are exact.  The split point sits at a fixed log offset below
each node, so both halves reuse one shifted prefix-weight matrix.

The constant-kernel operator uses s = 0; the power perturbation splits into
the two separable terms s = +alpha and s = -alpha.
"""
from __future__ import annotations

import numpy as np

from .grids import (Grid, GridFunction, _STENCIL_WEIGHTS, left_model_eval,
                    left_tail_cumulative, left_tail_double_cumulative)
from .kernels import KernelSpec

__all__ = ["CumulativeTable", "b2_apply", "bw_apply", "coag_rhs"]

_LOG_RATIO_CAP = 1e12  # log-space interpolation only on tame stencils


def _diff_interp_weights(grid: Grid):
    """Cubic Lagrange data for per-node tables at the node differences."""
    if "diff_w" not in grid._cache:
        D, k, t = grid.diff_table()
        wm1 = -t * (t - 1.0) * (t - 2.0) / 6.0
        w0 = (t * t - 1.0) * (t - 2.0) / 2.0
        w1 = -t * (t + 1.0) * (t - 2.0) / 2.0
        w2 = t * (t * t - 1.0) / 6.0
        grid._cache["diff_w"] = (D, k, np.maximum(k, 1), (wm1, w0, w1, w2))
    return grid._cache["diff_w"]


def _stencil_eval(table: np.ndarray, ks: np.ndarray, w4, prefer_log: bool):
    """Cubic combination of table[ks-1 .. ks+2] with the given weights.

    Positive tame stencils interpolate log(table) instead, which keeps
    relative accuracy through many orders of magnitude of decay.  The log
    table is formed once per call on the node vector, so the matrix-sized
    work stays at gathers plus one exp.
    """
    wm1, w0, w1, w2 = w4
    vm1, v0, v1, v2 = table[ks - 1], table[ks], table[ks + 1], table[ks + 2]
    lin = wm1 * vm1 + w0 * v0 + w1 * v1 + w2 * v2
    if not prefer_log:
        return lin
    lo = np.minimum(np.minimum(vm1, v0), np.minimum(v1, v2))
    hi = np.maximum(np.maximum(vm1, v0), np.maximum(v1, v2))
    pos = (lo > 0.0) & (hi < _LOG_RATIO_CAP * lo)
    if not np.any(pos):
        return lin
    lt = np.log(np.where(table > 0.0, table, 1.0))
    logv = wm1 * lt[ks - 1] + w0 * lt[ks] + w1 * lt[ks + 1] + w2 * lt[ks + 2]
    return np.where(pos, np.exp(np.where(pos, logv, 0.0)), lin)


def _table_interp(grid: Grid, table: np.ndarray, t, prefer_log: bool):
    """Evaluate a per-node table at arbitrary points clamped to the grid."""
    t = np.asarray(t, dtype=float)
    s = (np.log(np.maximum(t, grid.x_min)) - grid.log_nodes[0]) / grid.h
    s = np.minimum(s, grid.n - 1.0)
    k = np.clip(np.floor(s).astype(np.int64), 1, grid.n - 3)
    tf = s - k
    w4 = (-tf * (tf - 1.0) * (tf - 2.0) / 6.0,
          (tf * tf - 1.0) * (tf - 2.0) / 2.0,
          -tf * (tf + 1.0) * (tf - 2.0) / 2.0,
          tf * (tf * tf - 1.0) / 6.0)
    return _stencil_eval(table, k, w4, prefer_log)


def _half_prefix_weights(grid: Grid):
    """Quadrature rows for int over (x_min, x_i / 2) in the log coordinate.

    Row i is the prefix row ending at the last node below x_i/2 plus a
    partial-segment cubic covering the remainder; the fractional offset
    log(2)/h is the same for every node, so one stencil serves all rows.
    Rows below `i_lo` are left empty and handled by a dedicated small-x rule.
    """
    if "half_w" not in grid._cache:
        n, h = grid.n, grid.h
        delta = np.log(2.0) / h
        K = int(np.ceil(delta))
        fr = K - delta  # in [0, 1): cut position inside segment [J, J+1]
        def partial_stencil(nodes):
            # integrates the cubic through `nodes` over tau in (0, fr)
            out = np.empty(4)
            for m, tau0 in enumerate(nodes):
                roots = [r for r in nodes if r != tau0]
                c = np.poly(roots)
                c /= np.polyval(c, tau0)
                out[m] = np.polyval(np.polyint(c), fr) - np.polyval(np.polyint(c), 0.0)
            return out

        part = partial_stencil((-1.0, 0.0, 1.0, 2.0))
        part_edge = partial_stencil((-2.0, -1.0, 0.0, 1.0))  # when J+2 == n
        i_lo = K + 4
        W = np.zeros((n, n))
        Wpref = grid.prefix_weight_matrix()
        rows = np.arange(i_lo, n)
        W[rows] = Wpref[rows - K]
        sym = rows - K + 2 <= n - 1
        for m in range(4):
            W[rows[sym], rows[sym] - K - 1 + m] += h * part[m]
            W[rows[~sym], rows[~sym] - K - 2 + m] += h * part_edge[m]
        grid._cache["half_w"] = (W, i_lo)
    return grid._cache["half_w"]


_SUB_NODES = None


def _sub_rule():
    """Scale-free log rule on (1e-5, 1): nodes r and weights (Jacobian in).

    Integrates f over (c*1e-5, c) as c-independent weights applied to
    f(c*r) * (c*r), for any scale c.
    """
    global _SUB_NODES
    if _SUB_NODES is None:
        m = 96
        r = np.geomspace(1e-5, 1.0, m)
        hm = np.log(r[1] / r[0])
        w = np.zeros(m)
        sw = _STENCIL_WEIGHTS
        for j in range(m - 1):
            if j < 2:
                row, base = j, 0
            elif j < m - 3:
                row, base = 2, j - 2
            else:
                row, base = 3 + (j - (m - 3)), m - 6
            w[base : base + 6] += hm * sw[row]
        _SUB_NODES = (r, w)
    return _SUB_NODES


class CumulativeTable:
    """Suffix moment integrals R_s(x_i) = int_{x_i}^inf z**s h(z) dz.

    Built once per right operand h and shared by the outer integrals.
    Below x_min the tail model gives R_s in closed form; above x_max the
    exponential model does.  For h >= 0 interpolants are clamped to
    [0, R_s(0)]; signed inputs skip the clamps.
    """

    def __init__(self, h: GridFunction, exponents=(0.0,)):
        self.h = h
        self.grid = h.grid
        self.nonneg = bool(np.all(h.values >= 0.0))
        self.rev = {}
        self.below = {}  # s -> int_0^{x_min} z**s h under the left tail model
        g = self.grid
        for s in exponents:
            s = float(s)
            if h.left_tail_exponent + s + 1.0 <= 0.0:
                raise ValueError("inner moment not integrable near zero")
            values_u = h.values * g.nodes ** (s + 1.0)  # Jacobian included
            tail = h.scaled_by_power(s).right_tail_integral()
            self.rev[s] = g.reverse_cumulative(values_u, tail=tail,
                                               clamp_nonneg=self.nonneg)
            self.below[s] = float(left_tail_cumulative(h, s, g.x_min))

    def total(self, s: float) -> float:
        return float(self.rev[float(s)][0] + self.below[float(s)])

    def _below_eval(self, s: float, t: np.ndarray) -> np.ndarray:
        # R(t) = R(x_min) + int_t^{x_min} z**s h dz for t below the grid
        return (self.rev[s][0] + self.below[s]
                - left_tail_cumulative(self.h, s, t))

    def _clamp(self, s: float, vals: np.ndarray) -> np.ndarray:
        if self.nonneg:
            np.clip(vals, 0.0, self.total(s), out=vals)
        return vals

    def interior_matrix(self, s: float) -> np.ndarray:
        """R_s at the node differences x_i - x_j; zero where that is < x_min.

        The below-grid branch is never consumed by the split outer rule
        (its support keeps x_i - x_j >= x_i/2), so flagged entries are
        zeroed rather than modelled, keeping the operand matrices finite.
        """
        s = float(s)
        D, k, ks, w4 = _diff_interp_weights(self.grid)
        vals = _stencil_eval(self.rev[s], ks, w4, prefer_log=self.nonneg)
        vals = np.where(k < 0, 0.0, vals)
        return self._clamp(s, vals)

    def upper_at(self, s: float, t):
        """R_s(t) for arbitrary arguments t >= 0."""
        s = float(s)
        g = self.grid
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        vals = np.array(_table_interp(g, self.rev[s], t, prefer_log=self.nonneg),
                        copy=True)
        self._clamp(s, vals)
        small = t < g.x_min
        if np.any(small):
            vals[small] = self._below_eval(s, np.maximum(t[small], 0.0))
        big = t > g.x_max
        if np.any(big):
            h = self.h
            if np.isinf(h.right_tail_rate):
                vals[big] = 0.0
            else:
                r = h.right_tail_rate
                vals[big] = (h.values[-1] * t[big] ** s / r
                             * np.exp(-r * (t[big] - g.x_max)))
        return float(vals[0]) if scalar else vals


def _gridfunc_diff_matrix(g: GridFunction) -> np.ndarray:
    """g evaluated at the node differences; zero where they fall below x_min."""
    grid = g.grid
    D, k, ks, w4 = _diff_interp_weights(grid)
    pos = bool(np.all(g.values > 0.0))
    vals = _stencil_eval(g.values, ks, w4, prefer_log=pos)
    return np.where(k < 0, 0.0, vals)


def _small_rows(g: GridFunction, table: CumulativeTable, s_out: float,
                s_in: float, idx: np.ndarray) -> np.ndarray:
    """Direct split rule for nodes so close to x_min that no grid nodes fit
    under x_i/2: both halves on a scale-free log sub-grid plus closed-form
    pieces below the sub-grid cut."""
    grid = g.grid
    x = grid.nodes[idx]
    r, wr = _sub_rule()
    c = 0.5 * x
    Y = c[:, None] * r[None, :]
    XY = x[:, None] - Y
    gy = g.eval(Y.ravel()).reshape(Y.shape)
    gxy = g.eval(XY.ravel()).reshape(XY.shape)
    half1 = Y ** (1.0 + s_out) * gy * table.upper_at(s_in, XY)
    half2 = table.upper_at(s_in, Y) * XY ** (1.0 + s_out) * gxy
    core = ((half1 + half2) * Y) @ wr

    # below the sub-grid cut: frozen smooth factors, tail-model integrals
    cut = c * r[0]
    up_x = table.upper_at(s_in, x)
    bc1 = up_x * left_tail_cumulative(g, 1.0 + s_out, cut)
    total = table.total(s_in)
    int_R = cut * total - left_tail_double_cumulative(table.h, s_in, cut)
    bc2 = x ** (1.0 + s_out) * g.values[idx] * int_R
    return core + bc1 + bc2


def _convolve(g: GridFunction, table: CumulativeTable, s_out: float,
              s_in: float) -> np.ndarray:
    """Node values of int_0^x y**(1+s_out) g(y) [int_{x-y}^inf z**s_in h] dy."""
    grid = g.grid
    if g.left_tail_exponent + s_out + 2.0 <= 0.0:
        raise ValueError("outer integrand not integrable near zero")
    x = grid.nodes
    W, i_lo = _half_prefix_weights(grid)
    U = table.interior_matrix(s_in)
    G = _gridfunc_diff_matrix(g)
    D = _diff_interp_weights(grid)[0]
    phi = (x ** (2.0 + s_out) * g.values)[None, :] * U
    phi += (x * table.rev[float(s_in)])[None, :] * D ** (1.0 + s_out) * G
    core = np.einsum("ij,ij->i", W, phi)

    # grid-resolved halves stop at x_min on both axes; the strips
    # y < x_min and t < x_min use the tail models
    ym, wm, cut = grid.micro_tail_rule()
    g_tail = left_model_eval(g, ym)
    args = np.maximum(x[:, None] - ym[None, :], 0.0)
    micro1 = table.upper_at(s_in, args) @ (wm * ym ** (1.0 + s_out) * g_tail)
    bc1 = (float(left_tail_cumulative(g, 1.0 + s_out, cut))
           * table.upper_at(s_in, x))

    total = table.total(s_in)
    Rm = total - left_tail_cumulative(table.h, s_in, ym)
    gd = g.eval(np.maximum(args, grid.x_min).ravel()).reshape(args.shape)
    micro2 = (np.maximum(args, grid.x_min) ** (1.0 + s_out) * gd) @ (wm * Rm)
    int_R = cut * total - float(left_tail_double_cumulative(table.h, s_in, cut))
    bc2 = x ** (1.0 + s_out) * g.values * int_R

    out = core + micro1 + bc1 + micro2 + bc2
    idx = np.arange(min(i_lo, grid.n))
    out[idx] = _small_rows(g, table, s_out, s_in, idx)
    return out


def b2_apply(g: GridFunction, h: GridFunction) -> GridFunction:
    """Constant-kernel bilinear operator
    (2/x^2) int_0^x int_{x-y}^inf y g(y) h(z) dz dy."""
    if h.grid is not g.grid:
        raise ValueError("operands live on different grids")
    table = CumulativeTable(h, (0.0,))
    vals = 2.0 * _convolve(g, table, 0.0, 0.0) / g.grid.nodes ** 2
    return GridFunction(g.grid, vals)


def _bw_power(g: GridFunction, h: GridFunction, spec: KernelSpec) -> GridFunction:
    a = spec.alpha
    table = CumulativeTable(h, (-a, a))
    vals = _convolve(g, table, a, -a) + _convolve(g, table, -a, a)
    vals *= spec.c_star / g.grid.nodes ** 2
    return GridFunction(g.grid, vals)


def _bw_custom(g: GridFunction, h: GridFunction, spec: KernelSpec) -> GridFunction:
    """Direct route for arbitrary bounded W: per-row suffix integrals in z.

    Builds the dense table Q[j, m] = int_{x_m}^inf W(x_j, z) h(z) dz, one
    reverse cumulative per outer node, and integrates the outer variable in
    a single pass.  Adequate for bounded kernels; the separable power path
    is the accurate one and the default.
    """
    grid = g.grid
    if h.left_tail_exponent <= -1.0:
        raise ValueError("inner integrand not integrable near zero")
    x = grid.nodes
    W = np.asarray(spec.custom_w(x[:, None], x[None, :]), dtype=float)
    M = W * h.values[None, :]  # row j: z -> W(x_j, z) h(z)

    seg = np.stack([grid.segment_integrals(M[j] * x) for j in range(grid.n)])
    with np.errstate(divide="ignore", invalid="ignore"):
        rr = np.log(np.abs(M[:, -2] / M[:, -1])) / (x[-1] - x[-2])
        tail = np.where(np.isfinite(rr) & (rr > 0.0) & (M[:, -1] != 0.0),
                        M[:, -1] / np.where(rr > 0.0, rr, 1.0), 0.0)
    Q = np.empty_like(M)
    Q[:, -1] = tail
    Q[:, :-1] = tail[:, None] + np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]

    # row-wise power fit below x_min; bounded W keeps it near h's exponent
    with np.errstate(divide="ignore", invalid="ignore"):
        qrow = np.log(np.abs(M[:, 1] / M[:, 0])) / grid.h
    qrow = np.where(np.isfinite(qrow), qrow, h.left_tail_exponent)
    qe = np.maximum(qrow + 1.0, 1e-9)[None, :]

    D, k, ks, (wm1, w0, w1, w2) = _diff_interp_weights(grid)
    J = np.broadcast_to(np.arange(grid.n)[None, :], D.shape)
    interp = (wm1 * Q[J, ks - 1] + w0 * Q[J, ks]
              + w1 * Q[J, ks + 1] + w2 * Q[J, ks + 2])
    Dc = np.minimum(D, grid.x_min)
    rem = (M[:, 0][None, :] * grid.x_min / qe) * (1.0 - (Dc / grid.x_min) ** qe)
    upper = np.where(k < 0, Q[J, 0] + rem, interp)

    phi = (x ** 2 * g.values)[None, :] * upper
    core = np.einsum("ij,ij->i", grid.prefix_weight_matrix(), phi)

    ym, wm, cut = grid.micro_tail_rule()
    g_tail = left_model_eval(g, ym)
    args = np.maximum(x[:, None] - ym[None, :], grid.x_min)
    micro = grid.interp_nodal(Q[0], args) @ (wm * ym * g_tail)
    below_cut = (float(left_tail_cumulative(g, 1.0, cut))
                 * grid.interp_nodal(Q[0], np.maximum(x, grid.x_min)))
    vals = (core + micro + below_cut) / x ** 2
    return GridFunction(grid, vals)


def bw_apply(g: GridFunction, h: GridFunction, spec: KernelSpec) -> GridFunction:
    """Perturbation bilinear operator
    (1/x^2) int_0^x int_{x-y}^inf y W(y, z) g(y) h(z) dz dy."""
    if h.grid is not g.grid:
        raise ValueError("operands live on different grids")
    if spec.form == "power_symmetric":
        return _bw_power(g, h, spec)
    return _bw_custom(g, h, spec)


def coag_rhs(p: GridFunction, spec: KernelSpec) -> GridFunction:
    """Full right-hand side B2[p, p] + epsilon * BW[p, p]."""
    out = b2_apply(p, p)
    if spec.epsilon != 0.0:
        out = out + spec.epsilon * bw_apply(p, p, spec)
    return out
