"""Natural cubic smoothing splines with exact curvature energy.

Fits minimize ``sum w_i*(y_i - s(x_i))**2 + lam * integral(s''(x)**2)``
over natural cubic splines. Small problems are solved with the classical
banded second-derivative (Reinsch) system; large ones are projected onto
a reduced set of quantile-spaced knots, which keeps the penalized normal
equations at a few hundred unknowns regardless of the data size. The
smoothing parameter can be fixed or selected by generalized
cross-validation on a deterministic logarithmic grid; repeated fits on
fixed abscissae can reuse a :class:`SplineDesign`.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import FitError

# GCV grid: 50 log-spaced multipliers around span**3 / n
GCV_GRID_DECADES = 6.0
GCV_GRID_POINTS = 50

# eigendecomposition-based effective df is skipped above this system size
_DF_MAX_SYSTEM = 500


@dataclass(frozen=True, eq=False)
class CubicSpline:
    """Piecewise cubic with linear extrapolation beyond the end knots.

    On interval i the spline is ``a[i] + b[i]*u + c[i]*u**2 + d[i]*u**3``
    with ``u = x - knots[i]``. Outside the knot range the boundary value
    and slope are continued linearly. ``df`` and ``lam`` are fit
    diagnostics (smoother-matrix trace and penalty actually used); they
    do not affect evaluation and are dropped by table serialization.
    """

    knots: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    natural: bool = True
    df: float | None = field(default=None, compare=False)
    lam: float | None = field(default=None, compare=False)

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        for name in ("a", "b", "c", "d"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        m = knots.size
        if m < 2:
            raise FitError("a cubic spline needs at least 2 knots")
        if not np.all(np.isfinite(knots)) or np.any(np.diff(knots) <= 0):
            raise FitError("knots must be finite and strictly increasing")
        for name in ("a", "b", "c", "d"):
            arr = getattr(self, name)
            if arr.shape != (m - 1,):
                raise FitError(f"coefficient array {name!r} must have length {m - 1}")
            if not np.all(np.isfinite(arr)):
                raise FitError(f"coefficient array {name!r} contains nonfinite values")
        self._check_continuity()
        for name in ("knots", "a", "b", "c", "d"):
            getattr(self, name).setflags(write=False)

    def _check_continuity(self, rtol=1e-9):
        a, b, c, d = self.a, self.b, self.c, self.d
        if self.knots.size > 2:
            h = np.diff(self.knots)[:-1]
            val_left = a[:-1] + b[:-1] * h + c[:-1] * h**2 + d[:-1] * h**3
            der_left = b[:-1] + 2 * c[:-1] * h + 3 * d[:-1] * h**2
            sec_left = 2 * c[:-1] + 6 * d[:-1] * h
            scale = max(np.max(np.abs(a)), 1.0)
            if np.any(np.abs(val_left - a[1:]) > rtol * scale):
                raise FitError("spline values are discontinuous at interior knots")
            dscale = max(np.max(np.abs(b)), 1.0)
            if np.any(np.abs(der_left - b[1:]) > rtol * dscale):
                raise FitError("spline first derivative is discontinuous at interior knots")
            sscale = max(np.max(np.abs(2 * c)), np.max(np.abs(sec_left)), 1.0)
            if np.any(np.abs(sec_left - 2 * c[1:]) > rtol * sscale):
                raise FitError("spline second derivative is discontinuous at interior knots")
        if self.natural:
            h_last = self.knots[-1] - self.knots[-2]
            end_sec = 2 * c[-1] + 6 * d[-1] * h_last
            span = self.knots[-1] - self.knots[0]
            nat_scale = max(np.max(np.abs(2 * c)), abs(end_sec), 1.0 / span)
            if abs(2 * c[0]) > 1e-8 * nat_scale or abs(end_sec) > 1e-8 * nat_scale:
                raise FitError("natural spline must have zero second derivative at end knots")

    @property
    def domain(self):
        return float(self.knots[0]), float(self.knots[-1])

    def _boundary(self):
        h_last = self.knots[-1] - self.knots[-2]
        val = self.a[-1] + self.b[-1] * h_last + self.c[-1] * h_last**2 + self.d[-1] * h_last**3
        slope = self.b[-1] + 2 * self.c[-1] * h_last + 3 * self.d[-1] * h_last**2
        return float(val), float(slope)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xf = np.atleast_1d(x)
        t = self.knots
        idx = np.clip(np.searchsorted(t, xf, side="right") - 1, 0, t.size - 2)
        u = xf - t[idx]
        out = self.a[idx] + u * (self.b[idx] + u * (self.c[idx] + u * self.d[idx]))
        below = xf < t[0]
        if np.any(below):
            out[below] = self.a[0] + self.b[0] * (xf[below] - t[0])
        above = xf > t[-1]
        if np.any(above):
            val, slope = self._boundary()
            out[above] = val + slope * (xf[above] - t[-1])
        return float(out[0]) if scalar else out.reshape(x.shape)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xf = np.atleast_1d(x)
        t = self.knots
        idx = np.clip(np.searchsorted(t, xf, side="right") - 1, 0, t.size - 2)
        u = xf - t[idx]
        out = self.b[idx] + u * (2 * self.c[idx] + 3 * u * self.d[idx])
        below = xf < t[0]
        if np.any(below):
            out[below] = self.b[0]
        above = xf > t[-1]
        if np.any(above):
            out[above] = self._boundary()[1]
        return float(out[0]) if scalar else out.reshape(x.shape)

    def curvature_energy(self):
        """Exact integral of s''(x)**2 over the knot span.

        s'' is linear on each piece, so each segment integrates in
        closed form; the linear extrapolation zones contribute nothing.
        """
        h = np.diff(self.knots)
        c, d = self.c, self.d
        return float(np.sum(4 * c**2 * h + 12 * c * d * h**2 + 12 * d**2 * h**3))

    def derivative_range(self):
        """Exact (min, max) of s' over the knot span."""
        h = np.diff(self.knots)
        ends = np.concatenate([self.derivative(self.knots[:-1]), [self._boundary()[1]]])
        lo, hi = float(np.min(ends)), float(np.max(ends))
        # interior extremum of the quadratic derivative at u* = -c/(3d)
        with np.errstate(divide="ignore", invalid="ignore"):
            u_star = -self.c / (3 * self.d)
        inside = np.isfinite(u_star) & (u_star > 0) & (u_star < h)
        if np.any(inside):
            u = u_star[inside]
            vals = self.b[inside] + 2 * self.c[inside] * u + 3 * self.d[inside] * u**2
            lo = min(lo, float(np.min(vals)))
            hi = max(hi, float(np.max(vals)))
        return lo, hi

    def is_monotonic(self):
        lo, hi = self.derivative_range()
        return lo >= 0.0 or hi <= 0.0

    @classmethod
    def affine(cls, lo, hi, intercept, slope):
        if not hi > lo:
            raise FitError("affine spline needs hi > lo")
        return cls(
            knots=np.array([lo, hi], dtype=float),
            a=np.array([intercept + slope * lo]),
            b=np.array([slope]),
            c=np.zeros(1),
            d=np.zeros(1),
        )

    @classmethod
    def identity(cls, lo, hi):
        return cls.affine(lo, hi, 0.0, 1.0)

    def to_table(self):
        """Serialize as a plain-text table: knot, a, b, c, d per row.

        The final row carries the last knot with the boundary value and
        slope so the extrapolation behaviour round-trips.
        """
        val, slope = self._boundary()
        lines = ["knot\ta\tb\tc\td"]
        for i in range(self.knots.size - 1):
            lines.append("\t".join(repr(float(v)) for v in
                                   (self.knots[i], self.a[i], self.b[i], self.c[i], self.d[i])))
        lines.append("\t".join(repr(float(v)) for v in
                               (self.knots[-1], val, slope, 0.0, 0.0)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text, natural=True):
        rows = []
        for line in io.StringIO(text):
            line = line.strip()
            if not line or line.startswith("knot"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FitError("spline table rows must have 5 columns")
            rows.append([float(p) for p in parts])
        if len(rows) < 2:
            raise FitError("spline table must have at least 2 knot rows")
        arr = np.asarray(rows)
        return cls(knots=arr[:, 0], a=arr[:-1, 1], b=arr[:-1, 2],
                   c=arr[:-1, 3], d=arr[:-1, 4], natural=natural)


@dataclass(frozen=True)
class SplineFitSpec:
    """Controls for a smoothing-spline fit.

    ``lam=None`` requests GCV selection. ``weights``, when given, must be
    positive and aligned with the data. ``max_knots`` caps the system
    size; beyond it knots are thinned to quantiles of the abscissae.
    ``max_df`` optionally inflates the penalty until the smoother's
    effective degrees of freedom drop to the cap.
    """

    lam: float | None = None
    weights: np.ndarray | None = None
    max_knots: int = 200
    max_df: float | None = None

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise FitError("fixed lam must be positive")
        if self.max_knots < 4:
            raise FitError("max_knots must be at least 4")
        if self.max_df is not None and not self.max_df > 2:
            raise FitError("max_df must exceed 2 (an affine fit)")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise FitError("weights must be a 1-D positive finite array")
            object.__setattr__(self, "weights", w)


def _validated_xw(x, weights):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 4:
        raise FitError("need at least 4 data points")
    if not np.all(np.isfinite(x)):
        raise FitError("abscissae must be finite")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != x.size:
            raise FitError("weights length does not match data")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise FitError("weights must be positive and finite")
    return x, w


def _validated_y(y, n):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n:
        raise FitError(f"x and y lengths differ: {n} vs {y.size}")
    if not np.all(np.isfinite(y)):
        raise FitError("y must be finite")
    return y


def _second_difference_matrices(t):
    """Banded R (tridiagonal) and the sparse second-difference map Q.

    R is the Gram matrix of second derivatives at interior knots;
    Q maps knot values to scaled second differences, so the natural
    spline conditions read Q.T a = R g with g the interior s'' values.
    """
    h = np.diff(t)
    m = t.size
    r_main = (h[:-1] + h[1:]) / 3.0
    r_off = h[1:-1] / 6.0
    rows = np.repeat(np.arange(m - 2), 3)
    cols = rows + np.tile([0, 1, 2], m - 2)
    p = 1.0 / h
    vals = np.stack([p[:-1], -p[:-1] - p[1:], p[1:]], axis=1).ravel()
    q = sparse.csc_matrix((vals, (cols, rows)), shape=(m, m - 2))
    return h, r_main, r_off, q


def _apply_q(h, g_interior):
    """Compute Q @ g for interior second-derivative values g."""
    g = np.concatenate([[0.0], g_interior, [0.0]])
    d1 = np.diff(g) / h
    return np.diff(np.concatenate([[0.0], d1, [0.0]]))


def _solve_r(r_main, r_off, rhs):
    ab = np.zeros((2, r_main.size))
    ab[0, 1:] = r_off
    ab[1] = r_main
    return sla.solveh_banded(ab, rhs)


def _coefficients(t, values, g_full):
    h = np.diff(t)
    a = values[:-1]
    c = g_full[:-1] / 2.0
    d = np.diff(g_full) / (6.0 * h)
    b = np.diff(values) / h - h * (2.0 * g_full[:-1] + g_full[1:]) / 6.0
    return a, b, c, d


def natural_interpolant(x, y):
    """Natural cubic spline through the given points (no smoothing)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.diff(x) <= 0):
        raise FitError("interpolation abscissae must be strictly increasing")
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return CubicSpline.affine(x[0], x[1], y[0] - slope * x[0], slope)
    h, r_main, r_off, q = _second_difference_matrices(x)
    g = _solve_r(r_main, r_off, q.T @ y)
    g_full = np.concatenate([[0.0], g, [0.0]])
    a, b, c, d = _coefficients(x, y, g_full)
    return CubicSpline(knots=x, a=a, b=b, c=c, d=d)


def _reinsch_solve(t, y, w, lam):
    """Classic banded solve with knots at every data point."""
    h, r_main, r_off, q = _second_difference_matrices(t)
    m = t.size
    p = 1.0 / h
    inv_w = 1.0 / w
    q0 = p[:-1]
    q1 = -p[:-1] - p[1:]
    q2 = p[1:]
    diag = q0**2 * inv_w[: m - 2] + q1**2 * inv_w[1 : m - 1] + q2**2 * inv_w[2:]
    off1 = q1[:-1] * q0[1:] * inv_w[1 : m - 2] + q2[:-1] * q1[1:] * inv_w[2 : m - 1]
    off2 = q2[:-2] * q0[2:] * inv_w[2 : m - 2]
    ab = np.zeros((3, m - 2))
    ab[0, 2:] = lam * off2
    ab[1, 1:] = r_off + lam * off1
    ab[2] = r_main + lam * diag
    g = sla.solveh_banded(ab, q.T @ y)
    values = y - lam * inv_w * _apply_q(h, g)
    # re-derive s'' from the fitted values (identical in exact
    # arithmetic); avoids the lam-scaled roundoff of the solve above
    g = _solve_r(r_main, r_off, q.T @ values)
    g_full = np.concatenate([[0.0], g, [0.0]])
    return values, g_full


def _thin_knots(x_sorted, max_knots):
    qs = np.linspace(0.0, 1.0, max_knots)
    t = np.unique(np.quantile(x_sorted, qs))
    # clustered data puts several quantiles inside one cluster; knots
    # closer than a fraction of the span only burn df and condition the
    # penalty badly, so enforce a minimum separation
    span = t[-1] - t[0]
    min_sep = span / (4.0 * max_knots)
    kept = [t[0]]
    for v in t[1:-1]:
        if v - kept[-1] >= min_sep and t[-1] - v >= min_sep:
            kept.append(v)
    kept.append(t[-1])
    t = np.asarray(kept)
    if t.size < 4:
        raise FitError("could not place at least 4 distinct knots")
    return t


class SplineDesign:
    """Penalized-regression design reusable across target vectors.

    The knot layout, the normal-equation blocks, and the eigen machinery
    for GCV/df depend only on the abscissae and weights, so repeated
    fits against changing targets (as in alternating schemes) amortize
    all of that work.
    """

    def __init__(self, x, weights=None, max_knots=200):
        x, w = _validated_xw(x, weights)
        self.n_input = x.size
        order = np.argsort(x, kind="stable")
        xs, ws = x[order], w[order]
        self._order = order
        self.span = float(xs[-1] - xs[0])
        if self.span <= 0:
            raise FitError("degenerate abscissa range")
        # abscissae within a small fraction of the span count as ties
        # (standard smoothing-spline practice; keeps knots separated)
        tol = 1e-6 * self.span
        new_group = np.empty(xs.size, dtype=bool)
        new_group[0] = True
        new_group[1:] = np.diff(xs) > tol
        gidx = np.cumsum(new_group) - 1
        n_distinct = int(gidx[-1]) + 1
        if n_distinct < 4:
            raise FitError("need at least 4 distinct abscissae")

        if n_distinct <= max_knots:
            self.mode = "full"
            self._gidx = gidx
            self._ws = ws
            self._wm = np.bincount(gidx, weights=ws)
            self.t = np.bincount(gidx, weights=ws * xs) / self._wm
            self.n_system = self.t.size
        else:
            self.mode = "reduced"
            self.t = _thin_knots(xs, max_knots)
            self._xs = xs
            self._ws = ws
            self._build_reduced()
            self.n_system = xs.size
        self._eig = None
        self._factor = None

    def _build_reduced(self):
        t = self.t
        h, r_main, r_off, q = _second_difference_matrices(t)
        m = t.size
        self._c_map = _solve_r(r_main, r_off, q.T.toarray())
        xs, ws = self._xs, self._ws
        idx = np.clip(np.searchsorted(t, xs, side="right") - 1, 0, m - 2)
        u = xs - t[idx]
        hj = h[idx]
        v = t[idx + 1] - xs
        n = xs.size
        rows = np.repeat(np.arange(n), 2)
        cols = np.stack([idx, idx + 1], axis=1).ravel()
        p_vals = np.stack([v / hj, u / hj], axis=1).ravel()
        self._p_mat = sparse.csr_matrix((p_vals, (rows, cols)), shape=(n, m))
        s_vals = np.stack([-u * v * (hj + v) / (6.0 * hj),
                           -u * v * (hj + u) / (6.0 * hj)], axis=1).ravel()
        s_mat = sparse.csr_matrix((s_vals, (rows, cols)), shape=(n, m))
        self._s_int = s_mat[:, 1 : m - 1].tocsr()

        wdiag = sparse.diags(ws)
        ptwp = (self._p_mat.T @ wdiag @ self._p_mat).toarray()
        ptws = (self._p_mat.T @ wdiag @ self._s_int).toarray()
        stws = (self._s_int.T @ wdiag @ self._s_int).toarray()
        c = self._c_map
        self._b_mat = ptwp + ptws @ c + c.T @ ptws.T + c.T @ stws @ c
        r_dense = np.diag(r_main)
        if r_off.size:
            r_dense += np.diag(r_off, 1) + np.diag(r_off, -1)
        self._k_mat = c.T @ (r_dense @ c)

    def _blocks(self):
        if self.mode == "full":
            if not hasattr(self, "_k_mat"):
                h, r_main, r_off, q = _second_difference_matrices(self.t)
                self._c_map = _solve_r(r_main, r_off, q.T.toarray())
                r_dense = np.diag(r_main)
                if r_off.size:
                    r_dense += np.diag(r_off, 1) + np.diag(r_off, -1)
                self._k_mat = self._c_map.T @ (r_dense @ self._c_map)
                self._b_mat = np.diag(self._wm)
            return self._b_mat, self._k_mat
        return self._b_mat, self._k_mat

    def _eigen(self):
        """Cached (chol(B), eigvals, eigvecs) of the whitened penalty."""
        if self._eig is None:
            b_mat, k_mat = self._blocks()
            m = b_mat.shape[0]
            jitter = 0.0
            base = max(np.trace(b_mat) / m, 1e-300)
            for _ in range(6):
                try:
                    chol = sla.cholesky(b_mat + jitter * np.eye(m), lower=True)
                    break
                except sla.LinAlgError:
                    jitter = max(jitter * 100.0, 1e-12 * base)
            else:
                raise FitError("normal-equation matrix is numerically singular")
            half = sla.solve_triangular(chol, k_mat, lower=True)
            sym = sla.solve_triangular(chol, half.T, lower=True)
            sym = (sym + sym.T) / 2.0
            s, u_mat = sla.eigh(sym)
            s = np.clip(s, 0.0, None)
            # the curvature penalty annihilates exactly the affine
            # functions, so its two smallest eigenvalues are true zeros;
            # pinning them stops huge penalties from leaking through the
            # null space and corrupting the GCV residual
            s[:2] = 0.0
            self._eig = (chol, s, u_mat)
        return self._eig

    def _targets(self, y):
        """Sorted targets, the rhs vector, and the weighted square sum."""
        y = _validated_y(y, self.n_input)
        ys = y[self._order]
        if self.mode == "full":
            ym = np.bincount(self._gidx, weights=self._ws * ys) / self._wm
            rhs = self._wm * ym
            ywy = float(np.sum(self._wm * ym * ym))
            return ys, rhs, ywy
        rhs = self._p_mat.T @ (self._ws * ys) \
            + self._c_map.T @ (self._s_int.T @ (self._ws * ys))
        ywy = float(np.sum(self._ws * ys * ys))
        return ys, rhs, ywy

    def df(self, lam):
        """Effective degrees of freedom (smoother-matrix trace) at lam."""
        _, s, _ = self._eigen()
        return float(np.sum(1.0 / (1.0 + lam * s)))

    def lambda_for_df(self, target_df, lam_lo):
        """Smallest penalty >= lam_lo whose smoother df hits the target.

        The df limit for huge penalties is the penalty's null-space
        dimension (2); targets below what is reachable saturate at the
        largest finite grid value.
        """
        if self.df(lam_lo) <= target_df:
            return lam_lo
        hi = lam_lo
        for _ in range(200):
            hi *= 8.0
            if self.df(hi) <= target_df or hi > 1e280:
                break
        if self.df(hi) > target_df:
            return hi
        lo = hi / 8.0
        for _ in range(80):
            mid = float(np.sqrt(lo * hi))
            if self.df(mid) > target_df:
                lo = mid
            else:
                hi = mid
        return hi

    def lambda_grid(self):
        lam0 = self.span**3 / self.n_input
        lo = np.log10(lam0) - GCV_GRID_DECADES
        hi = np.log10(lam0) + GCV_GRID_DECADES
        return np.logspace(lo, hi, GCV_GRID_POINTS)

    def gcv_scores(self, y, grid=None):
        """GCV score at each grid penalty for the given targets."""
        grid = self.lambda_grid() if grid is None else np.asarray(grid, dtype=float)
        chol, s, u_mat = self._eigen()
        _, rhs, ywy = self._targets(y)
        z2 = (u_mat.T @ sla.solve_triangular(chol, rhs, lower=True)) ** 2
        n = self.n_system
        scores = np.empty(grid.size)
        for i, lam in enumerate(grid):
            dvec = 1.0 / (1.0 + lam * s)
            rss = max(ywy - 2.0 * np.sum(dvec * z2) + np.sum(dvec**2 * z2), 0.0)
            denom = n - np.sum(dvec)
            scores[i] = n * rss / denom**2 if denom > 0 else np.inf
        return grid, scores

    def select_lambda(self, y):
        grid, scores = self.gcv_scores(y)
        return float(grid[int(np.argmin(scores))])

    def solve(self, y, lam, df=None):
        """Fit the targets at a fixed penalty; returns a CubicSpline."""
        lam = float(lam)
        if not lam > 0:
            raise FitError("lam must be positive")
        ys, rhs, _ = self._targets(y)
        t = self.t
        if self.mode == "full":
            ym = rhs / self._wm
            values, g_full = _reinsch_solve(t, ym, self._wm, lam)
        else:
            values = None
            if self._factor is None or self._factor[0] != lam:
                b_mat, k_mat = self._blocks()
                mat = b_mat + lam * k_mat
                try:
                    self._factor = (lam, sla.cho_factor(mat))
                except sla.LinAlgError:
                    # extreme penalties swamp B and leave the (rank m-2)
                    # penalty; the whitened eigenbasis stays solvable
                    chol, s, u_mat = self._eigen()
                    z = u_mat.T @ sla.solve_triangular(chol, rhs, lower=True)
                    values = sla.solve_triangular(
                        chol.T, u_mat @ (z / (1.0 + lam * s)), lower=False)
            if values is None:
                values = sla.cho_solve(self._factor[1], rhs)
            g_full = np.concatenate([[0.0], self._c_map @ values, [0.0]])
        a, b, c, d = _coefficients(t, values, g_full)
        return CubicSpline(knots=t, a=a, b=b, c=c, d=d, lam=lam, df=df)

    def fit(self, y, lam=None, max_df=None, need_df=True):
        """Resolve the penalty (GCV when lam is None) and solve."""
        if lam is None:
            lam = self.select_lambda(y)
        lam = float(lam)
        if max_df is not None:
            lam = self.lambda_for_df(max_df, lam)
        small = self.t.size <= _DF_MAX_SYSTEM
        df = self.df(lam) if small and (need_df or self._eig is not None) else None
        return self.solve(y, lam, df=df)


def fit(x, y, spec=None, need_df=True):
    """Fit a natural cubic smoothing spline.

    Duplicate abscissae are merged to their weighted mean before the
    solve; more than ``max_knots`` distinct values trigger quantile knot
    thinning. ``spec.lam=None`` selects the penalty by GCV.
    ``need_df=False`` skips the effective-degrees-of-freedom computation
    when the diagnostic is not wanted.
    """
    spec = spec or SplineFitSpec()
    design = SplineDesign(x, weights=spec.weights, max_knots=spec.max_knots)
    return design.fit(y, lam=spec.lam, max_df=spec.max_df, need_df=need_df)


def gcv_lambda(x, y, weights=None, max_knots=200, full_output=False):
    """GCV-selected penalty over the deterministic logarithmic grid.

    The grid spans 1e-6..1e6 times span(x)**3 / n in 50 points; the
    returned value minimizes the GCV score (first minimum on ties).
    """
    design = SplineDesign(x, weights=weights, max_knots=max_knots)
    grid, scores = design.gcv_scores(y)
    lam = float(grid[int(np.argmin(scores))])
    if full_output:
        return lam, grid, scores
    return lam


class SmoothingSpline(RegressorMixin, BaseEstimator):
    """Scikit-learn style regressor around :func:`fit`.

    Parameters
    ----------
    lam : float or None
        Curvature penalty; None selects it by GCV.
    max_knots : int
        Cap on the number of spline knots.
    max_df : float or None
        Optional cap on the smoother's effective degrees of freedom.
    """

    def __init__(self, lam=None, max_knots=200, max_df=None):
        self.lam = lam
        self.max_knots = max_knots
        self.max_df = max_df

    @staticmethod
    def _column(X):
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.ndim != 1:
            raise FitError("X must be 1-D or a single column")
        return arr

    def fit(self, X, y, sample_weight=None):
        x = self._column(X)
        spec = SplineFitSpec(lam=self.lam, weights=sample_weight,
                             max_knots=self.max_knots, max_df=self.max_df)
        self.spline_ = fit(x, y, spec)
        self.lam_ = self.spline_.lam
        self.df_ = self.spline_.df
        return self

    def _check_fitted(self):
        if not hasattr(self, "spline_"):
            raise FitError("this SmoothingSpline instance is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        return self.spline_(self._column(X))

    def derivative(self, X):
        self._check_fitted()
        return self.spline_.derivative(self._column(X))

    def curvature_energy(self):
        self._check_fitted()
        return self.spline_.curvature_energy()
