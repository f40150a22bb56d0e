"""Smoothing-spline fits against independently assembled oracles."""
import numpy as np
import pytest
from scipy import integrate

from xmerge import CubicSpline, FitError, SmoothingSpline, SplineFitSpec, gcv_lambda
from xmerge import fit_smoothing_spline as fit
from xmerge.splines import SplineDesign, natural_interpolant


def dense_penalized_solve(x, y, w, lam):
    """Dense normal-equation oracle: (W + lam*Q R^-1 Q^T) a = W y.

    Assembled with explicit loops, independent of the banded production
    solver; returns the fitted values at the data points.
    """
    n = len(x)
    h = np.diff(x)
    r_mat = np.zeros((n - 2, n - 2))
    q_mat = np.zeros((n, n - 2))
    for j in range(n - 2):
        r_mat[j, j] = (h[j] + h[j + 1]) / 3.0
        if j + 1 < n - 2:
            r_mat[j, j + 1] = r_mat[j + 1, j] = h[j + 1] / 6.0
        q_mat[j, j] = 1.0 / h[j]
        q_mat[j + 1, j] = -1.0 / h[j] - 1.0 / h[j + 1]
        q_mat[j + 2, j] = 1.0 / h[j + 1]
    k_mat = q_mat @ np.linalg.solve(r_mat, q_mat.T)
    return np.linalg.solve(np.diag(w) + lam * k_mat, w * y)


def random_design(rng, n, lo=-3.0, hi=7.0):
    # keep points clear of the tie-merging tolerance
    x = np.sort(rng.uniform(lo, hi, n))
    while np.min(np.diff(x)) < 1e-3:
        x = np.sort(rng.uniform(lo, hi, n))
    return x


def random_spline(rng, n_knots=8):
    x = np.sort(rng.uniform(0, 10, n_knots))
    while np.min(np.diff(x)) < 0.2:
        x = np.sort(rng.uniform(0, 10, n_knots))
    return natural_interpolant(x, rng.normal(0, 2, n_knots))


class TestFit:
    def test_collinear_points_exact(self):
        x = np.linspace(0, 5, 9)
        y = 2 * x + 1
        for lam in (1e-6, 1.0, 1e6):
            s = fit(x, y, SplineFitSpec(lam=lam))
            np.testing.assert_allclose(s(x), y, atol=1e-9)
            assert s.curvature_energy() == pytest.approx(0.0, abs=1e-12)

    def test_huge_penalty_gives_wls_line(self):
        rng = np.random.default_rng(5)
        x = random_design(rng, 25)
        y = 0.5 * x - 2 + rng.normal(0, 1, x.size)
        w = rng.uniform(0.5, 2.0, x.size)
        s = fit(x, y, SplineFitSpec(lam=1e12, weights=w))
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design * np.sqrt(w)[:, None],
                                   y * np.sqrt(w), rcond=None)
        line = design @ coef
        np.testing.assert_allclose(s(x), line, atol=1e-6)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(42)
        x = random_design(rng, 20)
        y = rng.normal(0, 2, 20)
        s = fit(x, y, SplineFitSpec(lam=1.0))
        oracle = dense_penalized_solve(x, y, np.ones(20), 1.0)
        np.testing.assert_allclose(s(x), oracle, atol=1e-8)

    def test_tie_merging(self):
        x = np.array([0.0, 1.0, 1.0, 2.0, 3.0, 4.0])
        y = np.array([0.0, 1.0, 3.0, 2.0, 3.0, 4.0])
        s = fit(x, y, SplineFitSpec(lam=0.5))
        # merged point (1, 2) with weight 2: same fit as explicit weights
        xm = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        ym = np.array([0.0, 2.0, 2.0, 3.0, 4.0])
        wm = np.array([1.0, 2.0, 1.0, 1.0, 1.0])
        s2 = fit(xm, ym, SplineFitSpec(lam=0.5, weights=wm))
        np.testing.assert_allclose(s(xm), s2(xm), atol=1e-12)

    def test_few_distinct_abscissae_rejected(self):
        with pytest.raises(FitError):
            fit([0, 0, 1, 1, 2], [1, 2, 3, 4, 5], SplineFitSpec(lam=1.0))

    def test_nonfinite_rejected(self):
        with pytest.raises(FitError):
            fit([0, 1, 2, np.inf], [0, 1, 2, 3], SplineFitSpec(lam=1.0))
        with pytest.raises(FitError):
            fit([0, 1, 2, 3], [0, 1, np.nan, 3], SplineFitSpec(lam=1.0))

    def test_natural_boundary(self):
        rng = np.random.default_rng(3)
        x = random_design(rng, 15)
        s = fit(x, rng.normal(0, 1, 15), SplineFitSpec(lam=0.01))
        assert s.c[0] == pytest.approx(0.0, abs=1e-10)
        h_last = s.knots[-1] - s.knots[-2]
        assert 2 * s.c[-1] + 6 * s.d[-1] * h_last == pytest.approx(0.0, abs=1e-8)

    def test_shift_equivariance(self):
        rng = np.random.default_rng(11)
        x = random_design(rng, 18)
        y = rng.normal(0, 1, 18)
        s0 = fit(x, y, SplineFitSpec(lam=0.3))
        s1 = fit(x, y + 5.0, SplineFitSpec(lam=0.3))
        grid = np.linspace(x[0], x[-1], 50)
        np.testing.assert_allclose(s1(grid), s0(grid) + 5.0, atol=1e-9)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(12)
        x = random_design(rng, 18)
        y = rng.normal(0, 1, 18)
        s0 = fit(x, y, SplineFitSpec(lam=0.3))
        s1 = fit(x, 3.0 * y, SplineFitSpec(lam=0.3))
        grid = np.linspace(x[0], x[-1], 50)
        np.testing.assert_allclose(s1(grid), 3.0 * s0(grid), atol=1e-9)

    def test_smoother_matrix_symmetric_psd(self):
        rng = np.random.default_rng(21)
        x = random_design(rng, 12)
        cols = []
        for i in range(12):
            e = np.zeros(12)
            e[i] = 1.0
            cols.append(fit(x, e, SplineFitSpec(lam=0.5))(x))
        h_mat = np.column_stack(cols)
        np.testing.assert_allclose(h_mat, h_mat.T, atol=1e-8)
        eigvals = np.linalg.eigvalsh((h_mat + h_mat.T) / 2)
        assert eigvals.min() > -1e-10

    def test_penalized_objective_optimal(self):
        rng = np.random.default_rng(31)
        x = random_design(rng, 14)
        y = rng.normal(0, 1.5, 14)
        lam = 0.2

        def objective(s):
            return np.sum((y - s(x)) ** 2) + lam * s.curvature_energy()

        fitted = fit(x, y, SplineFitSpec(lam=lam))
        interp = natural_interpolant(x, y)
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        line = CubicSpline.affine(x[0], x[-1], coef[0], coef[1])
        assert objective(fitted) <= objective(interp) + 1e-9
        assert objective(fitted) <= objective(line) + 1e-9

    def test_reduced_knots_close_to_full(self):
        rng = np.random.default_rng(8)
        x = np.sort(rng.uniform(0, 10, 3000))
        y = np.sin(x) + rng.normal(0, 0.1, x.size)
        thinned = fit(x, y, SplineFitSpec(lam=1e-2, max_knots=60))
        assert thinned.knots.size == 60
        grid = np.linspace(0.2, 9.8, 40)
        np.testing.assert_allclose(thinned(grid), np.sin(grid), atol=0.05)

    def test_max_df_cap(self):
        rng = np.random.default_rng(17)
        x = np.sort(rng.uniform(0, 10, 300))
        y = np.sin(2 * x) + rng.normal(0, 0.05, x.size)
        free = fit(x, y)
        capped = fit(x, y, SplineFitSpec(max_df=5.0))
        assert free.df > 5.0
        assert capped.df == pytest.approx(5.0, abs=1e-2)
        assert capped.lam > free.lam


class TestEval:
    def test_knot_value_is_a_coefficient(self):
        rng = np.random.default_rng(2)
        s = random_spline(rng)
        for i in range(s.knots.size - 1):
            assert s(float(s.knots[i])) == pytest.approx(s.a[i], abs=1e-12)

    def test_linear_extrapolation_above(self):
        rng = np.random.default_rng(4)
        s = random_spline(rng)
        t_hi = s.knots[-1]
        val = s(float(t_hi))
        slope = s.derivative(float(t_hi))
        for overshoot in (0.5, 2.0, 10.0):
            assert s(float(t_hi + overshoot)) == pytest.approx(
                val + slope * overshoot, rel=1e-12)

    def test_linear_extrapolation_below(self):
        rng = np.random.default_rng(6)
        s = random_spline(rng)
        t_lo = s.knots[0]
        val, slope = s(float(t_lo)), s.derivative(float(t_lo))
        assert s(float(t_lo - 3.0)) == pytest.approx(val - 3.0 * slope, rel=1e-12)

    def test_matches_powerform_oracle(self):
        rng = np.random.default_rng(7)
        s = random_spline(rng)
        xs = rng.uniform(s.knots[0], s.knots[-1], 1000)
        idx = np.searchsorted(s.knots, xs, side="right") - 1
        idx = np.clip(idx, 0, s.knots.size - 2)
        u = xs - s.knots[idx]
        oracle = s.a[idx] + s.b[idx] * u + s.c[idx] * u**2 + s.d[idx] * u**3
        np.testing.assert_allclose(s(xs), oracle, atol=1e-12)

    def test_2d_input_shape_preserved(self):
        s = CubicSpline.identity(0, 1)
        arr = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(s(arr), arr)


class TestDerivative:
    def test_fitted_line_slope(self):
        x = np.linspace(0, 5, 9)
        s = fit(x, 2 * x + 1, SplineFitSpec(lam=1.0))
        for p in (-1.0, 0.0, 2.5, 5.0, 7.0):
            assert s.derivative(p) == pytest.approx(2.0, abs=1e-9)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        s = random_spline(rng)
        pts = rng.uniform(s.knots[0] + 0.1, s.knots[-1] - 0.1, 200)
        h = 1e-5
        fd = (s(pts + h) - s(pts - h)) / (2 * h)
        np.testing.assert_allclose(s.derivative(pts), fd, atol=1e-6)

    def test_continuous_across_knots(self):
        rng = np.random.default_rng(10)
        s = random_spline(rng)
        eps = 1e-10
        for t in s.knots[1:-1]:
            left = s.derivative(float(t - eps))
            right = s.derivative(float(t + eps))
            assert left == pytest.approx(right, abs=1e-7)

    def test_constant_slope_in_extrapolation(self):
        rng = np.random.default_rng(13)
        s = random_spline(rng)
        assert s.derivative(float(s.knots[-1] + 1)) == \
            s.derivative(float(s.knots[-1] + 100))


class TestCurvature:
    def test_affine_zero(self):
        s = CubicSpline.affine(0, 10, 3.0, -2.0)
        assert s.curvature_energy() == 0.0

    def test_single_cubic_piece(self):
        # s(x) = x^3 on [0, 1]: integral of (6x)^2 is 12
        s = CubicSpline(knots=[0.0, 1.0], a=[0.0], b=[0.0], c=[0.0], d=[1.0],
                        natural=False)
        assert s.curvature_energy() == pytest.approx(12.0, rel=1e-14)

    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(14)
        s = random_spline(rng)

        def second_sq(x):
            i = min(np.searchsorted(s.knots, x, side="right") - 1, s.knots.size - 2)
            i = max(i, 0)
            u = x - s.knots[i]
            return (2 * s.c[i] + 6 * s.d[i] * u) ** 2

        total = 0.0
        for i in range(s.knots.size - 1):
            val, _ = integrate.quad(second_sq, s.knots[i], s.knots[i + 1])
            total += val
        assert s.curvature_energy() == pytest.approx(total, rel=1e-8)


class TestGcv:
    def test_linear_data_wants_heavy_smoothing(self):
        rng = np.random.default_rng(18)
        x = np.sort(rng.uniform(0, 10, 60))
        y = 1.5 * x + 0.2 + rng.normal(0, 1e-4, x.size)
        lam, grid, scores = gcv_lambda(x, y, full_output=True)
        assert lam >= grid[-5]  # at or near the grid maximum

    def test_linear_data_heavy_smoothing_is_free(self):
        # on linear truth the score at the grid maximum ties the optimum
        for seed in (15, 16, 17):
            rng = np.random.default_rng(seed)
            x = np.sort(rng.uniform(0, 10, 60))
            y = 1.5 * x + 0.2 + rng.normal(0, 1e-4, x.size)
            lam, grid, scores = gcv_lambda(x, y, full_output=True)
            assert scores[-1] <= scores.min() * 1.02
            s = fit(x, y, SplineFitSpec(lam=lam))
            assert s.curvature_energy() < 1e-4

    def test_argmin_contract(self):
        rng = np.random.default_rng(16)
        x = np.sort(rng.uniform(0, 10, 50))
        y = np.sin(x) + rng.normal(0, 0.3, x.size)
        lam, grid, scores = gcv_lambda(x, y, full_output=True)
        assert scores[list(grid).index(lam)] <= scores.min() + 1e-12

    def test_rmse_within_factor_of_best_grid_point(self):
        rng = np.random.default_rng(18)
        x = np.sort(rng.uniform(0, 10, 120))
        truth = np.sin(x) + 0.3 * x
        y = truth + rng.normal(0, 0.25, x.size)
        lam, grid, _ = gcv_lambda(x, y, full_output=True)
        # exhaustive oracle: fit at every grid penalty, score against truth
        rmses = []
        for g in grid:
            s = fit(x, y, SplineFitSpec(lam=float(g)))
            rmses.append(np.sqrt(np.mean((s(x) - truth) ** 2)))
        chosen = fit(x, y, SplineFitSpec(lam=lam))
        rmse = np.sqrt(np.mean((chosen(x) - truth) ** 2))
        assert rmse <= 1.5 * min(rmses)


class TestSerialization:
    def test_table_round_trip(self):
        rng = np.random.default_rng(19)
        s = random_spline(rng)
        restored = CubicSpline.from_table(s.to_table())
        grid = np.linspace(s.knots[0] - 1, s.knots[-1] + 1, 100)
        np.testing.assert_allclose(restored(grid), s(grid), atol=1e-12)

    def test_bad_table_rejected(self):
        with pytest.raises(FitError):
            CubicSpline.from_table("knot\ta\tb\tc\td\n1\t2\t3\n")


class TestSplineDesign:
    def test_reused_design_matches_fresh_fit(self):
        rng = np.random.default_rng(20)
        x = rng.uniform(0, 10, 500)
        design = SplineDesign(x)
        for seed in range(3):
            y = np.sin(x) + np.random.default_rng(seed).normal(0, 0.2, x.size)
            a = design.fit(y, lam=0.05)
            b = fit(x, y, SplineFitSpec(lam=0.05))
            np.testing.assert_array_equal(a(x), b(x))


class TestSmoothingSplineEstimator:
    def test_fit_predict(self):
        rng = np.random.default_rng(22)
        x = np.sort(rng.uniform(0, 10, 80))
        y = np.cos(x) + rng.normal(0, 0.1, x.size)
        est = SmoothingSpline().fit(x, y)
        assert est.lam_ > 0 and est.df_ > 2
        pred = est.predict(x[:10])
        np.testing.assert_allclose(pred, np.cos(x[:10]), atol=0.2)

    def test_get_set_params(self):
        est = SmoothingSpline(lam=2.0, max_knots=50)
        params = est.get_params()
        assert params == {"lam": 2.0, "max_knots": 50, "max_df": None}
        est.set_params(lam=3.0)
        assert est.lam == 3.0

    def test_sklearn_clone(self):
        from sklearn.base import clone
        est = SmoothingSpline(lam=1.5)
        cloned = clone(est)
        assert cloned.lam == 1.5 and not hasattr(cloned, "spline_")

    def test_column_input(self):
        rng = np.random.default_rng(23)
        x = np.sort(rng.uniform(0, 5, 30))
        est = SmoothingSpline(lam=0.1).fit(x.reshape(-1, 1), x**2)
        assert est.predict(np.array([[2.0]])) == pytest.approx(4.0, abs=0.5)

    def test_unfitted_raises(self):
        with pytest.raises(FitError):
            SmoothingSpline().predict([1.0, 2.0])

    def test_composes_with_grid_search(self):
        from sklearn.model_selection import GridSearchCV
        rng = np.random.default_rng(24)
        x = rng.uniform(0, 10, 90)  # unsorted so CV folds interleave
        y = np.sin(x) + rng.normal(0, 0.15, x.size)
        search = GridSearchCV(SmoothingSpline(),
                              {"lam": [1e-3, 1e-1, 1e1, 1e3]}, cv=3)
        search.fit(x.reshape(-1, 1), y)
        assert search.best_params_["lam"] in (1e-3, 1e-1, 1e1, 1e3)
        assert search.best_estimator_.score(x.reshape(-1, 1), y) > 0.8
