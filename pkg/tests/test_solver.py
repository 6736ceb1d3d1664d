import numpy as np
import pytest

from hesspline.data import PointCloud, WeightVector
from hesspline.errors import DataError, NumericalError
from hesspline.hessian import HessianForm, estimate, quadratic_form
from hesspline.manifolds import ManifoldSpec, add_noise, generate, response
from hesspline.solver import (
    CvReport,
    cv_select,
    default_lambda_grid,
    effective_dof,
    fit,
    fit_weighted,
    reweight_fit,
    smoother_diagonal,
    variance_diagnostic,
)

import scipy.sparse as sp


def _instance(n, seed=0, k=12, kind="flat_square", extent=None):
    truth = generate(ManifoldSpec(kind, extent=extent, seed=seed), n)
    cloud = PointCloud(truth.embedded, 2)
    return truth, estimate(cloud, k=k)


def test_lam_zero_reproduces_response_exactly():
    _, form = _instance(100, seed=1)
    y = np.random.default_rng(0).normal(size=100)
    result = fit(form, y, 0.0)
    assert np.array_equal(result.fitted, y)
    assert result.fitted is not y  # defensive copy


def test_lam_zero_with_zero_weight_is_singular():
    _, form = _instance(60, seed=1)
    w = np.ones(60)
    w[3] = 0.0
    with pytest.raises(NumericalError):
        fit_weighted(form, np.ones(60), w, 0.0)


def test_unit_weights_match_unweighted_bitwise():
    _, form = _instance(120, seed=2)
    y = np.random.default_rng(1).normal(size=120)
    plain = fit(form, y, 0.8)
    weighted = fit_weighted(form, y, np.ones(120), 0.8)
    assert np.array_equal(plain.fitted, weighted.fitted)


def test_constants_pass_through():
    _, form = _instance(150, seed=3)
    ones = np.ones(150)
    for lam in (1e-3, 1.0, 1e3):
        result = fit(form, ones, lam)
        assert np.abs(result.fitted - 1.0).max() <= 1e-8
    # constants are in the penalty kernel only to assembly roundoff, so the
    # deviation floor grows with lam
    result = fit(form, ones, 1e6)
    assert np.abs(result.fitted - 1.0).max() <= 1e-6


def test_loss_scale_invariance():
    _, form = _instance(100, seed=4)
    y = np.random.default_rng(2).normal(size=100)
    w = np.random.default_rng(3).uniform(0.5, 2.0, 100)
    a = fit_weighted(form, y, w, 0.7)
    b = fit_weighted(form, y, 2.0 * w, 1.4)
    assert np.abs(a.fitted - b.fitted).max() <= 1e-10


def test_smoother_is_linear_in_response():
    _, form = _instance(90, seed=5)
    rng = np.random.default_rng(4)
    y1, y2 = rng.normal(size=(2, 90))
    lam = 0.5
    combo = fit(form, 2.0 * y1 - 3.0 * y2, lam).fitted
    parts = 2.0 * fit(form, y1, lam).fitted - 3.0 * fit(form, y2, lam).fitted
    assert np.abs(combo - parts).max() <= 1e-10


def test_residual_grows_and_penalty_shrinks_along_lam():
    truth, form = _instance(200, seed=6)
    y = np.asarray(
        add_noise(response(truth.params, "sine", (1.0, 2.0)), 0.2, seed=7).values
    )
    lams = [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]
    rss, penalty = [], []
    for lam in lams:
        g = fit(form, y, lam).fitted
        rss.append(float(((y - g) ** 2).sum()))
        penalty.append(quadratic_form(form, g))
    assert np.all(np.diff(rss) >= -1e-10)
    assert np.all(np.diff(penalty) <= 1e-10)


def test_fitted_minimizes_the_loss():
    truth, form = _instance(80, seed=7)
    y = np.asarray(add_noise(response(truth.params, "sine", (1.0, 1.0)), 0.3, seed=8).values)
    lam = 0.9

    def loss(g):
        return float(((y - g) ** 2).sum() + lam * quadratic_form(form, g))

    g_hat = fit(form, y, lam).fitted
    base = loss(g_hat)
    rng = np.random.default_rng(9)
    for scale in (1e-4, 1e-2, 1.0):
        for _ in range(5):
            assert base <= loss(g_hat + scale * rng.normal(size=80)) + 1e-12


def test_zero_weight_point_gets_smooth_infill():
    truth, form = _instance(150, seed=13)
    y = np.asarray(
        add_noise(response(truth.params, "sine", (1.0, 2.0)), 0.05, seed=1).values
    )
    lam = 0.5
    base = fit(form, y, lam)
    w = np.ones(150)
    w[40] = 0.0
    dropped = fit_weighted(form, y, w, lam)
    keep = np.arange(150) != 40
    r_base = np.abs(y - base.fitted)[keep]
    r_drop = np.abs(y - dropped.fitted)[keep]
    # removing one observation barely moves the other residuals
    assert np.abs(r_drop - r_base).max() <= 0.10 * r_base.max()
    # the dropped point is interpolated from the penalty alone, not its y
    assert dropped.fitted[40] != y[40]


def test_cg_matches_direct():
    _, form = _instance(130, seed=8)
    y = np.random.default_rng(5).normal(size=130)
    direct = fit(form, y, 2.0, method="direct").fitted
    cg = fit(form, y, 2.0, solver_tolerance=1e-12, method="cg").fitted
    assert np.abs(direct - cg).max() <= 1e-8
    with pytest.raises(ValueError):
        fit(form, y, 2.0, method="jacobi")


def test_fit_validation():
    _, form = _instance(50, seed=9)
    with pytest.raises(DataError):
        fit(form, np.ones(49), 1.0)
    with pytest.raises(DataError):
        fit(form, np.ones(50), -0.5)
    with pytest.raises(DataError):
        fit_weighted(form, np.ones(50), np.ones(49), 1.0)


def test_extreme_lam_projects_onto_near_null_space():
    truth, form = _instance(200, seed=5, extent=((0.0, 10.0), (0.0, 10.0)))
    from hesspline.hessian import null_embedding

    emb = null_embedding(form, 2)
    rng = np.random.default_rng(11)
    y = (
        0.7
        + 1.3 * truth.params[:, 0]
        - 0.4 * truth.params[:, 1]
        + rng.normal(0, 0.5, 200)
    )
    fitted = fit(form, y, 1e12).fitted
    basis, _ = np.linalg.qr(np.hstack([np.ones((200, 1)), emb.coords]))
    projected = basis @ (basis.T @ y)
    assert np.linalg.norm(fitted - projected) <= 1e-3 * np.linalg.norm(y)


def test_smoother_diagonal_and_dof():
    _, form = _instance(60, seed=10)
    assert np.array_equal(smoother_diagonal(form, 0.0), np.ones(60))
    assert effective_dof(form, 0.0) == 60.0
    # brute-force the smoother matrix on a small instance
    lam = 0.8
    dense = np.linalg.inv(np.eye(60) + lam * form.matrix.toarray())
    assert np.abs(smoother_diagonal(form, lam) - np.diag(dense)).max() <= 1e-8
    dofs = [effective_dof(form, lam) for lam in (1e-3, 0.1, 10.0, 1e3)]
    assert np.all(np.diff(dofs) < 0)  # monotone shrinkage


def test_loo_shortcut_equals_exact_refits():
    truth, form = _instance(30, seed=12, k=8)
    y = np.asarray(
        add_noise(response(truth.params, "sine", (1.0, 2.0)), 0.1, seed=3).values
    )
    grid = default_lambda_grid(form)
    shortcut = cv_select(form, y, grid=grid, method="smoother_shortcut")
    exact = cv_select(form, y, grid=grid, method="exact_refit")
    assert np.abs(shortcut.scores - exact.scores).max() <= 1e-8
    assert shortcut.selected == exact.selected


def test_cv_single_value_grid():
    truth, form = _instance(40, seed=14, k=8)
    y = np.random.default_rng(6).normal(size=40)
    report = cv_select(form, y, grid=[0.25])
    assert report.selected == 0.25
    assert report.grid.shape == (1,)


def test_cv_ties_select_smaller_lam():
    truth, form = _instance(40, seed=15, k=8)
    y = np.random.default_rng(7).normal(size=40)
    report = cv_select(form, y, grid=[3.0, 1.0, 1.0])
    assert report.grid.tolist() == [1.0, 1.0, 3.0]  # sorted ascending
    if report.scores[0] <= report.scores[2]:
        assert report.selected == 1.0


def test_cv_pure_noise_prefers_max_smoothing():
    _, form = _instance(160, seed=3)
    y = np.random.default_rng(11).standard_normal(160)
    report = cv_select(form, y)
    assert report.selected == report.grid[-1]
    assert report.grid.shape == (25,)


def test_cv_lam_zero_is_degenerate():
    _, form = _instance(40, seed=16, k=8)
    y = np.random.default_rng(8).normal(size=40)
    for method in ("smoother_shortcut", "exact_refit"):
        report = cv_select(form, y, grid=[0.0, 1.0], method=method)
        assert report.degenerate == (0.0,)
        assert np.isinf(report.scores[0])
        assert report.selected == 1.0
    with pytest.raises(NumericalError):
        cv_select(form, y, grid=[0.0])


def test_cv_validation():
    _, form = _instance(40, seed=17, k=8)
    y = np.ones(40)
    with pytest.raises(DataError):
        cv_select(form, y, grid=[])
    with pytest.raises(DataError):
        cv_select(form, y, grid=[-1.0, 1.0])
    with pytest.raises(ValueError):
        cv_select(form, y, grid=[1.0], method="gcv")
    assert isinstance(cv_select(form, y, grid=[1.0]), CvReport)


def test_default_grid_scaling():
    _, form = _instance(100, seed=18)
    grid = default_lambda_grid(form)
    scale = 100 / form.trace()
    assert grid.shape == (25,)
    assert abs(grid[0] - 1e-4 * scale) <= 1e-12 * grid[0]
    assert abs(grid[-1] - 1e4 * scale) <= 1e-8 * grid[-1]
    assert np.all(np.diff(grid) > 0)


def test_reweight_noiseless_stays_uniform():
    truth, form = _instance(100, seed=1)
    y = response(truth.params, "sine", (1.0, 1.0))
    result = reweight_fit(form, y, 0.0)
    assert result.diagnostics["converged"]
    assert result.iterations <= 3
    assert np.abs(result.weights.weights - 1.0).max() <= 1e-6
    # tiny penalty with an explicit residual scale behaves the same way
    result = reweight_fit(form, y, 1e-8, rho_scale=1.0)
    assert result.diagnostics["converged"]
    assert result.iterations <= 3
    assert np.abs(result.weights.weights - 1.0).max() <= 1e-6


def test_reweight_single_iteration_matches_manual_pass():
    truth, form = _instance(80, seed=19)
    y = np.asarray(
        add_noise(response(truth.params, "sine", (1.0, 2.0)), 0.1, seed=5).values
    )
    lam = 0.6
    sigma = 0.25
    result = reweight_fit(form, y, lam, rho_scale=sigma, max_iter=1)
    assert result.iterations == 1
    first = fit(form, y, lam).fitted
    w = np.exp(-np.abs(y - first) / (2.0 * sigma))
    w *= 80 / w.sum()
    assert np.abs(result.weights.weights - w).max() <= 1e-12
    refit = fit_weighted(form, y, w, lam).fitted
    assert np.abs(result.fitted - refit).max() <= 1e-12


def test_reweight_crushes_an_outlier():
    truth, form = _instance(150, seed=20)
    y = np.asarray(
        add_noise(response(truth.params, "sine", (1.0, 2.0)), 0.1, seed=6).values
    ).copy()
    y[75] += 5.0  # 50 sigma
    result = reweight_fit(form, y, 1.0)
    assert result.weights.weights[75] < 0.1
    assert result.diagnostics["rho_scale"] > 0


def test_reweight_validation():
    _, form = _instance(30, seed=21, k=8)
    y = np.ones(30)
    with pytest.raises(DataError):
        reweight_fit(form, y, 1.0, max_iter=0)
    with pytest.raises(DataError):
        reweight_fit(form, y, 1.0, rho_scale=-1.0)


def test_variance_diagnostic_identity_at_lam_zero():
    _, form = _instance(50, seed=22, k=8)
    report = variance_diagnostic(form, np.ones(50), 0.0, sigma=1.5)
    assert np.array_equal(report.diagonal, np.full(50, 1.5**2))
    assert report.spectral_norm == 1.5**2


def test_variance_diagnostic_zero_sigma():
    _, form = _instance(50, seed=22, k=8)
    report = variance_diagnostic(form, np.ones(50), 1.0, sigma=0.0)
    assert np.all(report.diagonal == 0.0)
    assert report.spectral_norm == 0.0


def test_variance_bounded_for_uniform_weights():
    _, form = _instance(120, seed=23)
    for lam in (0.1, 1.0, 100.0):
        report = variance_diagnostic(form, np.ones(120), lam, sigma=1.0)
        assert report.diagonal.max() <= 1.0 + 1e-10
        assert report.spectral_norm <= 1.0 + 1e-10
    # brute-force check of the diagonal at one lam
    lam = 1.0
    b = np.linalg.solve(np.eye(120) + lam * form.matrix.toarray(), np.eye(120))
    diag = variance_diagnostic(form, np.ones(120), lam).diagonal
    assert np.abs(diag - (b**2).sum(axis=1)).max() <= 1e-8


def test_variance_bound_fails_for_skewed_weights():
    """The spectral bound is a uniform-weights fact; a 2x2 counterexample
    with weights (1, 0.01) pushes |Var| above sigma^2 and must be reported."""
    mat = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    form = HessianForm(matrix=mat, skipped=(), k=2)
    with pytest.raises(NumericalError):
        variance_diagnostic(form, WeightVector(np.array([1.0, 0.01])), 1.0, sigma=1.0)


def test_weight_vector_round_trip_through_fit():
    _, form = _instance(40, seed=24, k=8)
    y = np.random.default_rng(12).normal(size=40)
    w = WeightVector(np.random.default_rng(13).uniform(0.5, 1.5, 40))
    result = fit_weighted(form, y, w, 1.0)
    assert isinstance(result.weights, WeightVector)
    assert np.array_equal(result.weights.weights, w.weights)
    assert result.k == form.k
