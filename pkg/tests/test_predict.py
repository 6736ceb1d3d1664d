import numpy as np
import pytest

from hesspline.data import PointCloud
from hesspline.errors import DataError
from hesspline.hessian import estimate
from hesspline.manifolds import ManifoldSpec, generate, response
from hesspline.predict import (
    ClassifierModel,
    Prediction,
    classify_fit,
    classify_predict,
    classify_scores,
    predict_oos,
)
from hesspline.solver import fit

from helpers import augmented_refit_value


def _flat_cloud(n, seed=0):
    truth = generate(ManifoldSpec("flat_square", seed=seed), n)
    return truth, PointCloud(truth.embedded, 2)


def test_affine_values_are_reproduced():
    truth, cloud = _flat_cloud(300, seed=1)
    values = 0.4 + 2.0 * truth.embedded[:, 0] - 1.3 * truth.embedded[:, 1]
    query = np.array([0.43, 0.61])
    expected = 0.4 + 2.0 * query[0] - 1.3 * query[1]
    for method in ("local_tps", "local_linear"):
        pred = predict_oos(cloud, values, query, k=12, method=method)
        assert abs(pred.value - expected) <= 1e-6
        assert pred.method == method
        assert pred.neighborhood.shape == (12,)


def test_affine_reproduction_survives_extrinsic_curvature():
    truth = generate(ManifoldSpec("cylinder", seed=2), 600)
    cloud = PointCloud(truth.embedded, 2)
    values = 1.0 + 0.5 * truth.params[:, 0]  # affine along the axis
    i = 17
    pred = predict_oos(cloud, values, truth.embedded[i], k=10, method="local_linear")
    assert abs(pred.value - values[i]) <= 1e-3


def test_neighborhood_ties_resolve_by_index():
    pts = np.array([[0.0], [1.0], [2.0], [3.0]])
    cloud = PointCloud(pts, 1)
    pred = predict_oos(cloud, np.arange(4.0), np.array([0.5]), k=3, method="local_linear")
    assert pred.neighborhood.tolist() == [0, 1, 2]


def test_concave_bump_biases_the_affine_model_down():
    truth, cloud = _flat_cloud(400, seed=3)
    center = np.array([0.5, 0.5])
    r2 = ((truth.embedded - center) ** 2).sum(axis=1)
    values = np.exp(-r2 / (2 * 0.3**2))
    linear = predict_oos(cloud, values, center, k=12, method="local_linear")
    tps = predict_oos(cloud, values, center, k=12, method="local_tps")
    assert linear.value < 1.0 - 1e-4  # averaging a concave cap pulls down
    assert abs(tps.value - 1.0) < 1.0 - linear.value


def test_convex_variant_stays_in_the_hull():
    truth, cloud = _flat_cloud(250, seed=4)
    values = np.sin(7 * truth.embedded[:, 0]) + truth.embedded[:, 1] ** 2
    rng = np.random.default_rng(5)
    for _ in range(20):
        q = rng.uniform(0.05, 0.95, 2)
        pred = predict_oos(cloud, values, q, k=9, method="local_linear", variant="convex")
        local = values[pred.neighborhood]
        assert local.min() - 1e-12 <= pred.value <= local.max() + 1e-12
        assert pred.variant == "convex"
        assert pred.tangent_spectrum.shape == (9,)
        assert np.all(np.diff(pred.tangent_spectrum) <= 0)


def test_convex_variant_returns_training_value_at_zero_distance():
    truth, cloud = _flat_cloud(100, seed=6)
    values = np.random.default_rng(7).normal(size=100)
    i = 23
    pred = predict_oos(
        cloud, values, truth.embedded[i], k=8, method="local_linear", variant="convex"
    )
    assert pred.value == values[i]


def test_predict_validation():
    truth, cloud = _flat_cloud(50, seed=8)
    values = np.zeros(50)
    q = np.array([0.5, 0.5])
    with pytest.raises(DataError):
        predict_oos(cloud, values, q, k=3)  # needs k >= d + 2
    with pytest.raises(DataError):
        predict_oos(cloud, values, q, k=51)
    with pytest.raises(DataError):
        predict_oos(cloud, values, q, k=12, method="kriging")
    with pytest.raises(DataError):
        predict_oos(cloud, values, q, k=12, method="local_tps", variant="convex")
    with pytest.raises(DataError):
        predict_oos(cloud, values, np.array([0.5]), k=12)
    with pytest.raises(DataError):
        predict_oos(cloud, values, np.array([0.5, np.nan]), k=12)
    with pytest.raises(DataError):
        predict_oos(cloud, np.zeros(49), q, k=12)


def test_prediction_matches_global_refit():
    """Adding the query to the cloud with weight zero and re-solving is the
    reference answer; the local chart prediction stays within a few percent
    of the response range of it."""
    truth, cloud = _flat_cloud(150, seed=9)
    y = np.asarray(response(truth.params, "sine", (1.0, 2.0)).values)
    lam = 0.5
    form = estimate(cloud, k=12)
    fitted = fit(form, y, lam)
    query = np.array([0.37, 0.54])
    oracle = augmented_refit_value(truth.embedded, 2, y, lam, 12, query)
    pred = predict_oos(cloud, fitted, query, k=12, method="local_tps")
    span = y.max() - y.min()
    assert abs(pred.value - oracle) <= 0.15 * span


def test_prediction_is_deterministic():
    truth, cloud = _flat_cloud(120, seed=10)
    values = np.cos(5 * truth.embedded[:, 0])
    q = np.array([0.3, 0.8])
    a = predict_oos(cloud, values, q, k=12)
    b = predict_oos(cloud, values, q, k=12)
    assert a.value == b.value
    assert np.array_equal(a.neighborhood, b.neighborhood)


def test_classifier_fits_separable_labels():
    truth, cloud = _flat_cloud(300, seed=11)
    labels = ["hi" if t > 0.5 else "lo" for t in truth.params[:, 0]]
    model = classify_fit(cloud, labels, lam=1e-4, k=12)
    assert model.classes == ("hi", "lo")
    assert model.scores.shape == (300, 1)  # binary keeps one column
    # convex evaluation at a training point reads back the smoothed score,
    # which at this lam has not moved any indicator across 0.5
    exact = classify_predict(model, truth.embedded, variant="convex")
    assert all(p == l for p, l in zip(exact, labels))
    # the affine chart re-estimates the score and may wobble at the boundary
    predicted = classify_predict(model, truth.embedded)
    agree = np.mean([p == l for p, l in zip(predicted, labels)])
    assert agree >= 0.99


def test_heavy_smoothing_forgets_the_labels():
    """With lam huge the indicator surface collapses onto the near-null
    space of the penalty; on a torus that space is the constants, so every
    score lands on the class prior."""
    truth = generate(ManifoldSpec("clifford_torus", seed=21), 400)
    cloud = PointCloud(truth.embedded, 2)
    median = np.median(truth.params[:, 0])
    labels = [1 if t > median else 0 for t in truth.params[:, 0]]
    model = classify_fit(cloud, labels, lam=1e12, k=12)
    prior = np.mean(labels)
    assert np.abs(model.scores[:, 0] - prior).max() <= 0.05


def test_multiclass_scores_and_argmax():
    truth, cloud = _flat_cloud(360, seed=12)
    bands = np.digitize(truth.params[:, 0], [1 / 3, 2 / 3])
    labels = [("a", "b", "c")[i] for i in bands]
    model = classify_fit(cloud, labels, lam=1e-4, k=12)
    assert model.classes == ("a", "b", "c")
    assert model.scores.shape == (360, 3)
    predicted = classify_predict(model, truth.embedded)
    agree = np.mean([p == l for p, l in zip(predicted, labels)])
    assert agree >= 0.99  # band boundaries may wobble


def test_decision_rules_on_crafted_scores():
    # convex evaluation at a training point returns the stored score
    # bit for bit, which pins the tie rules exactly
    truth, cloud = _flat_cloud(40, seed=13)
    binary = ClassifierModel(
        cloud=cloud,
        scores=np.full((40, 1), 0.5),
        classes=(0, 1),
        lam=1.0,
        k=6,
    )
    at = truth.embedded[7]
    assert classify_scores(binary, at, variant="convex") == pytest.approx(0.5)
    assert classify_predict(binary, at, variant="convex") == 0  # 0.5 is not > 0.5
    high = ClassifierModel(
        cloud=cloud, scores=np.full((40, 1), 0.7), classes=(0, 1), lam=1.0, k=6
    )
    assert classify_predict(high, at, variant="convex") == 1

    rows = np.tile([0.2, 0.9, 0.4], (40, 1))
    multi = ClassifierModel(
        cloud=cloud, scores=rows, classes=("a", "b", "c"), lam=1.0, k=6
    )
    assert classify_predict(multi, at, variant="convex") == "b"
    tied = ClassifierModel(
        cloud=cloud,
        scores=np.tile([0.9, 0.9, 0.1], (40, 1)),
        classes=("a", "b", "c"),
        lam=1.0,
        k=6,
    )
    assert classify_predict(tied, at, variant="convex") == "a"  # first max wins


def test_classify_batch_and_single_shapes():
    truth, cloud = _flat_cloud(200, seed=14)
    labels = [1 if t > 0.5 else 0 for t in truth.params[:, 0]]
    model = classify_fit(cloud, labels, lam=1e-3, k=12)
    batch = classify_scores(model, truth.embedded[:5])
    assert batch.shape == (5, 1)
    single = classify_scores(model, truth.embedded[0])
    assert single.shape == (1,)
    picks = classify_predict(model, truth.embedded[:5])
    assert isinstance(picks, list) and len(picks) == 5
    assert classify_predict(model, truth.embedded[0]) in (0, 1)


def test_classify_validation():
    truth, cloud = _flat_cloud(30, seed=15)
    with pytest.raises(DataError):
        classify_fit(cloud, [0, 1] * 14, lam=1.0)  # 28 labels for 30 points
    with pytest.raises(DataError):
        classify_fit(cloud, [1] * 30, lam=1.0)  # single class
