import numpy as np
import pytest

from fcf.exceptions import InvalidInputError
from fcf.services.featuremap import N_BINS, FeatureLayout
from fcf.services.forest import (
    CASCADE_MARGIN,
    BoostedForest,
    Leaf,
    TrainData,
    best_split,
    bins_fetch,
    boost,
    calibrate_cascade,
    fit_tree,
    initial_weights,
    matrix_fetch,
)
from fcf.utils.rng import make_rng


def _quantized_scores(forest: BoostedForest, data: TrainData) -> np.ndarray:
    fetch = bins_fetch(data.bins, data.column_of)
    scores = np.zeros(data.n_samples)
    for tree, weight in zip(forest.trees, forest.tree_weights):
        scores += weight * tree.evaluate(fetch, data.n_samples, quantized=True)
    return scores


def _separable_set(seed: int, n: int = 40):
    """Points in the unit square at least 0.2 away from the line x + y = 1."""
    rng = make_rng(seed, "tests.separable")
    points = []
    while len(points) < n:
        p = rng.random(2)
        if abs(p.sum() - 1.0) >= 0.2:
            points.append(p)
    points = np.array(points)
    labels = np.where(points.sum(axis=1) > 1.0, 1.0, -1.0)
    return points, labels


def _xor_set():
    """Unbalanced quadrants on two levels: a depth-2 tree is needed and sufficient."""
    lo, hi = 0.25, 0.75
    blocks = [
        ((lo, lo), 30, -1.0),
        ((hi, hi), 10, -1.0),
        ((lo, hi), 20, 1.0),
        ((hi, lo), 20, 1.0),
    ]
    points = np.concatenate([np.tile(p, (n, 1)) for p, n, _ in blocks])
    labels = np.concatenate([np.full(n, y) for _, n, y in blocks])
    return points, labels


def test_initial_weights_are_class_balanced():
    labels = np.array([1, 1, 1, -1])
    w = initial_weights(labels)
    assert w[labels > 0].sum() == pytest.approx(0.5)
    assert w[labels < 0].sum() == pytest.approx(0.5)


def test_depth_two_tree_solves_xor():
    points, labels = _xor_set()
    data = TrainData.from_matrix(points, labels)
    tree = fit_tree(data, initial_weights(labels), depth=2)
    assert tree.n_splits == 3
    out = tree.evaluate(bins_fetch(data.bins, data.column_of), data.n_samples, quantized=True)
    np.testing.assert_array_equal(out, labels)


def test_stump_cannot_solve_xor():
    points, labels = _xor_set()
    data = TrainData.from_matrix(points, labels)
    tree = fit_tree(data, initial_weights(labels), depth=1)
    out = tree.evaluate(bins_fetch(data.bins, data.column_of), data.n_samples, quantized=True)
    assert np.any(out != labels)


def test_raw_thresholds_reproduce_quantized_routing():
    points, labels = _separable_set(1)
    data = TrainData.from_matrix(points, labels)
    forest = boost(data, 5, depth=2)
    raw = forest.score(matrix_fetch(points, data.column_of), len(points))
    np.testing.assert_allclose(raw, _quantized_scores(forest, data))


def test_discrete_boosting_reaches_zero_training_error():
    points, labels = _separable_set(5)
    data = TrainData.from_matrix(points, labels)
    forest = boost(data, 50, depth=2, variant="discrete")
    scores = _quantized_scores(forest, data)
    assert np.all(np.sign(scores) == labels)
    assert all(e < 0.5 for e in forest.history.errors)


@pytest.mark.parametrize("variant", ["discrete", "real"])
def test_exponential_loss_never_increases(variant):
    rng = make_rng(9, "tests.noisy")
    points = rng.normal(size=(120, 5))
    labels = np.where(points[:, 0] + 0.8 * rng.normal(size=120) > 0, 1.0, -1.0)
    data = TrainData.from_matrix(points, labels)
    forest = boost(data, 30, depth=2, variant=variant)
    trace = forest.history.loss_trace
    assert len(trace) == len(forest)
    assert trace[0] <= 1.0 + 1e-12
    for before, after in zip(trace, trace[1:]):
        assert after <= before * (1 + 1e-12)
    if variant == "discrete":
        assert all(e < 0.5 for e in forest.history.errors)
    else:
        assert forest.tree_weights == tuple([1.0] * len(forest))


def test_realboost_leaves_are_smoothed_log_ratios():
    points = np.array([[0.0], [0.1], [0.9], [1.0]])
    labels = np.array([-1.0, -1.0, 1.0, 1.0])
    data = TrainData.from_matrix(points, labels)
    weights = np.full(4, 0.25)
    tree = fit_tree(data, weights, depth=1, variant="real")
    smoothing = 1.0 / 8.0
    expected = 0.5 * np.log((0.5 + smoothing) / smoothing)
    assert isinstance(tree.root.left, Leaf)
    assert tree.root.left.value == pytest.approx(-expected)
    assert tree.root.right.value == pytest.approx(expected)


def _brute_force_split(bins, labels, weights):
    best = None
    for column in range(bins.shape[0]):
        for t in range(N_BINS - 1):
            left = bins[column] <= t
            right = ~left
            if not left.any() or not right.any():
                continue
            lp = weights[left & (labels > 0)].sum()
            ln = weights[left & (labels < 0)].sum()
            rp = weights[right & (labels > 0)].sum()
            rn = weights[right & (labels < 0)].sum()
            crit = min(lp, ln) + min(rp, rn)
            if best is None or crit < best[2]:
                best = (column, t, crit)
    return best


@pytest.mark.parametrize("instance", range(20))
def test_root_split_matches_exhaustive_search(instance):
    rng = make_rng(instance, "tests.split")
    features = rng.normal(size=(200, 50))
    labels = np.where(rng.random(200) < 0.4, 1.0, -1.0)
    features[labels > 0, instance % 50] += 0.7
    # integer weights keep every partial sum exact
    weights = rng.integers(1, 100, size=200).astype(np.float64)
    data = TrainData.from_matrix(features, labels)
    found = best_split(data, np.arange(200), weights, "discrete")
    expected = _brute_force_split(data.bins, labels, weights)
    assert found == expected


def test_fit_tree_requires_both_classes():
    data = TrainData.from_matrix(np.random.default_rng(0).random((10, 2)), np.ones(10))
    with pytest.raises(InvalidInputError):
        fit_tree(data, np.ones(10), depth=2)


def test_unknown_variant_is_rejected():
    points, labels = _xor_set()
    with pytest.raises(InvalidInputError):
        boost(TrainData.from_matrix(points, labels), 3, variant="gentle")


def test_cascade_keeps_scores_of_surviving_windows(uniform_forest):
    rng = make_rng(3, "tests.cascade")
    features = rng.normal(size=(200, 2000))
    features[:100, :50] += 1.0
    indices = FeatureLayout.build(uniform_forest.bank, uniform_forest.window).indices
    column_of = {idx: col for col, idx in enumerate(indices)}
    fetch = matrix_fetch(features, column_of)

    calibrated = calibrate_cascade(uniform_forest, matrix_fetch(features[:100], column_of), 100)
    assert calibrated.cascade is not None and len(calibrated.cascade) == len(uniform_forest)

    full = calibrated.score(fetch, 200)
    early = calibrated.score(fetch, 200, use_cascade=True)
    partial = calibrated.partial_scores(fetch, 200)
    survives = np.all(partial >= np.array(calibrated.cascade)[:, None] - CASCADE_MARGIN, axis=0)
    np.testing.assert_array_equal(early[survives], full[survives])
    assert survives[:100].mean() >= 0.9


def test_forest_rejects_mismatched_weights():
    with pytest.raises(InvalidInputError):
        BoostedForest(trees=(), tree_weights=(1.0,), variant="discrete", depth=2)
