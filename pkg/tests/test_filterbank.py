import itertools

import numpy as np
import pytest

from fcf.exceptions import InsufficientDataError, InvalidInputError
from fcf.services.filterbank import (
    Filter,
    FilterBank,
    FilterFamily,
    checkerboard_filters,
    checkerboards_count,
    learn_pca,
    make_checkerboards,
    make_random,
    make_squares,
    make_uniform,
    pca_eigenpairs,
    select_filters,
)


@pytest.mark.parametrize("size,expected", [((2, 2), 7), ((3, 3), 25), ((4, 3), 39), ((4, 4), 61)])
def test_checkerboards_count(size, expected):
    bank = make_checkerboards(*size)
    assert len(bank) == expected
    assert checkerboards_count(*size) == expected


@pytest.mark.parametrize("max_rows,max_cols", list(itertools.product(range(1, 7), range(1, 7))))
def test_checkerboards_have_no_duplicates_or_negations(max_rows, max_cols):
    filters = checkerboard_filters(max_rows, max_cols)
    assert len(filters) == checkerboards_count(max_rows, max_cols)
    seen = set()
    for f in filters:
        key = (f.weights.shape, f.weights.tobytes())
        negated = (f.weights.shape, (-f.weights).tobytes())
        assert key not in seen
        assert negated not in seen
        seen.add(key)
    assert len({f.id for f in filters}) == len(filters)


def test_checkerboard_patterns():
    bank = make_checkerboards(2, 2)
    by_id = {f.id: f.weights for f in bank.filters}
    np.testing.assert_array_equal(by_id["c2x2"], [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(by_id["h1x2s1"], [[1, -1]])
    np.testing.assert_array_equal(by_id["v2x1s1"], [[1], [-1]])
    assert all(np.isin(w, (-1, 0, 1)).all() for w in by_id.values())


def test_uniform_bank_is_a_single_cell():
    bank = make_uniform(4)
    assert len(bank) == 1
    assert bank.filters[0].weights.shape == (1, 1)
    assert bank.cell_px == bank.eval_stride_px == 4


def test_squares_bank():
    bank = make_squares(16)
    assert [f.rows for f in bank.filters] == list(range(1, 17))
    assert all(np.all(f.weights == 1) for f in bank.filters)


def test_random_bank_is_deterministic_and_non_constant():
    a = make_random(50, seed=3)
    b = make_random(50, seed=3)
    c = make_random(50, seed=4)
    assert a == b
    assert a != c
    for f in a.filters:
        assert f.rows <= 4 and f.cols <= 4
        assert set(np.unique(f.weights)) == {-1.0, 1.0}


def test_random_bank_needs_two_cells():
    with pytest.raises(InvalidInputError):
        make_random(5, max_rows=1, max_cols=1)


def test_filter_validation():
    with pytest.raises(InvalidInputError):
        Filter(id="zero", weights=np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        Filter(id="big", weights=np.ones((65, 1)))
    with pytest.raises(InvalidInputError):
        Filter(id="nan", weights=np.array([[1.0, np.nan]]))


def test_expanded_kernel_replicates_cells():
    f = Filter(id="h", weights=np.array([[1.0, -1.0]]))
    kernel = f.expanded(3)
    assert kernel.shape == (3, 6)
    assert np.all(kernel[:, :3] == 1) and np.all(kernel[:, 3:] == -1)


def test_bank_rejects_mixed_channel_tags():
    shared = Filter(id="a", weights=np.ones((1, 1)))
    tagged = Filter(id="b", weights=np.ones((1, 1)), channel=2)
    with pytest.raises(InvalidInputError):
        FilterBank(family=FilterFamily.INFORMED, filters=(shared, tagged))
    with pytest.raises(InvalidInputError):
        FilterBank(family=FilterFamily.INFORMED, filters=(shared,), per_channel=True)


def _pca_patches(rng, n=1200, channels=range(10)):
    scales = np.concatenate([[6.0, 4.0, 3.0, 2.5], np.linspace(2.0, 0.2, 96)])
    return {c: (rng.normal(size=(n, 100)) * scales).reshape(n, 10, 10) for c in channels}


def test_pca_all_data_gives_forty_orthonormal_filters(rng):
    bank = learn_pca({"all": _pca_patches(rng)}, k=4)
    assert len(bank) == 40
    assert bank.family == FilterFamily.PCA_ALL
    assert bank.per_channel and bank.cell_px == 1 and bank.eval_stride_px == 2
    for channel in range(10):
        idx = bank.channel_filters(channel)
        assert len(idx) == 4
        w = np.array([bank.filters[i].weights.ravel() for i in idx])
        np.testing.assert_allclose(w @ w.T, np.eye(4), atol=1e-6)
        assert list(bank.eigenvalues[channel]) == sorted(bank.eigenvalues[channel], reverse=True)


def test_pca_eight_filters_per_channel(rng):
    bank = learn_pca({"all": _pca_patches(rng, channels=range(10))}, k=8)
    assert len(bank) == 80


def test_pca_foreground_takes_half_from_each_split(rng):
    patches = {"background": _pca_patches(rng), "foreground": _pca_patches(rng)}
    bank = learn_pca(patches, k=4, split="foreground")
    assert bank.family == FilterFamily.PCA_FOREGROUND
    ids = [bank.filters[i].id for i in bank.channel_filters(0)]
    assert ids == ["pcab0c0", "pcab1c0", "pcaf0c0", "pcaf1c0"]


def test_pca_foreground_needs_even_k(rng):
    with pytest.raises(InvalidInputError):
        learn_pca({"background": _pca_patches(rng), "foreground": _pca_patches(rng)}, k=3, split="foreground")


def test_pca_reports_the_short_channel(rng):
    patches = _pca_patches(rng)
    patches[6] = patches[6][:500]
    with pytest.raises(InsufficientDataError, match="channel 6"):
        learn_pca({"all": patches}, k=4)


def _jacobi_eigenvalues(a: np.ndarray, sweeps: int = 30, tol: float = 1e-14):
    """Cyclic Jacobi rotations on a dense symmetric matrix."""
    a = a.copy()
    n = len(a)
    v = np.eye(n)
    scale = np.abs(a).max()
    for _ in range(sweeps):
        if np.sqrt(np.sum(np.tril(a, -1) ** 2)) < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def test_pca_eigenpairs_match_jacobi(rng):
    patches = _pca_patches(rng, n=1500, channels=[0])[0]
    values, vectors = pca_eigenpairs(patches)

    flat = patches.reshape(len(patches), -1)
    centred = flat - flat.mean(axis=0)
    covariance = centred.T @ centred / len(flat)
    ref_values, ref_vectors = _jacobi_eigenvalues(covariance)

    np.testing.assert_allclose(values, ref_values, atol=1e-8)
    for i in range(3):
        assert abs(abs(vectors[:, i] @ ref_vectors[:, i]) - 1.0) < 1e-6


def test_select_filters_keeps_order_and_tags():
    bank = make_checkerboards(2, 2)
    shared = select_filters(bank, [(3, None), (0, None)])
    assert [f.id for f in shared.filters] == [bank.filters[3].id, bank.filters[0].id]
    assert not shared.per_channel
    tagged = select_filters(bank, [(1, 0), (1, 4)])
    assert tagged.per_channel
    assert [f.channel for f in tagged.filters] == [0, 4]


def test_bank_id_is_stable():
    assert make_checkerboards().bank_id == make_checkerboards().bank_id
    assert make_checkerboards().bank_id != make_uniform().bank_id
