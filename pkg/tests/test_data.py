import numpy as np
import pytest

from geee import InvalidInputError, LongitudinalDataset, RankError


def test_basic_shapes():
    d = LongitudinalDataset([[1.0, 2.0], [3.0]], [np.ones((2, 1)), np.ones((1, 1))])
    assert (d.n, d.N, d.p, d.max_cluster_size) == (2, 3, 1, 2)
    assert d.positions == [(1, 2), (1,)]
    assert [len(g.subjects) for g in d.groups] == [1, 1]


def test_from_long_groups_by_first_appearance():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    d = LongitudinalDataset.from_long(y, X, subject=np.array(["b", "a", "b", "a", "c"]))
    assert d.ids == ["b", "a", "c"]
    assert np.array_equal(d.ys[0], [1.0, 3.0]) and np.array_equal(d.ys[1], [2.0, 4.0])


def test_split_inverts_stacking(balanced):
    pieces = balanced.split(balanced.y)
    assert all(np.array_equal(a, b) for a, b in zip(pieces, balanced.ys))


def test_pattern_groups_cover_every_row(unbalanced):
    rows = np.concatenate([g.rows.ravel() for g in unbalanced.groups])
    assert np.array_equal(np.sort(rows), np.arange(unbalanced.N))
    for g in unbalanced.groups:
        assert np.array_equal(g.X, unbalanced.X[g.rows])


@pytest.mark.parametrize("kwargs,err", [
    (dict(ys=[[1.0, 2.0]], Xs=[np.ones((3, 1))]), InvalidInputError),
    (dict(ys=[[1.0], [2.0]], Xs=[np.ones((1, 1)), np.ones((1, 2))]), InvalidInputError),
    (dict(ys=[[1.0, np.nan]], Xs=[np.ones((2, 1))]), InvalidInputError),
    (dict(ys=[[1.0, 2.0]], Xs=[np.ones((2, 1))], positions=[[2, 2]]), InvalidInputError),
    (dict(ys=[[1.0, 2.0]], Xs=[np.ones((2, 1))], positions=[[0, 1]]), InvalidInputError),
    (dict(ys=[[1.0]], Xs=[np.ones((1, 1))]), InvalidInputError),
    (dict(ys=[], Xs=[]), InvalidInputError),
])
def test_invalid_inputs(kwargs, err):
    with pytest.raises(err):
        LongitudinalDataset(**kwargs)


def test_rank_deficiency_detected():
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(RankError):
        LongitudinalDataset([np.arange(3.0), np.arange(3.0)], [X[:3], X[3:]])
