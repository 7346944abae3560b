"""Longitudinal data container.

Subjects are kept individually and, for vectorized estimating-equation
sums, grouped by their pattern of occasion positions: every subject in a
group shares the same working correlation matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, RankError

__all__ = ["LongitudinalDataset", "PatternGroup"]


@dataclass(frozen=True)
class PatternGroup:
    positions: tuple          # 1-based occasion positions shared by the group
    subjects: np.ndarray      # subject indices, shape (g,)
    rows: np.ndarray          # row indices into the stacked arrays, shape (g, m)
    X: np.ndarray             # (g, m, p)


class LongitudinalDataset:
    """Subjects with response vectors ``y_i`` (length m_i) and designs ``X_i`` (m_i x p).

    Parameters
    ----------
    ys, Xs : sequences of arrays
        Per-subject responses and design matrices.
    positions : sequence of int sequences, optional
        1-based occasion positions per subject, strictly increasing.
        Defaults to ``1..m_i``.
    ids : sequence, optional
        Subject labels, used only for reporting.
    check_rank : bool
        Reject designs whose stacked matrix is not of full column rank.
    """

    def __init__(self, ys, Xs, positions=None, ids=None, *, check_rank=True):
        if len(ys) != len(Xs):
            raise InvalidInputError("ys and Xs must have the same number of subjects")
        if len(ys) == 0:
            raise InvalidInputError("dataset has no subjects")
        self.ys = [np.asarray(y, dtype=float).ravel() for y in ys]
        self.Xs = []
        for i, (y, X) in enumerate(zip(self.ys, Xs)):
            X = np.asarray(X, dtype=float)
            if X.ndim == 1:
                X = X.reshape(-1, 1)
            if X.shape[0] != y.size or y.size == 0:
                raise InvalidInputError(f"subject {i}: design has {X.shape[0]} rows but {y.size} responses")
            self.Xs.append(X)
        p = {X.shape[1] for X in self.Xs}
        if len(p) != 1:
            raise InvalidInputError(f"all designs need the same column count, got {sorted(p)}")
        self.p = p.pop()
        if positions is None:
            positions = [tuple(range(1, y.size + 1)) for y in self.ys]
        self.positions = []
        for i, (pos, y) in enumerate(zip(positions, self.ys)):
            pos = tuple(int(t) for t in pos)
            if len(pos) != y.size or pos[0] < 1 or any(b <= a for a, b in zip(pos, pos[1:])):
                raise InvalidInputError(f"subject {i}: positions must be strictly increasing and >= 1")
            self.positions.append(pos)
        self.ids = list(ids) if ids is not None else list(range(len(self.ys)))

        self.sizes = np.array([y.size for y in self.ys])
        self.n = len(self.ys)
        self.N = int(self.sizes.sum())
        self.y = np.concatenate(self.ys)
        self.X = np.vstack(self.Xs)
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise InvalidInputError("responses and covariates must be finite")
        if self.N <= self.p:
            raise InvalidInputError(f"need more observations than covariates (N={self.N}, p={self.p})")
        if check_rank:
            rank = _column_rank(self.X)
            if rank < self.p:
                raise RankError(f"stacked design has rank {rank} < p={self.p}")
        self.max_position = max(pos[-1] for pos in self.positions)
        self.max_cluster_size = int(self.sizes.max())
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.groups = self._build_groups()

    @classmethod
    def from_long(cls, y, X, subject, positions=None, **kwargs):
        """Build from stacked arrays, grouping rows by ``subject`` in order of first appearance."""
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        subject = np.asarray(subject)
        _, first = np.unique(subject, return_index=True)
        order = subject[np.sort(first)]
        ys, Xs, pos, ids = [], [], [], []
        for s in order:
            mask = subject == s
            ys.append(y[mask])
            Xs.append(X[mask])
            if positions is not None:
                pos.append(np.asarray(positions)[mask])
            ids.append(s)
        return cls(ys, Xs, positions=pos if positions is not None else None, ids=ids, **kwargs)

    def _build_groups(self):
        patterns = {}
        for i, pos in enumerate(self.positions):
            patterns.setdefault(pos, []).append(i)
        groups = []
        for pos in sorted(patterns, key=lambda t: (len(t), t)):
            idx = np.array(patterns[pos])
            rows = self.starts[idx][:, None] + np.arange(len(pos))[None, :]
            groups.append(PatternGroup(pos, idx, rows, self.X[rows]))
        return groups

    def with_responses(self, ys):
        """Same designs and positions with new responses (rank check skipped)."""
        return LongitudinalDataset(ys, self.Xs, self.positions, self.ids, check_rank=False)

    def subset(self, indices):
        idx = list(indices)
        return LongitudinalDataset([self.ys[i] for i in idx], [self.Xs[i] for i in idx],
                                   [self.positions[i] for i in idx], [self.ids[i] for i in idx],
                                   check_rank=False)

    def split(self, stacked):
        """Split a stacked length-N vector into per-subject pieces."""
        return np.split(np.asarray(stacked), np.cumsum(self.sizes)[:-1])

    def __repr__(self):
        return f"LongitudinalDataset(n={self.n}, N={self.N}, p={self.p}, max_m={self.max_cluster_size})"


def _column_rank(X):
    _, R, _ = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return 0
    tol = diag[0] * max(X.shape) * np.finfo(float).eps
    return int(np.sum(diag > tol))
