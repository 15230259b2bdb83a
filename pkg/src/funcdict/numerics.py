"""Linear algebra helpers, assignment, and reproducible random streams."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInput

SYMMETRY_TOL = 1e-9


def _name_key(name: str) -> int:
    # stable across interpreters, unlike hash()
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


@dataclass
class RngStream:
    """Counter-based (Philox) random stream with named, independent substreams.

    ``child("data")`` and ``child("init")`` never overlap, and creating a new
    child does not advance the parent, so adding a consumer somewhere leaves
    every other stream untouched.
    """

    seed: int
    path: tuple = ()
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInput(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.seed = int(self.seed)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def child(self, name: str | int) -> "RngStream":
        return RngStream(self.seed, self.path + (_name_key(str(name)),))


@dataclass(frozen=True)
class Assignment:
    mapping: dict
    total_profit: float

    def pairs(self):
        return sorted(self.mapping.items())


def hungarian_max(profit) -> Assignment:
    """Maximum-profit injective assignment of rows to columns.

    Rectangular inputs behave as if padded with zero-profit dummy rows or
    columns; only real (row, col) pairs are reported, ``min(r, c)`` of them.
    """
    P = np.asarray(profit, dtype=float)
    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise InvalidInput(f"profit must be a non-empty 2-D matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise InvalidInput("profit matrix contains non-finite entries")
    r, c = P.shape
    m = max(r, c)
    padded = np.zeros((m, m))
    padded[:r, :c] = P
    # classical min-cost assignment on negated profits
    rows, cols = linear_sum_assignment(-padded)
    mapping = {int(i): int(j) for i, j in zip(rows, cols) if i < r and j < c}
    total = float(sum(P[i, j] for i, j in mapping.items()))
    return Assignment(mapping, total)


def canonicalize_signs(V, tol=1e-12):
    """Flip each column so its first non-negligible entry is positive."""
    V = np.array(V, dtype=float, copy=True)
    for j in range(V.shape[1]):
        col = V[:, j]
        idx = np.flatnonzero(np.abs(col) > tol * max(1.0, np.abs(col).max()))
        if idx.size and col[idx[0]] < 0:
            V[:, j] = -col
    return V


def sym_eigen(S):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidInput("matrix contains non-finite entries")
    if S.size and np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
        raise InvalidInput("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return w, canonicalize_signs(V)

