"""Thin SVD of the kernel matrix via its N_s x N_s Gram matrix.

With far more rows than columns, one symmetric eigensolve of K'K plus a
single product K U recovers the thin factors in O(N * N_s^2).  Condition
squaring makes the smallest directions unreliable, so columns whose
singular value falls below a relative floor are truncated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import KernelMatrix

# Relative floor below which Gram-route singular directions are noise.
DEFAULT_SVD_FLOOR = 1e-10


@dataclass(frozen=True)
class SpectralDecomposition:
    """Thin SVD factors K = V diag(A) U', split into sample/population rows."""

    V: np.ndarray            # (N_s + N_pop) x r
    A: np.ndarray            # r singular values, descending
    U: np.ndarray            # N_s x r
    split_index: int         # rows of V above this index are the sample block

    @property
    def rank(self) -> int:
        return len(self.A)

    @property
    def V_sample(self) -> np.ndarray:
        return self.V[: self.split_index]

    @property
    def V_pop(self) -> np.ndarray:
        return self.V[self.split_index:]


def thin_svd(K: KernelMatrix, floor: float = DEFAULT_SVD_FLOOR) -> SpectralDecomposition:
    """Thin SVD of the kernel matrix, truncated at ``floor`` * largest value.

    Deterministic: each column of U has its largest-magnitude entry made
    positive, with ties broken by the eigensolver's stable ordering.
    """
    M = K.values
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite kernel entries")
    gram = M.T @ M
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals, kind="stable")[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    a = np.sqrt(eigvals)
    if a[0] == 0.0:
        raise ValueError("all-zero kernel matrix")
    keep = a > floor * a[0]
    a = a[keep]
    u = eigvecs[:, order][:, keep]
    # Sign convention for run-to-run determinism.
    signs = np.sign(u[np.abs(u).argmax(axis=0), np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    v = (M @ u) / a
    return SpectralDecomposition(V=v, A=a, U=u, split_index=K.n_sample)


def scree(dec: SpectralDecomposition, k: int) -> np.ndarray:
    """First ``k`` singular values normalized by the largest (first is 1)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > dec.rank:
        raise ValueError(f"k={k} exceeds numerical rank {dec.rank}")
    return dec.A[:k] / dec.A[0]
