"""Thin SVD via the Gram route against a direct LAPACK oracle."""

import numpy as np
import pytest
import scipy.linalg

from kpopweight import make_kernel, one_hot, scree, thin_svd
from kpopweight.dataset import DesignMatrix
from kpopweight.kernel import KernelMatrix


def _as_kernel(m, n_sample):
    return KernelMatrix(values=np.asarray(m, dtype=float), b=1.0,
                        n_sample=n_sample)


def _oracle_svd(m):
    # Independent oracle: QR-bidiagonalization SVD, not the Gram route.
    return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def test_rank_one():
    m = np.outer([1.0, 2.0, 3.0], [4.0, 5.0])
    dec = thin_svd(_as_kernel(m, 2))
    assert dec.rank == 1
    assert dec.A[0] == pytest.approx(np.linalg.norm([1, 2, 3]) * np.linalg.norm([4, 5]))
    np.testing.assert_allclose(dec.V * dec.A @ dec.U.T, m, atol=1e-12)


def test_reconstruction_random(rng):
    for _ in range(20):
        n = int(rng.integers(5, 120))
        k = int(rng.integers(2, min(n, 40) + 1))
        m = rng.normal(size=(n, k))
        dec = thin_svd(_as_kernel(m, k))
        recon = dec.V * dec.A @ dec.U.T
        rel = np.linalg.norm(recon - m) / np.linalg.norm(m)
        assert rel <= 1e-8
        s = _oracle_svd(m)[1]
        np.testing.assert_allclose(dec.A, s[: dec.rank], atol=1e-8 * s[0])


def test_worked_example_kernel_rank(worked):
    # Four distinct profiles -> four significant singular directions; the
    # Gram route may retain a couple of dimensions of numerical noise at
    # the ~1e-8 relative level (condition squaring), never below the
    # truncation floor.
    K = make_kernel(one_hot(worked), 1.0)
    dec = thin_svd(K)
    s = _oracle_svd(K.values)[1]
    significant = int((s > 1e-8 * s[0]).sum())
    assert significant == 4
    assert dec.rank >= 4
    np.testing.assert_allclose(dec.A[:4], s[:4], atol=1e-10 * s[0])
    assert np.all(dec.A[4:] <= 1e-7 * dec.A[0])
    recon = dec.V * dec.A @ dec.U.T
    assert np.linalg.norm(recon - K.values) / np.linalg.norm(K.values) <= 1e-8


def test_orthonormal_factors(rng):
    m = rng.normal(size=(60, 12))
    dec = thin_svd(_as_kernel(m, 12))
    np.testing.assert_allclose(dec.U.T @ dec.U, np.eye(dec.rank), atol=1e-10)
    np.testing.assert_allclose(dec.V.T @ dec.V, np.eye(dec.rank), atol=1e-8)


def test_descending_order(rng):
    m = rng.normal(size=(40, 10))
    dec = thin_svd(_as_kernel(m, 10))
    assert np.all(np.diff(dec.A) <= 0)


def test_sign_convention_deterministic(rng):
    m = rng.normal(size=(30, 8))
    d1 = thin_svd(_as_kernel(m, 8))
    d2 = thin_svd(_as_kernel(m.copy(), 8))
    np.testing.assert_array_equal(d1.U, d2.U)
    np.testing.assert_array_equal(d1.V, d2.V)
    # Largest-magnitude entry of each U column is positive.
    peaks = d1.U[np.abs(d1.U).argmax(axis=0), np.arange(d1.rank)]
    assert np.all(peaks > 0)


def test_split_blocks(worked):
    K = make_kernel(one_hot(worked), 1.0)
    dec = thin_svd(K)
    assert dec.V_sample.shape[0] == 8
    assert dec.V_pop.shape[0] == 4
    np.testing.assert_array_equal(
        np.vstack([dec.V_sample, dec.V_pop]), dec.V
    )


def test_truncation_floor():
    base = np.diag([1.0, 1e-3, 1e-12])
    dec = thin_svd(_as_kernel(base, 3), floor=1e-10)
    assert dec.rank == 2
    dec_all = thin_svd(_as_kernel(base, 3), floor=1e-13)
    assert dec_all.rank == 3


def test_zero_matrix_rejected():
    with pytest.raises(ValueError, match="all-zero"):
        thin_svd(_as_kernel(np.zeros((4, 2)), 2))


def test_scree_normalized(worked):
    dec = thin_svd(make_kernel(one_hot(worked), 1.0))
    vals = scree(dec, 4)
    assert vals[0] == 1.0
    assert np.all(np.diff(vals) <= 0)
    with pytest.raises(ValueError, match="exceeds"):
        scree(dec, dec.rank + 1)
