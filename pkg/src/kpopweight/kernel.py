"""Gaussian kernel matrix with sample-unit bases, and bandwidth selection.

The kernel entry for rows ``i`` and ``j`` is ``exp(-||x_i - x_j||^2 / b)``.
For one-hot encoded categorical data the squared distance is exactly two
times the number of variables on which the rows differ, so the
distribution of pairwise distances is a small exact histogram.  The
bandwidth is chosen to maximize the variance of the off-diagonal kernel
entries over that distribution.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .dataset import DesignMatrix

# Search interval for the variance-maximizing bandwidth; the lower end is
# clipped away from 0 to keep exp(-d/b) from underflowing at tiny b.
DEFAULT_B_INTERVAL = (0.01, 2000.0)

_MAGIC = b"KPK1"


@dataclass(frozen=True)
class KernelMatrix:
    """(N_s + N_pop) x N_s Gaussian kernel matrix; bases = sample rows."""

    values: np.ndarray
    b: float
    n_sample: int

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def sample_block(self) -> np.ndarray:
        return self.values[: self.n_sample]

    def population_block(self) -> np.ndarray:
        return self.values[self.n_sample:]


@dataclass(frozen=True)
class DistanceHistogram:
    """Squared distances over off-diagonal (row, basis) pairs with counts."""

    distances: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_bins(self) -> int:
        return len(self.distances)


def _squared_distances(rows: np.ndarray, bases: np.ndarray) -> np.ndarray:
    # ||x||^2 + ||y||^2 - 2 x.y: exact for small-integer one-hot data, and
    # a single BLAS call for the cross term at full scale.
    row_sq = np.einsum("ij,ij->i", rows, rows)
    base_sq = np.einsum("ij,ij->i", bases, bases)
    d = row_sq[:, None] + base_sq[None, :] - 2.0 * rows @ bases.T
    np.maximum(d, 0.0, out=d)
    return d


def make_kernel(design: DesignMatrix, b: float) -> KernelMatrix:
    """Build the full (N_s+N_pop) x N_s Gaussian kernel matrix."""
    if not b > 0:
        raise ValueError(f"bandwidth must be positive, got {b}")
    if design.n_sample < 1:
        raise ValueError("design has no sample rows to use as bases")
    if not np.all(np.isfinite(design.matrix)):
        raise ValueError("non-finite design entries")
    d = _squared_distances(design.matrix, design.sample_rows())
    # Self-pairs have exactly zero distance, so the sample diagonal is 1.
    np.divide(d, -b, out=d)
    np.exp(d, out=d)
    return KernelMatrix(values=d, b=float(b), n_sample=design.n_sample)


def distance_histogram(design: DesignMatrix) -> DistanceHistogram:
    """Histogram of squared distances over all off-diagonal (row, basis) pairs.

    For pure categorical data distances are even integers and binning is
    exact.  With continuous covariates every distinct value becomes its
    own bin, which keeps the variance computation lossless.
    """
    if not np.all(np.isfinite(design.matrix)):
        raise ValueError("non-finite design entries")
    n_s = design.n_sample
    if design.all_categorical:
        # d = 2 * (#variables differing); bin exactly with integer counts,
        # chunked to avoid a second full-size temporary.  2 * n_columns
        # bounds the distance for any 0/1 design with one 1 per block.
        max_bin = 2 * len(design.column_names)
        counts = np.zeros(max_bin + 1, dtype=np.int64)
        bases = design.sample_rows()
        chunk = max(1, int(2**22 / max(n_s, 1)))
        for start in range(0, design.n_rows, chunk):
            d = _squared_distances(design.matrix[start:start + chunk], bases)
            idx = np.rint(d).astype(np.int64)
            counts += np.bincount(idx.ravel(), minlength=max_bin + 1)
        counts[0] -= n_s  # remove the diagonal self-pairs
        keep = counts > 0
        if counts[0] > 0:
            keep[0] = True
        distances = 1.0 * np.flatnonzero(keep)
        return DistanceHistogram(distances=distances, counts=counts[keep])
    d = _squared_distances(design.matrix, design.sample_rows())
    mask = np.ones(d.shape, dtype=bool)
    idx = np.arange(n_s)
    mask[idx, idx] = False
    distances, counts = np.unique(d[mask], return_counts=True)
    return DistanceHistogram(distances=distances, counts=counts)


def variance_of_k(b: float, hist: DistanceHistogram) -> float:
    """Variance of exp(-d/b) over the off-diagonal distance distribution."""
    if not b > 0:
        raise ValueError(f"bandwidth must be positive, got {b}")
    if hist.n_bins == 0:
        raise ValueError("empty distance histogram")
    p = hist.counts / hist.total
    k = np.exp(-hist.distances / b)
    m = float(p @ k)
    return float(p @ (k - m) ** 2)


def _golden_section_max(f, lo: float, hi: float, rel_tol: float = 1e-6) -> float:
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rel_tol * (abs(c) + abs(d)) / 2.0:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def select_bandwidth(
    hist: DistanceHistogram,
    search_interval: tuple[float, float] = DEFAULT_B_INTERVAL,
) -> float:
    """Variance-maximizing bandwidth via golden-section search.

    Deterministic; requires at least two distinct distance bins, since a
    single bin gives zero variance for every bandwidth.
    """
    lo, hi = search_interval
    if not (lo > 0 and hi > lo):
        raise ValueError(f"invalid search interval ({lo}, {hi})")
    if hist.n_bins < 2:
        raise ValueError("bandwidth undefined: no pairwise variation")
    return _golden_section_max(lambda b: variance_of_k(b, hist), lo, hi)


def save_kernel(K: KernelMatrix, path: str | os.PathLike) -> None:
    """Binary dump for caching: magic, dims, b, row-major f64 little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqqd", K.values.shape[0], K.values.shape[1], K.n_sample, K.b))
        fh.write(np.ascontiguousarray(K.values, dtype="<f8").tobytes())


def load_kernel(path: str | os.PathLike) -> KernelMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a kernel dump: bad magic {magic!r}")
        n_rows, n_cols, n_sample, b = struct.unpack("<qqqd", fh.read(32))
        data = np.frombuffer(fh.read(8 * n_rows * n_cols), dtype="<f8")
    if data.size != n_rows * n_cols:
        raise ValueError("truncated kernel dump")
    return KernelMatrix(values=data.reshape(n_rows, n_cols).copy(), b=b, n_sample=n_sample)
