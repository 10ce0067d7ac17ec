"""Bandwidth selection and the singular-value spectrum of the kernel.

Shows the exact distance histogram for one-hot data, the variance-of-K
curve that the bandwidth search maximizes, and the scree of the kernel
matrix that bounds how many dimensions are worth balancing.

Run:  python3 demos/bandwidth_and_spectrum.py
"""

import numpy as np
import pandas as pd

from kpopweight import (
    distance_histogram,
    make_kernel,
    one_hot,
    scree,
    select_bandwidth,
    thin_svd,
    variance_of_k,
)
from kpopweight.dataset import from_frame

rng = np.random.default_rng(3)
n_s, n_p = 150, 2000
n = n_s + n_p
frame = pd.DataFrame({
    "flag": [1] * n_s + [0] * n_p,
    "region": rng.choice(["ne", "mw", "so", "we"], size=n, p=[.2, .2, .35, .25]),
    "educ": rng.choice(["hs", "some", "ba", "grad"], size=n),
    "age": rng.choice(["18-34", "35-54", "55+"], size=n),
    "female": rng.choice(["0", "1"], size=n),
})
ds = from_frame(frame, sample_col="flag",
                covariates=["region", "educ", "age", "female"])
design = one_hot(ds)

hist = distance_histogram(design)
print("squared-distance histogram (d = 2 x #vars differing):")
for d, c in zip(hist.distances, hist.counts):
    bar = "#" * int(60 * c / hist.counts.max())
    print(f"  d={d:4.0f}  {c:9d}  {bar}")

b = select_bandwidth(hist)
print(f"\nvariance-maximizing bandwidth b = {b:.3f}")
for trial in [b / 4, b / 2, b, 2 * b, 4 * b]:
    print(f"  var K at b={trial:8.3f}: {variance_of_k(trial, hist):.5f}")

dec = thin_svd(make_kernel(design, b))
vals = scree(dec, min(15, dec.rank))
print(f"\nnumerical rank {dec.rank}; leading normalized singular values:")
for i, v in enumerate(vals):
    print(f"  {i + 1:3d}  {v:8.5f}  {'#' * int(60 * v)}")
