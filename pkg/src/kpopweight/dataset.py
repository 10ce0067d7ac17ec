"""Tabular survey + target-population data and its one-hot design matrix.

A :class:`Dataset` holds the stacked sample and population rows, with the
sample rows first.  Categorical covariates keep string levels; the level
set of a variable is the union of levels seen in the sample and in the
population, ordered by first appearance (sample before population).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

# Separator for intersectional strata keys.  Occurrences inside a level
# string are escaped rather than rejected.
STRATA_SEP = "§"


@dataclass(frozen=True)
class DesignMatrix:
    """Stacked design matrix: sample rows first, then population rows.

    Categorical variables contribute one binary column per level (no level
    dropped, no rescaling).  Numeric variables contribute one column scaled
    to unit variance.
    """

    matrix: np.ndarray
    column_names: list[str]
    n_sample: int
    all_categorical: bool = True
    constant_columns: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def sample_rows(self) -> np.ndarray:
        return self.matrix[: self.n_sample]

    def population_rows(self) -> np.ndarray:
        return self.matrix[self.n_sample:]


@dataclass(frozen=True)
class Dataset:
    """Validated survey sample + target population table.

    Rows are reordered so that the ``n_sample`` sample rows come first.
    ``base_weights`` (over sample rows) and ``pop_weights`` (over
    population rows) are normalized to sum to one.
    """

    table: pd.DataFrame              # covariates only, sample rows first
    sample_flag: np.ndarray          # 0/1 per row, aligned with table
    base_weights: np.ndarray         # length n_sample, sums to 1, all > 0
    pop_weights: np.ndarray          # length n_pop, sums to 1, all >= 0
    levels: dict[str, list[str]]     # per categorical variable, union order
    numeric_vars: frozenset[str] = frozenset()
    outcome: np.ndarray | None = None          # length n_sample
    row_ids: np.ndarray | None = None          # original row indices
    n_dropped: int = 0               # rows removed for missing values

    @property
    def n_sample(self) -> int:
        return int(self.sample_flag.sum())

    @property
    def n_pop(self) -> int:
        return len(self.sample_flag) - self.n_sample

    @property
    def variables(self) -> list[str]:
        return list(self.table.columns)

    def is_categorical(self, var: str) -> bool:
        return var not in self.numeric_vars

    def sample_table(self) -> pd.DataFrame:
        return self.table.iloc[: self.n_sample]

    def population_table(self) -> pd.DataFrame:
        return self.table.iloc[self.n_sample:]

    def to_csv(self, path: str | os.PathLike) -> None:
        """Write a CSV that :func:`load_csv` round-trips exactly."""
        out = self.table.copy()
        out["sample_flag"] = self.sample_flag
        bw = np.full(len(out), "", dtype=object)
        bw[: self.n_sample] = [repr(float(v)) for v in self.base_weights]
        out["base_weight"] = bw
        pw = np.full(len(out), "", dtype=object)
        pw[self.n_sample:] = [repr(float(v)) for v in self.pop_weights]
        out["pop_weight"] = pw
        if self.outcome is not None:
            y = np.full(len(out), "", dtype=object)
            y[: self.n_sample] = [repr(float(v)) for v in self.outcome]
            out["outcome"] = y
        out.to_csv(path, index=False)

    def roundtrip_roles(self) -> dict:
        roles = {
            "sample_col": "sample_flag",
            "covariates": self.variables,
            "base_weight_col": "base_weight",
            "pop_weight_col": "pop_weight",
        }
        if self.numeric_vars:
            roles["numeric"] = sorted(self.numeric_vars)
        if self.outcome is not None:
            roles["outcome_col"] = "outcome"
        return roles


def _normalize_simplex(w: np.ndarray, what: str, strict_positive: bool) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{what} contain non-finite values")
    if strict_positive and np.any(w <= 0):
        raise ValueError(f"{what} must all be positive")
    if not strict_positive and np.any(w < 0):
        raise ValueError(f"{what} must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError(f"{what} sum to zero")
    return w / total


def from_frame(
    df: pd.DataFrame,
    sample_col: str,
    covariates: list[str],
    base_weight_col: str | None = None,
    pop_weight_col: str | None = None,
    outcome_col: str | None = None,
    numeric: list[str] | None = None,
) -> Dataset:
    """Build a validated Dataset from a raw data frame.

    Rows with missing values in any role or covariate column are dropped
    with a logged count.  Covariates are categorical (string levels)
    unless listed in ``numeric``.
    """
    numeric_vars = frozenset(numeric or [])
    for col in [sample_col] + list(covariates):
        if col not in df.columns:
            raise ValueError(f"role column absent: {col!r}")
    for col in (base_weight_col, pop_weight_col, outcome_col):
        if col is not None and col not in df.columns:
            raise ValueError(f"role column absent: {col!r}")
    unknown = numeric_vars - set(covariates)
    if unknown:
        raise ValueError(f"numeric role names non-covariate columns: {sorted(unknown)}")

    df = df.reset_index(drop=False).rename(columns={"index": "_row_id"})

    flag_raw = df[sample_col]
    flag_num = pd.to_numeric(flag_raw, errors="coerce")
    if flag_num.isna().any() or not set(flag_num.dropna().unique()) <= {0, 1}:
        raise ValueError(f"sample_flag column {sample_col!r} is not binary 0/1")
    df["_flag"] = flag_num.astype(int)

    # Missing-value policy: drop the row, report the count.
    relevant = list(covariates) + ["_flag"]
    mask = df[relevant].notna().all(axis=1)
    if base_weight_col:
        mask &= ~(df["_flag"].eq(1) & df[base_weight_col].isna())
    if pop_weight_col:
        mask &= ~(df["_flag"].eq(0) & df[pop_weight_col].isna())
    if outcome_col:
        mask &= ~(df["_flag"].eq(1) & df[outcome_col].isna())
    n_dropped = int((~mask).sum())
    if n_dropped:
        log.warning("dropped %d rows with missing values", n_dropped)
    df = df[mask]

    # Sample rows first, stable within each block.
    df = pd.concat([df[df["_flag"] == 1], df[df["_flag"] == 0]])
    n_s = int((df["_flag"] == 1).sum())
    n_p = len(df) - n_s
    if n_s < 2:
        raise ValueError(f"empty or near-empty sample (N_s={n_s}, need >= 2)")
    if n_p < 2:
        raise ValueError(f"empty or near-empty population (N_pop={n_p}, need >= 2)")

    table = pd.DataFrame(index=range(len(df)))
    levels: dict[str, list[str]] = {}
    for var in covariates:
        if var in numeric_vars:
            vals = pd.to_numeric(df[var], errors="coerce")
            if vals.isna().any():
                raise ValueError(f"numeric covariate {var!r} has non-numeric values")
            table[var] = vals.to_numpy(dtype=float)
        else:
            vals = df[var].astype(str).to_numpy()
            table[var] = vals
            seen: list[str] = []
            known: set[str] = set()
            for v in vals:
                if v not in known:
                    known.add(v)
                    seen.append(v)
            levels[var] = seen

    if base_weight_col:
        bw = pd.to_numeric(df[base_weight_col].iloc[:n_s], errors="coerce").to_numpy()
        if np.isnan(bw).any():
            raise ValueError("non-numeric base weight")
        base_weights = _normalize_simplex(bw, "base weights", strict_positive=True)
    else:
        base_weights = np.full(n_s, 1.0 / n_s)

    if pop_weight_col:
        pw = pd.to_numeric(df[pop_weight_col].iloc[n_s:], errors="coerce").to_numpy()
        if np.isnan(pw).any():
            raise ValueError("non-numeric population weight")
        pop_weights = _normalize_simplex(pw, "population weights", strict_positive=False)
    else:
        pop_weights = np.full(n_p, 1.0 / n_p)

    outcome = None
    if outcome_col:
        outcome = pd.to_numeric(df[outcome_col].iloc[:n_s], errors="coerce").to_numpy(dtype=float)
        if np.isnan(outcome).any():
            raise ValueError("non-numeric outcome value")

    return Dataset(
        table=table,
        sample_flag=df["_flag"].to_numpy(),
        base_weights=base_weights,
        pop_weights=pop_weights,
        levels=levels,
        numeric_vars=numeric_vars,
        outcome=outcome,
        row_ids=df["_row_id"].to_numpy(),
        n_dropped=n_dropped,
    )


def load_csv(path: str | os.PathLike, roles: dict) -> Dataset:
    """Load a role-mapped CSV (RFC-4180, UTF-8, header required).

    ``roles`` keys: ``sample_col``, ``covariates`` (list), and optionally
    ``base_weight_col``, ``pop_weight_col``, ``outcome_col``, ``numeric``
    (list of covariates to treat as continuous).
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    if "sample_col" not in roles or "covariates" not in roles:
        raise ValueError("roles must include 'sample_col' and 'covariates'")
    df = pd.read_csv(path, dtype=str, encoding="utf-8")
    return from_frame(
        df,
        sample_col=roles["sample_col"],
        covariates=list(roles["covariates"]),
        base_weight_col=roles.get("base_weight_col"),
        pop_weight_col=roles.get("pop_weight_col"),
        outcome_col=roles.get("outcome_col"),
        numeric=roles.get("numeric"),
    )


def one_hot(ds: Dataset, variables: list[str] | None = None) -> DesignMatrix:
    """Full one-hot encoding over the union level set, no level dropped.

    Columns are variable-major; within a variable, levels keep their
    first-appearance order.  Binary indicator columns are never rescaled;
    numeric covariates are scaled to unit variance (computed over all
    rows) so that no variable dominates the distance by its units.
    """
    if variables is None:
        variables = ds.variables
    if not variables:
        raise ValueError("no variables to encode")
    cols: list[np.ndarray] = []
    names: list[str] = []
    constant: list[str] = []
    all_cat = True
    for var in variables:
        if var not in ds.table.columns:
            raise ValueError(f"variable not found: {var!r}")
        if ds.is_categorical(var):
            vals = ds.table[var].to_numpy()
            var_levels = ds.levels[var]
            if len(var_levels) == 1:
                constant.append(f"{var}:{var_levels[0]}")
                log.warning("variable %r has a single level; constant column kept", var)
            for lev in var_levels:
                cols.append((vals == lev).astype(float))
                names.append(f"{var}:{lev}")
        else:
            all_cat = False
            x = ds.table[var].to_numpy(dtype=float)
            sd = x.std()
            if sd == 0:
                constant.append(var)
                log.warning("numeric variable %r is constant; kept unscaled", var)
                sd = 1.0
            cols.append(x / sd)
            names.append(var)
    matrix = np.column_stack(cols)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("non-finite design entries")
    return DesignMatrix(
        matrix=matrix,
        column_names=names,
        n_sample=ds.n_sample,
        all_categorical=all_cat,
        constant_columns=constant,
    )


def _escape_level(level: str) -> str:
    return level.replace("\\", "\\\\").replace(STRATA_SEP, "\\" + STRATA_SEP)


def strata_labels(ds: Dataset, variables: list[str]) -> np.ndarray:
    """Deterministic intersectional strata key per row.

    Levels are joined with a reserved separator; a separator character
    inside a level string is escaped so distinct profiles cannot collide.
    """
    if not variables:
        raise ValueError("no strata variables given")
    for var in variables:
        if var not in ds.table.columns:
            raise ValueError(f"variable not found: {var!r}")
        if not ds.is_categorical(var):
            raise ValueError(f"strata variable {var!r} is numeric, not categorical")
    parts = [
        [_escape_level(v) for v in ds.table[var].to_numpy()] for var in variables
    ]
    return np.array([STRATA_SEP.join(vals) for vals in zip(*parts)], dtype=object)
