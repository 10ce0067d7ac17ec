"""Kernel balancing orchestration.

Builds calibration constraints from the left singular vectors of the
kernel matrix, searches the number of balanced dimensions r over a grid
to minimize the worst-case approximation-bias bound, optionally holds a
set of covariate margins to exact means first ("mean-first"), and
assembles balance diagnostics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    CalibrationProblem,
    WeightSolution,
    entropy_balance_state,
    margin_columns,
)
from .dataset import Dataset, one_hot
from .kernel import (
    DEFAULT_B_INTERVAL,
    KernelMatrix,
    distance_histogram,
    make_kernel,
    select_bandwidth,
)
from .spectral import DEFAULT_SVD_FLOOR, SpectralDecomposition, thin_svd

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BiasBound:
    """Worst-case approximation bias with the function-norm factor set to 1."""

    value: float
    per_dimension_imbalance: np.ndarray
    includes_all_columns: bool = True


@dataclass(frozen=True)
class KpopConfig:
    b: float | None = None               # default: variance-maximizing
    b_multiplier: float = 1.0
    min_dims: int = 1
    max_dims: int | None = None          # default: min(500, rank)
    increment: int = 5
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    mean_first_vars: list[str] | None = None
    require_convergence: bool = False
    svd_floor: float = DEFAULT_SVD_FLOOR
    b_search_interval: tuple[float, float] = DEFAULT_B_INTERVAL

    def __post_init__(self):
        if self.min_dims < 1:
            raise ValueError("min_dims must be >= 1")
        if self.increment < 1:
            raise ValueError("increment must be >= 1")
        if self.max_dims is not None and self.max_dims < self.min_dims:
            raise ValueError("max_dims must be >= min_dims")
        if not self.b_multiplier > 0:
            raise ValueError("b_multiplier must be positive")


@dataclass(frozen=True)
class GridPoint:
    r: int
    bound: float
    converged: bool
    residual: float


@dataclass(frozen=True)
class KpopReport:
    weights: WeightSolution
    chosen_r: int
    mean_first_dims: int
    b: float
    bias_bound_before: float
    bias_bound_after: float
    bias_bound_ratio: float
    l1_before: float
    l1_after: float
    ess: float
    n_to_90pct: int
    margin_table: dict[str, float]
    grid: list[GridPoint] = field(default_factory=list)
    scree_values: np.ndarray | None = None


def bias_bound(
    dec: SpectralDecomposition, w: np.ndarray, pop_w: np.ndarray
) -> BiasBound:
    """Eq.-style worst-case bound: l2 norm of the per-dimension imbalance
    between weighted sample and population singular-vector means, scaled
    by the square root of each singular value.

    All retained columns enter, including calibrated ones whose residual
    imbalance within tolerance still contributes.
    """
    if len(w) != dec.split_index:
        raise ValueError("sample weights inconsistent with decomposition")
    if len(pop_w) != dec.V.shape[0] - dec.split_index:
        raise ValueError("population weights inconsistent with decomposition")
    imbalance = pop_w @ dec.V_pop - w @ dec.V_sample
    value = float(np.linalg.norm(imbalance * np.sqrt(dec.A)))
    return BiasBound(value=value, per_dimension_imbalance=imbalance)


def build_constraints(
    dec: SpectralDecomposition,
    r: int,
    base_weights: np.ndarray,
    pop_weights: np.ndarray,
    mean_first: tuple[np.ndarray, np.ndarray] | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> CalibrationProblem:
    """Calibration problem on the first ``r`` singular vectors.

    ``mean_first`` prepends already-standardized margin columns (sample
    rows) and their targets as required constraints.
    """
    if r > dec.rank:
        raise ValueError(f"r={r} exceeds rank {dec.rank}")
    blocks: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    if mean_first is not None:
        mf_cols, mf_targets = mean_first
        blocks.append(mf_cols)
        targets.append(mf_targets)
    if r > 0:
        blocks.append(dec.V_sample[:, :r])
        targets.append(pop_weights @ dec.V_pop[:, :r])
    if not blocks:
        raise ValueError("no constraints: r=0 and no mean-first columns")
    return CalibrationProblem(
        constraints=np.hstack(blocks),
        targets=np.concatenate(targets),
        base_weights=base_weights,
        tolerance=tolerance,
        max_iterations=max_iterations,
    )


def l1_imbalance(K: KernelMatrix, w: np.ndarray, pop_w: np.ndarray) -> float:
    """Mean absolute gap between population and weighted-sample kernel
    column means (a kernel-density-distance surrogate, constant dropped)."""
    if len(w) != K.n_sample or len(pop_w) != K.n_rows - K.n_sample:
        raise ValueError("weight lengths inconsistent with kernel matrix")
    gap = pop_w @ K.population_block() - w @ K.sample_block()
    return float(np.abs(gap).sum() / K.n_sample)


def ess(w: np.ndarray) -> float:
    """Effective sample size 1 / sum(w^2) for simplex weights."""
    return float(1.0 / np.sum(np.asarray(w, dtype=float) ** 2))


def n_to_90pct(w: np.ndarray) -> int:
    """Smallest count of largest weights summing to at least 90%."""
    ordered = np.sort(np.asarray(w, dtype=float))[::-1]
    cum = np.cumsum(ordered)
    return int(np.searchsorted(cum, 0.9 * cum[-1] - 1e-12) + 1)


def margin_error_table(
    ds: Dataset,
    specs: list[str | tuple[str, ...]],
    w: np.ndarray,
) -> dict[str, float]:
    """Weighted absolute error per variable or interaction, in percentage
    points, each level weighted by its target-population proportion."""
    out: dict[str, float] = {}
    sample = ds.sample_table()
    pop = ds.population_table()
    for spec in specs:
        variables = (spec,) if isinstance(spec, str) else tuple(spec)
        name = " x ".join(variables)
        s_keys = [tuple(row) for row in sample[list(variables)].to_numpy()]
        p_keys = [tuple(row) for row in pop[list(variables)].to_numpy()]
        p_pop: dict[tuple, float] = {}
        for key, pw in zip(p_keys, ds.pop_weights):
            p_pop[key] = p_pop.get(key, 0.0) + float(pw)
        p_hat: dict[tuple, float] = {}
        for key, wi in zip(s_keys, w):
            p_hat[key] = p_hat.get(key, 0.0) + float(wi)
        err = sum(
            mass * abs(p_hat.get(key, 0.0) - mass) for key, mass in p_pop.items()
        )
        out[name] = 100.0 * err
    return out


def _standardized_mean_first(
    ds: Dataset, variables: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Margin columns centered and scaled over the stacked rows, with
    population-weighted targets transformed identically."""
    cols, targets, _ = margin_columns(ds, variables)
    pvals = []
    pop = ds.population_table()
    for var in variables:
        levels = ds.levels[var]
        keep = levels[:-1] if len(levels) > 1 else levels
        arr = pop[var].to_numpy()
        for lev in keep:
            pvals.append((arr == lev).astype(float))
    pop_cols = np.column_stack(pvals)
    stacked = np.vstack([cols, pop_cols])
    mean = stacked.mean(axis=0)
    sd = stacked.std(axis=0)
    sd[sd == 0] = 1.0
    return (cols - mean) / sd, (targets - mean) / sd


def solve(ds: Dataset, variables: list[str], cfg: KpopConfig | None = None) -> KpopReport:
    """Run the full kernel-balancing pipeline and return weights plus
    diagnostics.

    Deterministic for fixed inputs and config: the grid is scanned in
    ascending r with Newton warm starts, and exact bound ties go to the
    smallest r.
    """
    if cfg is None:
        cfg = KpopConfig()
    if not variables:
        raise ValueError("no covariates given")

    design = one_hot(ds, variables)
    if cfg.b is not None:
        b = cfg.b * cfg.b_multiplier
    else:
        hist = distance_histogram(design)
        b = select_bandwidth(hist, cfg.b_search_interval) * cfg.b_multiplier
    K = make_kernel(design, b)
    dec = thin_svd(K, floor=cfg.svd_floor)

    mean_first = None
    mf_dims = 0
    if cfg.mean_first_vars:
        mean_first = _standardized_mean_first(ds, cfg.mean_first_vars)
        mf_dims = mean_first[0].shape[1]

    max_dims = min(cfg.max_dims or 500, dec.rank)
    grid_rs = list(range(cfg.min_dims, max_dims + 1, cfg.increment))
    if not grid_rs:
        raise ValueError(
            f"empty r grid: min_dims={cfg.min_dims} exceeds usable rank {max_dims}"
        )

    q = ds.base_weights
    pop_w = ds.pop_weights
    points: list[GridPoint] = []
    solutions: list[WeightSolution] = []
    lam = None
    for r in grid_rs:
        prob = build_constraints(
            dec, r, q, pop_w, mean_first, cfg.tolerance, cfg.max_iterations
        )
        sol, lam = entropy_balance_state(prob, lam0=lam)
        bound = bias_bound(dec, sol.weights, pop_w).value
        points.append(GridPoint(r=r, bound=bound, converged=sol.converged,
                                residual=sol.residual))
        solutions.append(sol)

    # The bound at a non-converged point reflects weights that do not meet
    # their own constraints, so converged points always take precedence.
    candidates = [i for i in range(len(points)) if points[i].converged]
    if not candidates:
        if cfg.require_convergence:
            raise RuntimeError(
                "no grid point converged; best residual "
                f"{min(p.residual for p in points):.3g}"
            )
        candidates = list(range(len(points)))
    best = min(candidates, key=lambda i: (points[i].bound, points[i].r))
    chosen = points[best]
    sol = solutions[best]
    if not sol.converged:
        log.warning(
            "best grid point r=%d did not converge (residual %.3g)",
            chosen.r, sol.residual,
        )

    bound_before = bias_bound(dec, q, pop_w).value
    bound_after = chosen.bound
    l1_before = l1_imbalance(K, q, pop_w)
    l1_after = l1_imbalance(K, sol.weights, pop_w)
    margins = margin_error_table(
        ds, [v for v in variables if ds.is_categorical(v)], sol.weights
    )

    return KpopReport(
        weights=sol,
        chosen_r=chosen.r,
        mean_first_dims=mf_dims,
        b=b,
        bias_bound_before=bound_before,
        bias_bound_after=bound_after,
        bias_bound_ratio=bound_before / bound_after if bound_after > 0 else float("inf"),
        l1_before=l1_before,
        l1_after=l1_after,
        ess=ess(sol.weights),
        n_to_90pct=n_to_90pct(sol.weights),
        margin_table=margins,
        grid=points,
        scree_values=dec.A / dec.A[0],
    )
