"""Maximum-entropy calibration on arbitrary constraint matrices.

The primal program minimizes the KL divergence sum w_i log(w_i / q_i)
over simplex weights subject to weighted-mean constraints.  The dual is
an unconstrained smooth problem in one multiplier per constraint,

    w_i(lam) = q_i exp(-a_i . lam) / sum_j q_j exp(-a_j . lam),

solved here by damped Newton iterations.  Raking on covariate margins
and post-stratification are provided as baselines on the same weight
representation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg.blas import dsyrk
from scipy.special import xlogy

from .dataset import Dataset, strata_labels

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_MAX_ITERATIONS = 500
_RIDGE = 1e-10
_MAX_HALVINGS = 50
# Stop when the best residual has not improved by a relative _STALL_RTOL
# for _STALL_WINDOW consecutive iterations (near-infeasible targets make
# Newton grind without progress; a feasible solve converges far sooner).
_STALL_WINDOW = 30
_STALL_RTOL = 1e-3


@dataclass(frozen=True)
class CalibrationProblem:
    constraints: np.ndarray              # N_s x m, rows = sampled units
    targets: np.ndarray                  # m population feature means
    base_weights: np.ndarray             # N_s simplex vector q
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        a = np.asarray(self.constraints, dtype=float)
        t = np.asarray(self.targets, dtype=float)
        if a.ndim != 2 or a.shape[1] != t.shape[0]:
            raise ValueError(
                f"constraints {a.shape} inconsistent with targets {t.shape}"
            )
        if a.shape[0] != len(self.base_weights):
            raise ValueError("constraints rows inconsistent with base weights")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite constraint entries")
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite targets")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class WeightSolution:
    weights: np.ndarray
    converged: bool
    residual: float          # max abs constraint violation, original units
    iterations: int
    divergence: float        # sum w log(w / q)
    infeasible_levels: list[str] = field(default_factory=list)


def _divergence(w: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(xlogy(w, w / q)))


def _weights_at(lam: np.ndarray, a_std: np.ndarray, q: np.ndarray) -> np.ndarray:
    e = -a_std @ lam
    e -= e.max()
    w = q * np.exp(e)
    return w / w.sum()


def entropy_balance(
    prob: CalibrationProblem, lam0: np.ndarray | None = None
) -> WeightSolution:
    """Solve the entropy-balancing dual by Newton's method.

    Constraint columns are centered by their targets and scaled by the
    sample standard deviation for conditioning; convergence is judged on
    the residual in the original problem units.  Infeasible targets or an
    exhausted iteration budget return the best iterate with
    ``converged=False`` rather than raising, so feasibility boundaries
    can be probed cheaply.

    ``lam0`` warm-starts the multipliers (in the internal standardized
    coordinates, padded with zeros for newly added constraints).
    """
    sol, _ = entropy_balance_state(prob, lam0)
    return sol


def entropy_balance_state(
    prob: CalibrationProblem, lam0: np.ndarray | None = None
) -> tuple[WeightSolution, np.ndarray]:
    """As :func:`entropy_balance`, also returning the multiplier vector
    of the best iterate for warm-starting a related problem."""
    a = np.asarray(prob.constraints, dtype=float)
    t = np.asarray(prob.targets, dtype=float)
    q = np.asarray(prob.base_weights, dtype=float)
    m = a.shape[1]

    scale = a.std(axis=0)
    scale[scale == 0] = 1.0
    a_std = (a - t) / scale

    lam = np.zeros(m)
    if lam0 is not None:
        lam[: min(len(lam0), m)] = lam0[: min(len(lam0), m)]

    w = _weights_at(lam, a_std, q)
    g = a_std.T @ w                     # standardized residual
    resid = float(np.max(np.abs(g * scale)))
    best_w, best_resid, best_iter, best_lam = w, resid, 0, lam.copy()
    last_progress, progress_mark = 0, resid

    iterations = 0
    for iterations in range(1, prob.max_iterations + 1):
        if best_resid <= prob.tolerance:
            break
        if iterations - last_progress > _STALL_WINDOW:
            break                        # no meaningful progress; give up
        # Weighted covariance Hessian via a symmetric rank-k update on
        # sqrt(w)-scaled rows (half the flops of a general matmul).
        tmp = a_std * np.sqrt(w)[:, None]
        h = dsyrk(1.0, tmp, trans=1)
        h += np.triu(h, 1).T
        h -= np.outer(g, g)
        direction = None
        ridge = _RIDGE
        for _ in range(3):
            h[np.diag_indices_from(h)] += ridge
            try:
                direction = scipy.linalg.cho_solve(
                    scipy.linalg.cho_factor(h, lower=True, check_finite=False),
                    g, check_finite=False)
                break
            except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
                ridge *= 1e4
        if direction is None:
            direction = np.linalg.lstsq(h, g, rcond=None)[0]

        # Backtracking on the residual norm (halving line search).
        g_norm = np.linalg.norm(g)
        step = 1.0
        improved = False
        for _ in range(_MAX_HALVINGS):
            lam_try = lam + step * direction
            w_try = _weights_at(lam_try, a_std, q)
            g_try = a_std.T @ w_try
            if np.linalg.norm(g_try) < g_norm:
                lam, w, g = lam_try, w_try, g_try
                improved = True
                break
            step /= 2.0
        if not improved:
            break                        # stalled; best iterate stands
        resid = float(np.max(np.abs(g * scale)))
        if resid < best_resid:
            best_w, best_resid, best_iter, best_lam = w, resid, iterations, lam.copy()
        if resid < progress_mark * (1.0 - _STALL_RTOL):
            last_progress, progress_mark = iterations, resid

    converged = best_resid <= prob.tolerance
    sol = WeightSolution(
        weights=best_w,
        converged=converged,
        residual=best_resid,
        iterations=best_iter if converged else iterations,
        divergence=_divergence(best_w, q),
    )
    return sol, best_lam


def margin_columns(
    ds: Dataset, variables: list[str], drop_last: bool = True
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """One-hot margin constraint columns with population targets.

    One level per variable is dropped (the last in union order) since the
    simplex constraint already fixes each variable's block total; balance
    on the retained levels implies balance on the dropped one.
    Returns (sample constraint matrix, targets, column names).
    """
    cols: list[np.ndarray] = []
    targets: list[float] = []
    names: list[str] = []
    pop_w = ds.pop_weights
    for var in variables:
        if var not in ds.table.columns:
            raise ValueError(f"variable not found: {var!r}")
        if not ds.is_categorical(var):
            raise ValueError(f"margin variable {var!r} is numeric, not categorical")
        levels = ds.levels[var]
        keep = levels[:-1] if (drop_last and len(levels) > 1) else levels
        svals = ds.sample_table()[var].to_numpy()
        pvals = ds.population_table()[var].to_numpy()
        for lev in keep:
            cols.append((svals == lev).astype(float))
            targets.append(float(pop_w @ (pvals == lev)))
            names.append(f"{var}:{lev}")
    return np.column_stack(cols), np.asarray(targets), names


def _zero_support_levels(ds: Dataset, variables: list[str]) -> list[str]:
    out = []
    for var in variables:
        svals = ds.sample_table()[var].to_numpy()
        pvals = ds.population_table()[var].to_numpy()
        for lev in ds.levels[var]:
            mass = float(ds.pop_weights @ (pvals == lev))
            if mass > 0 and not np.any(svals == lev):
                out.append(f"{var}:{lev}")
    return out


def rake_margins(
    ds: Dataset,
    variables: list[str],
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> WeightSolution:
    """Mean calibration (raking) on categorical covariate margins."""
    constraints, targets, _ = margin_columns(ds, variables)
    infeasible = _zero_support_levels(ds, variables)
    sol = entropy_balance(
        CalibrationProblem(
            constraints=constraints,
            targets=targets,
            base_weights=ds.base_weights,
            tolerance=tolerance,
            max_iterations=max_iterations,
        )
    )
    if infeasible:
        log.warning("raking infeasible: no sample support for %s", infeasible)
        return WeightSolution(
            weights=sol.weights,
            converged=False,
            residual=sol.residual,
            iterations=sol.iterations,
            divergence=sol.divergence,
            infeasible_levels=infeasible,
        )
    return sol


@dataclass(frozen=True)
class PostStratResult:
    solution: WeightSolution
    dropped_strata: dict[str, float]     # stratum key -> population mass

    @property
    def dropped_mass(self) -> float:
        return float(sum(self.dropped_strata.values()))


def post_stratify(ds: Dataset, variables: list[str]) -> PostStratResult:
    """Population-share / sample-share weights within intersectional strata.

    Population strata with no sampled units are dropped and the remaining
    population shares renormalized; the dropped strata and their mass are
    reported.  Weights are constant within strata (scaled by base
    weights when non-uniform).
    """
    labels = strata_labels(ds, variables)
    s_labels = labels[: ds.n_sample]
    p_labels = labels[ds.n_sample:]

    sample_share: dict[str, float] = {}
    for lab, qi in zip(s_labels, ds.base_weights):
        sample_share[lab] = sample_share.get(lab, 0.0) + float(qi)
    pop_share: dict[str, float] = {}
    for lab, pw in zip(p_labels, ds.pop_weights):
        pop_share[lab] = pop_share.get(lab, 0.0) + float(pw)

    dropped = {
        lab: mass for lab, mass in pop_share.items()
        if mass > 0 and lab not in sample_share
    }
    kept_mass = sum(m for lab, m in pop_share.items() if lab in sample_share)
    if kept_mass <= 0:
        raise ValueError("no stratum overlap between sample and population")

    stratum_w = {
        lab: (pop_share.get(lab, 0.0) / kept_mass) / share
        for lab, share in sample_share.items()
    }
    w = np.array([qi * stratum_w[lab] for lab, qi in zip(s_labels, ds.base_weights)])
    w = w / w.sum()

    sol = WeightSolution(
        weights=w,
        converged=True,
        residual=0.0,
        iterations=0,
        divergence=_divergence(w, ds.base_weights),
    )
    return PostStratResult(solution=sol, dropped_strata=dropped)
