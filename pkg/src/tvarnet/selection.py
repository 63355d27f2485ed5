"""Interleaved M-fold cross-validation and (lam, gamma) grid search."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .optimizer import AdmmConfig, WindowedProblem, admm_solve, build_design, stack_from_coeffs
from .windowing import WindowPartition, collapse_problem

__all__ = [
    "CvPlan",
    "GridSpec",
    "PointGrid",
    "GridResult",
    "make_cv_plan",
    "default_grid",
    "lambda_max",
    "solver_config",
    "cv_score",
    "grid_search",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "TVARNET_WORKERS"


@dataclass(frozen=True)
class CvPlan:
    """Fold m validates the targets t in [L+1, T] with t mod M == m."""

    L: int
    T: int
    M: int

    @property
    def targets(self) -> np.ndarray:
        return np.arange(self.L + 1, self.T + 1)

    def validation_times(self, m: int) -> np.ndarray:
        t = self.targets
        return t[t % self.M == m]

    def validation_mask(self, m: int) -> np.ndarray:
        """Boolean over target rows (row r is instant L+1+r)."""
        return self.targets % self.M == m

    def train_mask(self, m: int) -> np.ndarray:
        return ~self.validation_mask(m)

    def folds(self):
        return range(self.M)


def make_cv_plan(L: int, T: int, M: int) -> CvPlan:
    if M < 2:
        raise ValueError("need at least two folds")
    if T - L < M:
        raise ValueError(f"{T - L} target instants cannot fill {M} folds")
    return CvPlan(L, T, M)


@dataclass(frozen=True)
class GridSpec:
    """Candidate (lam, gamma) points; the product of two lists by default."""

    lambdas: tuple
    gammas: tuple

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        gam = tuple(float(x) for x in self.gammas)
        if not lam or not gam:
            raise ValueError("grid must be nonempty")
        if any(x <= 0 for x in lam + gam) or not all(np.isfinite(lam + gam)):
            raise ValueError("grid values must be finite and positive")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "gammas", gam)

    def points(self) -> list:
        """All grid points in canonical order: lam descending, then gamma descending."""
        return sorted({(lam, gam) for lam in self.lambdas for gam in self.gammas}, reverse=True)


@dataclass(frozen=True)
class PointGrid:
    """An explicit list of (lam, gamma) points, e.g. read from a grid file."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((float(a), float(b)) for a, b in self.pairs)
        if not pairs:
            raise ValueError("grid must be nonempty")
        if any(not (np.isfinite(v) and v > 0) for pair in pairs for v in pair):
            raise ValueError("grid values must be finite and positive")
        object.__setattr__(self, "pairs", pairs)

    def points(self) -> list:
        return sorted(set(self.pairs), reverse=True)


@dataclass
class GridResult:
    best_lambda: float
    best_gamma: float
    best_score: float
    table: list  # rows (lam, gamma, score, per-fold scores)
    on_boundary: bool


def lambda_max(problem: WindowedProblem) -> float:
    """Smallest lam that zeroes every edge filter when gamma = 0."""
    N, PL, P = problem.shape
    g = problem.H.reshape(N, PL // P, P, P)
    return float(np.sqrt(np.sum(g ** 2, axis=1)).max())


def default_grid(problem: WindowedProblem, size: int = 5, decades: float = 4.0) -> GridSpec:
    """size x size log grid spanning ``decades`` below lambda_max."""
    top = lambda_max(problem)
    if top <= 0:
        top = 1.0
    vals = top * np.logspace(-decades, 0.0, size)
    return GridSpec(tuple(vals), tuple(vals))


def solver_config(base: AdmmConfig, lam: float, gamma: float, method: str = "proposed") -> AdmmConfig:
    """Solver settings for one grid point; the baseline uses only lam (as its TV weight)."""
    if method == "baseline":
        return replace(base, lam=0.0, gamma=lam, tv_group="block")
    if method != "proposed":
        raise ValueError(f"unknown method {method!r}")
    return replace(base, lam=lam, gamma=gamma, tv_group="edge")


def _fold_score(problem: WindowedProblem, plan: CvPlan, m: int, cfg: AdmmConfig, init=None):
    fold = problem.with_mask(plan.train_mask(m))
    coeffs, report = admm_solve(fold, cfg, init)
    B = stack_from_coeffs(coeffs)
    R = problem.residuals(B)[plan.validation_mask(m)]
    return float(np.mean(np.sum(R ** 2, axis=1))), report


def _as_problem(series, partition: WindowPartition) -> WindowedProblem:
    if isinstance(series, WindowedProblem):
        return series
    return collapse_problem(build_design(series, partition.L), partition)


def cv_score(series, partition: WindowPartition, cfg: AdmmConfig, plan: CvPlan) -> float:
    """Mean over folds of the validation mean squared one-step error."""
    problem = _as_problem(series, partition)
    scores = []
    for m in plan.folds():
        try:
            score, _ = _fold_score(problem, plan, m, cfg)
        except ArithmeticError as exc:
            raise type(exc)(f"fold {m}: {exc}") from exc
        scores.append(score)
    return float(np.mean(scores))


def _fold_path(problem, plan, m, configs):
    """Scores of one fold along the grid path, warm-starting each point."""
    scores, state = [], None
    for cfg in configs:
        try:
            score, report = _fold_score(problem, plan, m, cfg, state)
        except ArithmeticError as exc:
            raise type(exc)(f"fold {m}: {exc}") from exc
        state = report.state
        scores.append(score)
    return scores


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, workers)


def grid_search(series, partition: WindowPartition, grid: GridSpec, plan: CvPlan,
                base: AdmmConfig = AdmmConfig(), method: str = "proposed",
                workers: int = None) -> GridResult:
    """Cross-validate every grid point and return the minimizer.

    Each fold walks the grid in canonical order, warm-starting from the
    previous point. Ties go to the smallest lam, then the smallest gamma.
    For ``method="baseline"`` only the lambdas are used.
    """
    problem = _as_problem(series, partition)
    points = grid.points()
    if method == "baseline":
        points = sorted({(lam, 0.0) for lam, _ in points}, reverse=True)
    configs = [solver_config(base, lam, gam, method) for lam, gam in points]
    workers = _workers(workers)
    if workers > 1 and plan.M > 1:
        with ProcessPoolExecutor(max_workers=min(workers, plan.M)) as pool:
            futures = [pool.submit(_fold_path, problem, plan, m, configs) for m in plan.folds()]
            per_fold = [f.result() for f in futures]
    else:
        per_fold = [_fold_path(problem, plan, m, configs) for m in plan.folds()]
    per_fold = np.asarray(per_fold)
    means = per_fold.mean(axis=0)
    table = [
        (lam, gam, float(means[k]), [float(x) for x in per_fold[:, k]])
        for k, (lam, gam) in enumerate(points)
    ]
    table.sort(key=lambda row: (row[0], row[1]))
    best = min(table, key=lambda row: (row[2], row[0], row[1]))
    lams = sorted({row[0] for row in table})
    gams = sorted({row[1] for row in table})
    on_boundary = (len(lams) > 2 and best[0] in (lams[0], lams[-1])) or (
        method == "proposed" and len(gams) > 2 and best[1] in (gams[0], gams[-1]))
    if on_boundary:
        log.warning("cross-validation selected a grid boundary point (lam=%g, gamma=%g)",
                    best[0], best[1])
    return GridResult(best[0], best[1], best[2], table, on_boundary)
