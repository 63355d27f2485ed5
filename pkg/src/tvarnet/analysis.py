"""Breakpoint detection, recovery metrics and the global-TV baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import (
    DEFAULT_ZERO_TOL,
    BreakpointSet,
    MultivariateSeries,
    TvarCoefficients,
    edge_set_at,
    forecast_one_step,
    local_breakpoints_of,
)
from .optimizer import AdmmConfig, DesignMatrices, admm_solve
from .windowing import WindowPartition, collapse_problem

__all__ = [
    "RecoveryMetrics",
    "default_detection_tol",
    "detect_local_breakpoints",
    "match_breakpoints",
    "edge_recovery",
    "forecast_nmse",
    "baseline_global_solve",
    "evaluate",
]

DETECTION_REL_TOL = 1e-3


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class RecoveryMetrics:
    breakpoint_precision: float = float("nan")
    breakpoint_recall: float = float("nan")
    breakpoint_f1: float = float("nan")
    breakpoints_detected: int = 0
    breakpoints_true: int = 0
    breakpoints_matched: int = 0
    breakpoint_false_positives: int = 0
    breakpoint_time_tol: int = 0
    detection_tol: float = float("nan")
    edge_precision: float = float("nan")
    edge_recall: float = float("nan")
    edge_f1: float = float("nan")
    nmse: float = float("nan")

    def to_dict(self) -> dict:
        return {k: v for k, v in sorted(asdict(self).items())}


def default_detection_tol(coeffs: TvarCoefficients) -> float:
    """1e-3 times the median nonzero filter norm (0 for an all-zero model)."""
    norms = coeffs.filter_norms()
    nz = norms[norms > 0]
    return float(DETECTION_REL_TOL * np.median(nz)) if nz.size else 0.0


def detect_local_breakpoints(coeffs: TvarCoefficients, tol: float = None) -> BreakpointSet:
    """Edge-filter jumps larger than ``tol`` at segment (window) boundaries."""
    if tol is None:
        tol = default_detection_tol(coeffs)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if np.isinf(tol):
        return BreakpointSet()
    if tol == 0:
        # strict inequality on norms; local_breakpoints_of(…, 0) is bitwise
        diff = np.diff(coeffs.coeffs, axis=0)
        n, i, j = np.nonzero(np.sqrt(np.sum(diff ** 2, axis=1)) > 0)
        starts = coeffs.segment_starts
        return BreakpointSet((starts[a + 1], b + 1, c + 1) for a, b, c in zip(n, i, j))
    return local_breakpoints_of(coeffs, tol)


def match_breakpoints(detected, truth, time_tol: int) -> dict:
    """One-to-one matching of triplets on the same edge within ``time_tol``.

    Per edge, a maximum-cardinality matching is taken (closest pairs
    preferred), so the matched count is symmetric in its arguments.
    Precision of an empty detection and recall of an empty truth are 1.
    """
    if time_tol < 0:
        raise ValueError("time_tol must be nonnegative")
    det_by_edge, true_by_edge = {}, {}
    for t, i, j in detected:
        det_by_edge.setdefault((i, j), []).append(t)
    for t, i, j in truth:
        true_by_edge.setdefault((i, j), []).append(t)
    matched = 0
    for edge, dts in det_by_edge.items():
        tts = true_by_edge.get(edge)
        if not tts:
            continue
        dist = np.abs(np.subtract.outer(np.asarray(dts), np.asarray(tts)))
        allowed = dist <= time_tol
        if not allowed.any():
            continue
        # disallowed pairs cost more than any full set of allowed ones
        big = (time_tol + 1.0) * (min(len(dts), len(tts)) + 1)
        cost = np.where(allowed, dist, big)
        rows, cols = linear_sum_assignment(cost)
        matched += int(np.sum(allowed[rows, cols]))
    nd, nt = len(detected), len(truth)
    precision = matched / nd if nd else 1.0
    recall = matched / nt if nt else 1.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": _f1(precision, recall),
        "matched": matched,
        "detected": nd,
        "true": nt,
        "false_positives": nd - matched,
        "false_negatives": nt - matched,
    }


def edge_recovery(est: TvarCoefficients, truth: TvarCoefficients,
                  zero_tol: float = DEFAULT_ZERO_TOL) -> dict:
    """Per-instant edge-set precision/recall/F1 and their averages over t."""
    for name in ("P", "L", "T"):
        a, b = getattr(est, name), getattr(truth, name)
        if a != b:
            raise ValueError(f"estimate and truth disagree on {name}: {a} vs {b}")
    times = range(est.L + 1, est.T + 1)
    prec, rec, f1 = [], [], []
    for t in times:
        e = edge_set_at(est, t, zero_tol)
        g = edge_set_at(truth, t, zero_tol)
        hit = len(e & g)
        p = hit / len(e) if e else 1.0
        r = hit / len(g) if g else 1.0
        prec.append(p)
        rec.append(r)
        f1.append(_f1(p, r))
    return {
        "precision": float(np.mean(prec)),
        "recall": float(np.mean(rec)),
        "f1": float(np.mean(f1)),
        "per_instant": {"t": list(times), "precision": prec, "recall": rec, "f1": f1},
    }


def forecast_nmse(coeffs: TvarCoefficients, series: MultivariateSeries, holdout=None) -> float:
    """sum ||y_t - yhat_t||^2 / sum ||y_t||^2 over an inclusive (start, end) range."""
    start, end = holdout if holdout is not None else (coeffs.L + 1, coeffs.T)
    if start > end:
        raise ValueError("empty holdout range")
    if start < coeffs.L + 1 or end > min(coeffs.T, series.T):
        raise ValueError(f"holdout must lie in [{coeffs.L + 1}, {coeffs.T}]")
    err = sig = 0.0
    for t in range(start, end + 1):
        y = series.at(t)
        err += float(np.sum((y - forecast_one_step(coeffs, series, t)) ** 2))
        sig += float(np.sum(y ** 2))
    return err / sig if sig > 0 else (0.0 if err == 0 else float("inf"))


def baseline_global_solve(design: DesignMatrices, lam: float, partition: WindowPartition,
                          cfg: AdmmConfig = AdmmConfig(), init=None):
    """Global-TV baseline: 1/2 fit + lam * sum_n ||B_n - B_{n-1}||_F.

    Every boundary either changes the whole coefficient block or nothing,
    so any detected breakpoints are aligned across edges. Returns the
    coefficients and the solve report.
    """
    cfg = AdmmConfig(lam=0.0, gamma=lam, rho=cfg.rho, eps_abs=cfg.eps_abs, eps_rel=cfg.eps_rel,
                     max_iters=cfg.max_iters, adaptive_rho=cfg.adaptive_rho, tv_group="block")
    problem = collapse_problem(design, partition)
    return admm_solve(problem, cfg, init)


def evaluate(est: TvarCoefficients, truth: TvarCoefficients, series: MultivariateSeries = None,
             time_tol: int = None, detection_tol: float = None,
             zero_tol: float = DEFAULT_ZERO_TOL, truth_breakpoints: BreakpointSet = None) -> RecoveryMetrics:
    """Breakpoint, edge and forecast metrics of an estimate against ground truth."""
    if time_tol is None:
        lengths = np.diff(np.append(est.segment_starts, est.T + 1))
        time_tol = int(np.median(lengths))
    if detection_tol is None:
        detection_tol = default_detection_tol(est)
    detected = detect_local_breakpoints(est, detection_tol)
    if truth_breakpoints is None:
        truth_breakpoints = local_breakpoints_of(truth, 0.0)
    bp = match_breakpoints(detected, truth_breakpoints, time_tol)
    edges = edge_recovery(est, truth, zero_tol)
    m = RecoveryMetrics(
        breakpoint_precision=bp["precision"],
        breakpoint_recall=bp["recall"],
        breakpoint_f1=bp["f1"],
        breakpoints_detected=bp["detected"],
        breakpoints_true=bp["true"],
        breakpoints_matched=bp["matched"],
        breakpoint_false_positives=bp["false_positives"],
        breakpoint_time_tol=int(time_tol),
        detection_tol=float(detection_tol),
        edge_precision=edges["precision"],
        edge_recall=edges["recall"],
        edge_f1=edges["f1"],
    )
    if series is not None:
        m.nmse = forecast_nmse(est, series)
    return m
