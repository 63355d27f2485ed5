"""Synthetic TVAR data: Erdos-Renyi support, local breakpoints, realizations."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .model import (
    BreakpointSet,
    MultivariateSeries,
    TimeVaryingGraph,
    TvarCoefficients,
    edge_sets,
    local_breakpoints_of,
)

__all__ = [
    "GeneratorConfig",
    "GroundTruth",
    "SimulationError",
    "sample_erdos_renyi",
    "companion_matrix",
    "companion_spectral_radius",
    "stabilize",
    "breakpoint_times",
    "generate_coefficient_path",
    "simulate_series",
    "generate",
]


MIN_FILTER_SCALE = 0.1
MAX_REDRAWS = 100


class SimulationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    num_nodes: int = 4
    edge_prob: float = 0.5
    order: int = 4
    num_samples: int = 1000
    num_breakpoints: int = 100
    zero_switch_prob: float = 0.4
    innovation_variance: float = 0.03
    stability_radius: float = 0.95
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        P, L, T, Nb = self.num_nodes, self.order, self.num_samples, self.num_breakpoints
        if P < 1:
            raise ValueError("num_nodes must be >= 1")
        if L < 1:
            raise ValueError("order must be >= 1")
        if T <= L:
            raise ValueError("num_samples must exceed order")
        if not 0 <= Nb <= T - L - 1:
            raise ValueError(f"num_breakpoints must lie in [0, {T - L - 1}]")
        for name in ("edge_prob", "zero_switch_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.innovation_variance > 0:
            raise ValueError("innovation_variance must be positive")
        if not 0 < self.stability_radius < 1:
            raise ValueError("stability_radius must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        times = breakpoint_times(L, T, Nb)
        if len(set(times)) != len(times):
            raise ValueError("breakpoint instants collide; lower num_breakpoints")
        if P < 2 and Nb > 0:
            raise ValueError("breakpoints need at least two nodes")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    coeffs: TvarCoefficients
    breakpoints: BreakpointSet
    edge_sets: TimeVaryingGraph
    initial_support: frozenset
    # per breakpoint: scale applied to the fresh filter, -1.0 marks a
    # whole-system rescale
    filter_scales: tuple = ()


def sample_erdos_renyi(P: int, edge_prob: float, rng: np.random.Generator) -> set:
    """Directed Erdos-Renyi support without self-loops, 1-based pairs."""
    if P < 1:
        raise ValueError("P must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    draws = rng.random((P, P)) < edge_prob
    np.fill_diagonal(draws, False)
    ii, jj = np.nonzero(draws)
    return {(int(i) + 1, int(j) + 1) for i, j in zip(ii, jj)}


def companion_matrix(matrices) -> np.ndarray:
    A = np.asarray(matrices, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2] or A.shape[0] < 1:
        raise ValueError("expected an (L, P, P) stack of square matrices")
    L, P, _ = A.shape
    top = np.concatenate(list(A), axis=1)
    bottom = np.eye(P * (L - 1), P * L)
    return np.vstack([top, bottom])


def companion_spectral_radius(matrices) -> float:
    """Largest eigenvalue modulus of the PL x PL companion matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(matrices)))))


def _largest_feasible_scale(radius_of, rho_max, iters=60):
    # radius_of(0) <= rho_max is a precondition
    if radius_of(1.0) <= rho_max:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if radius_of(mid) <= rho_max:
            lo = mid
        else:
            hi = mid
    return lo


def stabilize(matrices, rho_max: float = 0.95) -> np.ndarray:
    """Scale all A_l by a common c <= 1 so the companion radius is <= rho_max."""
    if not 0 < rho_max < 1:
        raise ValueError("rho_max must lie in (0, 1)")
    A = np.asarray(matrices, dtype=float)
    c = _largest_feasible_scale(lambda s: companion_spectral_radius(s * A), rho_max)
    return A if c == 1.0 else c * A


def breakpoint_times(L: int, T: int, num_breakpoints: int) -> list:
    """Uniformly spaced breakpoint instants in [L+2, T]."""
    span = T - L - 1
    return [
        L + 1 + int(np.floor(k * span / (num_breakpoints + 1) + 0.5))
        for k in range(1, num_breakpoints + 1)
    ]


def _local_change(A, i, j, remove, fresh, rho_max):
    """Apply one edge change keeping the radius <= rho_max, or return None.

    Returns (new matrices, scale applied to ``fresh``; 1.0 for a removal).
    """
    B = A.copy()
    B[:, i, j] = 0.0
    # removing a filter can raise the radius too
    if companion_spectral_radius(B) > rho_max:
        return None
    if remove:
        return B, 1.0

    def radius_of(s):
        B[:, i, j] = s * fresh
        return companion_spectral_radius(B)

    c = _largest_feasible_scale(radius_of, rho_max)
    if c < MIN_FILTER_SCALE:
        return None
    B[:, i, j] = c * fresh
    return B, c


def generate_coefficient_path(cfg: GeneratorConfig, rng: np.random.Generator) -> GroundTruth:
    """Piecewise-constant coefficient path with random local breakpoints.

    Each breakpoint redraws or zeroes a single edge filter. A freshly drawn
    filter is shrunk on its own when the system would otherwise exceed
    ``cfg.stability_radius``. When the change cannot be made locally (the
    filter would keep less than ``MIN_FILTER_SCALE`` of its draw, or a
    removal would destabilize the rest), the pair and filter are redrawn,
    up to ``MAX_REDRAWS`` times; after that the last draw is applied at full
    size and the whole coefficient set is rescaled, a global breakpoint.
    """
    P, L, T = cfg.num_nodes, cfg.order, cfg.num_samples
    rho_max = cfg.stability_radius
    support = sample_erdos_renyi(P, cfg.edge_prob, rng)
    mask = np.zeros((P, P), dtype=bool)
    for i, j in support:
        mask[i - 1, j - 1] = True
    A = stabilize(rng.standard_normal((L, P, P)) * mask, rho_max)

    pairs = [(i, j) for i in range(P) for j in range(P) if i != j]
    times = breakpoint_times(L, T, cfg.num_breakpoints)
    segments = [A]
    scales = []
    for _ in times:
        for _attempt in range(MAX_REDRAWS):
            i, j = pairs[rng.integers(len(pairs))]
            remove = bool(np.any(A[:, i, j] != 0)) and rng.random() < cfg.zero_switch_prob
            fresh = rng.standard_normal(L)
            done = _local_change(A, i, j, remove, fresh, rho_max)
            if done is not None:
                A, c = done
                break
        else:
            A = A.copy()
            A[:, i, j] = 0.0 if remove else fresh
            A = stabilize(A, rho_max)
            c = -1.0
        scales.append(c)
        segments.append(A)

    coeffs = TvarCoefficients(np.stack(segments), (L + 1, *times), T)
    return GroundTruth(
        coeffs=coeffs,
        breakpoints=local_breakpoints_of(coeffs, 0.0),
        edge_sets=edge_sets(coeffs, 0.0),
        initial_support=frozenset(support),
        filter_scales=tuple(scales),
    )


def simulate_series(truth, innovation_variance: float, rng: np.random.Generator,
                    initial=None) -> MultivariateSeries:
    """Realize the TVAR recursion driven by i.i.d. Gaussian innovations.

    ``truth`` is a GroundTruth or TvarCoefficients. ``initial`` optionally
    fixes y_1..y_L as a (P, L) array instead of drawing them.
    """
    coeffs = truth.coeffs if isinstance(truth, GroundTruth) else truth
    if not innovation_variance >= 0:
        raise ValueError("innovation_variance must be nonnegative (0 runs the noiseless recursion)")
    P, L, T = coeffs.P, coeffs.L, coeffs.T
    sd = np.sqrt(innovation_variance)
    y = np.empty((P, T))
    if initial is None:
        y[:, :L] = sd * rng.standard_normal((P, L))
    else:
        y[:, :L] = np.asarray(initial, dtype=float).reshape(P, L)
    eps = sd * rng.standard_normal((P, T - L))
    A_all = coeffs.per_instant_array()
    # stacked lag matrix [A1 ... AL] per instant, shape (T-L, P, P*L)
    wide = A_all.transpose(0, 2, 1, 3).reshape(T - L, P, L * P)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T - L):
            t = L + 1 + k
            x = y[:, t - 2 :: -1][:, :L].T.reshape(-1)
            y[:, t - 1] = wide[k] @ x + eps[:, k]
            if not np.all(np.isfinite(y[:, t - 1])):
                raise SimulationError(f"series overflowed at t={t}")
    return MultivariateSeries(y)


def generate(cfg: GeneratorConfig):
    """Ground truth and one realization, both driven by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    truth = generate_coefficient_path(cfg, rng)
    series = simulate_series(truth, cfg.innovation_variance, rng)
    return truth, series
