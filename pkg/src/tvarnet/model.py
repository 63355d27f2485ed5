"""
Time-varying VAR model vocabulary: series, piecewise-constant coefficients,
edge filters, time-varying graphs and breakpoints.

Time indices are 1-based: samples live on [1, T] and coefficients on
[L+1, T]. Nodes are 1-based in every public function.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "DEFAULT_ZERO_TOL",
    "MultivariateSeries",
    "TvarCoefficients",
    "TimeVaryingGraph",
    "BreakpointSet",
    "InnovationSpec",
    "edge_filter_at",
    "edge_set_at",
    "edge_sets",
    "local_breakpoints_of",
    "forecast_one_step",
]

DEFAULT_ZERO_TOL = 1e-10


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultivariateSeries:
    """P scalar time series observed over T instants.

    ``values[p, t-1]`` holds y_{p+1, t}.
    """

    values: np.ndarray
    node_labels: tuple = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("values must be a non-empty P x T matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("series contains non-finite entries")
        labels = self.node_labels
        if labels is None:
            labels = tuple(f"y{p + 1}" for p in range(values.shape[0]))
        labels = tuple(str(s) for s in labels)
        if len(labels) != values.shape[0] or len(set(labels)) != len(labels):
            raise ValueError("node_labels must hold exactly P distinct entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "node_labels", labels)

    @property
    def P(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def at(self, t: int) -> np.ndarray:
        """Return y_t (1-based)."""
        if not 1 <= t <= self.T:
            raise IndexError(f"time {t} outside [1, {self.T}]")
        return self.values[:, t - 1]

    def scaled(self, alpha: float) -> "MultivariateSeries":
        return MultivariateSeries(alpha * self.values, self.node_labels)


@dataclass(frozen=True)
class InnovationSpec:
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("innovation variance must be positive")


@dataclass(frozen=True)
class TvarCoefficients:
    """Piecewise-constant TVAR coefficients.

    Parameters
    ----------
    coeffs : ndarray, shape (N, L, P, P)
        ``coeffs[n, l-1, i-1, j-1]`` is a^{(l)}_{ij} on segment n.
    segment_starts : sequence of int
        1-based first instant of every segment. The first entry must be
        L+1; segment n ends right before the start of segment n+1, the
        last one at T.
    T : int
        Number of samples of the underlying series.
    """

    coeffs: np.ndarray
    segment_starts: tuple
    T: int

    def __post_init__(self):
        coeffs = _frozen(self.coeffs)
        if coeffs.ndim != 4 or coeffs.shape[2] != coeffs.shape[3]:
            raise ValueError("coeffs must have shape (N, L, P, P)")
        N, L, P, _ = coeffs.shape
        if L < 1 or P < 1 or N < 1:
            raise ValueError("coeffs must be non-empty")
        starts = tuple(int(s) for s in self.segment_starts)
        T = int(self.T)
        if len(starts) != N:
            raise ValueError(f"{len(starts)} segment starts for {N} segments")
        if starts[0] != L + 1:
            raise ValueError(f"first segment must start at L+1={L + 1}")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if starts[-1] > T:
            raise ValueError("segment starts must lie in [L+1, T]")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "segment_starts", starts)
        object.__setattr__(self, "T", T)

    @property
    def num_segments(self) -> int:
        return self.coeffs.shape[0]

    @property
    def L(self) -> int:
        return self.coeffs.shape[1]

    @property
    def P(self) -> int:
        return self.coeffs.shape[2]

    @property
    def segment_ends(self) -> tuple:
        return tuple(s - 1 for s in self.segment_starts[1:]) + (self.T,)

    @classmethod
    def constant(cls, matrices, T: int) -> "TvarCoefficients":
        """Time-invariant model from an (L, P, P) stack of matrices."""
        matrices = np.asarray(matrices, dtype=float)
        return cls(matrices[None], (matrices.shape[0] + 1,), T)

    @classmethod
    def per_instant(cls, coeffs, T: int) -> "TvarCoefficients":
        """Fully general model with one segment per instant in [L+1, T]."""
        coeffs = np.asarray(coeffs, dtype=float)
        L = coeffs.shape[1]
        if coeffs.shape[0] != T - L:
            raise ValueError("per-instant coefficients need T-L segments")
        return cls(coeffs, tuple(range(L + 1, T + 1)), T)

    def check_time(self, t: int):
        if not self.L + 1 <= t <= self.T:
            raise IndexError(f"time {t} outside [{self.L + 1}, {self.T}]")

    def segment_of(self, t: int) -> int:
        """0-based index of the segment containing instant t."""
        self.check_time(t)
        return bisect.bisect_right(self.segment_starts, t) - 1

    def matrices_at(self, t: int) -> np.ndarray:
        """(L, P, P) stack A^{(1)}_t ... A^{(L)}_t."""
        return self.coeffs[self.segment_of(t)]

    def per_instant_array(self) -> np.ndarray:
        """Expand to shape (T-L, L, P, P)."""
        lengths = np.diff(np.append(self.segment_starts, self.T + 1))
        return np.repeat(self.coeffs, lengths, axis=0)

    def filter_norms(self) -> np.ndarray:
        """Per-segment edge filter norms, shape (N, P, P)."""
        return np.sqrt(np.sum(self.coeffs ** 2, axis=1))

    def permuted(self, perm: Sequence[int]) -> "TvarCoefficients":
        """Relabel nodes: node k (0-based) becomes node perm[k]."""
        inv = np.argsort(perm)
        c = self.coeffs[:, :, inv][:, :, :, inv]
        return TvarCoefficients(c, self.segment_starts, self.T)


def _check_node(i, P):
    if not 1 <= i <= P:
        raise IndexError(f"node {i} outside [1, {P}]")


def edge_filter_at(coeffs: TvarCoefficients, i: int, j: int, t: int) -> np.ndarray:
    """Taps of the LTV filter carrying node j into node i at time t."""
    _check_node(i, coeffs.P)
    _check_node(j, coeffs.P)
    return coeffs.matrices_at(t)[:, i - 1, j - 1].copy()


def edge_set_at(coeffs: TvarCoefficients, t: int, zero_tol: float = DEFAULT_ZERO_TOL) -> set:
    """Edges (i, j) whose filter norm at time t strictly exceeds zero_tol."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    norms = np.sqrt(np.sum(coeffs.matrices_at(t) ** 2, axis=0))
    ii, jj = np.nonzero(norms > zero_tol)
    return {(int(i) + 1, int(j) + 1) for i, j in zip(ii, jj)}


@dataclass(frozen=True)
class TimeVaryingGraph:
    """Edge sets E_t stored once per coefficient segment."""

    segment_starts: tuple
    segment_edges: tuple
    T: int

    def at(self, t: int) -> frozenset:
        if not self.segment_starts[0] <= t <= self.T:
            raise IndexError(f"time {t} outside [{self.segment_starts[0]}, {self.T}]")
        return self.segment_edges[bisect.bisect_right(self.segment_starts, t) - 1]

    def __iter__(self) -> Iterator[tuple]:
        for t in range(self.segment_starts[0], self.T + 1):
            yield t, self.at(t)


def edge_sets(coeffs: TvarCoefficients, zero_tol: float = DEFAULT_ZERO_TOL) -> TimeVaryingGraph:
    edges = tuple(
        frozenset(edge_set_at(coeffs, s, zero_tol)) for s in coeffs.segment_starts
    )
    return TimeVaryingGraph(coeffs.segment_starts, edges, coeffs.T)


class BreakpointSet:
    """Sorted, deduplicated (t, i, j) triplets with 1-based time and nodes."""

    __slots__ = ("_items",)

    def __init__(self, triplets: Iterable = ()):
        self._items = tuple(sorted({(int(t), int(i), int(j)) for t, i, j in triplets}))

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __contains__(self, item):
        return tuple(item) in set(self._items)

    def __eq__(self, other):
        if isinstance(other, BreakpointSet):
            return self._items == other._items
        return NotImplemented

    def __hash__(self):
        return hash(self._items)

    def __repr__(self):
        return f"BreakpointSet({list(self._items)!r})"

    @property
    def triplets(self) -> tuple:
        return self._items

    def times(self) -> list:
        """Global breakpoints: the projection of the triplets onto time."""
        return sorted({t for t, _, _ in self._items})

    def for_edge(self, i: int, j: int) -> list:
        return [t for t, a, b in self._items if (a, b) == (i, j)]


def local_breakpoints_of(coeffs: TvarCoefficients, tol: float = 0.0) -> BreakpointSet:
    """Triplets (t, i, j) with ||a_{ij,t} - a_{ij,t-1}||_2 > tol.

    Only segment starts can carry a change, so the scan runs over segment
    boundaries.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if coeffs.num_segments < 2:
        return BreakpointSet()
    diff = np.diff(coeffs.coeffs, axis=0)
    norms = np.sqrt(np.sum(diff ** 2, axis=1))
    if tol == 0:
        # exact comparison: a difference can underflow to a zero norm
        changed = np.any(diff != 0, axis=1)
    else:
        changed = norms > tol
    n, i, j = np.nonzero(changed)
    starts = coeffs.segment_starts
    return BreakpointSet((starts[a + 1], b + 1, c + 1) for a, b, c in zip(n, i, j))


def forecast_one_step(coeffs: TvarCoefficients, history, t: int) -> np.ndarray:
    """One-step prediction sum_l A^{(l)}_t y_{t-l}.

    ``history`` is a MultivariateSeries (or P x T' array) holding at least
    samples 1..t-1.
    """
    values = history.values if isinstance(history, MultivariateSeries) else np.asarray(history)
    L = coeffs.L
    if t < L + 1:
        raise ValueError(f"t={t} needs t >= L+1={L + 1}")
    if values.shape[1] < t - 1:
        raise ValueError(f"history holds {values.shape[1]} samples, need {t - 1}")
    if values.shape[0] != coeffs.P:
        raise ValueError("history and coefficients disagree on P")
    A = coeffs.matrices_at(t)
    P = coeffs.P
    # [A1 ... AL] @ [y_{t-1}; ...; y_{t-L}], same arithmetic as the simulator
    wide = A.transpose(1, 0, 2).reshape(P, L * P)
    x = values[:, t - 2 :: -1][:, :L].T.reshape(-1)
    return wide @ x
