"""Windowed reduction: coefficients held constant on contiguous windows."""
from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .model import TvarCoefficients
from .optimizer import DesignMatrices, WindowedProblem, coeffs_from_stack

__all__ = [
    "WindowPartition",
    "uniform_partition",
    "window_index",
    "collapse_problem",
    "expand_solution",
]


@dataclass(frozen=True)
class WindowPartition:
    """Contiguous windows covering [L+1, T]; ``starts`` are 1-based."""

    starts: tuple
    L: int
    T: int
    window_len: int

    def __post_init__(self):
        starts = tuple(int(s) for s in self.starts)
        if not starts or starts[0] != self.L + 1:
            raise ValueError("first window must start at L+1")
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] > self.T:
            raise ValueError("window starts must be increasing within [L+1, T]")
        object.__setattr__(self, "starts", starts)

    @property
    def N(self) -> int:
        return len(self.starts)

    @property
    def windows(self) -> list:
        ends = [s - 1 for s in self.starts[1:]] + [self.T]
        return [range(s, e + 1) for s, e in zip(self.starts, ends)]

    def lengths(self) -> np.ndarray:
        return np.diff(np.append(self.starts, self.T + 1))


def uniform_partition(L: int, T: int, window_len: int) -> WindowPartition:
    """Windows of ``window_len`` instants; the last one absorbs the remainder."""
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if T <= L:
        raise ValueError("need T > L")
    n = max((T - L) // window_len, 1)
    starts = tuple(L + 1 + k * window_len for k in range(n))
    return WindowPartition(starts, L, T, window_len)


def window_index(partition: WindowPartition, t: int) -> int:
    """1-based id of the window holding instant t."""
    if not partition.L + 1 <= t <= partition.T:
        raise IndexError(f"time {t} outside [{partition.L + 1}, {partition.T}]")
    return bisect.bisect_right(partition.starts, t)


def collapse_problem(design: DesignMatrices, partition: WindowPartition) -> WindowedProblem:
    """Problem whose unknowns are one coefficient block per window."""
    if (design.L, design.T) != (partition.L, partition.T):
        raise ValueError("design and partition disagree on L or T")
    return WindowedProblem(design, partition.starts)


def expand_solution(windowed, partition: WindowPartition) -> TvarCoefficients:
    """Per-instant view of windowed coefficients.

    ``windowed`` is either an (N, L, P, P) coefficient array, an
    (N, PL, P) stack (then read with the partition's L), or a
    TvarCoefficients whose segments are the windows.
    """
    if isinstance(windowed, TvarCoefficients):
        arr = windowed.coeffs
    else:
        arr = np.asarray(windowed, dtype=float)
        if arr.ndim == 3:
            arr = coeffs_from_stack(arr, partition.L)
    if arr.shape[0] != partition.N:
        raise ValueError(f"{arr.shape[0]} blocks for {partition.N} windows")
    return TvarCoefficients(arr, partition.starts, partition.T)
