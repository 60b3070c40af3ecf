"""Per-timestep and terminal observables of a simulation run.

The per-timestep record holds the opinion count, the household and workplace
composition histograms, the workplace size histogram and the move/flip
counters; for household size 5 it is 33-dimensional.  Terminal observables
cover homophily, polarization timing and connected components.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from opdyn.model import SimState

D_WP_BINS = 10
S_WP_BINS = 14
# Representative proportion of decile bin k = 1..10 used when reconstructing
# moments from the binned histogram (bin k covers ((k-1)/10, k/10], with
# proportion 0 merged into bin 1).
D_WP_MIDPOINTS = (2 * np.arange(1, D_WP_BINS + 1) - 1) / (2 * D_WP_BINS)

HOUSEHOLDS = "households"
WORKPLACES = "workplaces"


@dataclass(frozen=True)
class StatRecord:
    """One timestep's statistics vector.

    ``d_hh[k]`` counts households with k A-opinions, ``d_wp[k-1]`` workplaces
    with A-proportion in decile bin k, ``s_wp[k-1]`` workplaces of size k
    (sizes above 14 are clipped into the top bin and flagged via
    ``overflow``).  ``m_wp`` / ``n_ch`` count workplace moves and opinion
    flips during the timestep.
    """

    t: int
    n_a: int
    d_hh: tuple
    d_wp: tuple
    s_wp: tuple
    m_wp: int
    n_ch: int
    overflow: bool = False

    @property
    def width(self) -> int:
        return 1 + len(self.d_hh) + D_WP_BINS + S_WP_BINS + 2

    def to_row(self) -> np.ndarray:
        return np.array(
            [self.n_a, *self.d_hh, *self.d_wp, *self.s_wp, self.m_wp, self.n_ch],
            dtype=np.int32,
        )

    @staticmethod
    def from_row(row, t: int, household_size: int = 5, overflow: bool = False) -> "StatRecord":
        row = [int(x) for x in row]
        hb = household_size + 1
        if len(row) != 1 + hb + D_WP_BINS + S_WP_BINS + 2:
            raise ValueError(f"row has width {len(row)}, expected {1 + hb + 26}")
        return StatRecord(
            t=t,
            n_a=row[0],
            d_hh=tuple(row[1 : 1 + hb]),
            d_wp=tuple(row[1 + hb : 1 + hb + D_WP_BINS]),
            s_wp=tuple(row[1 + hb + D_WP_BINS : 1 + hb + D_WP_BINS + S_WP_BINS]),
            m_wp=row[-2],
            n_ch=row[-1],
            overflow=overflow,
        )


@dataclass(frozen=True)
class RunSummary:
    """Terminal observables of one run."""

    final_n_a: int
    stopping_step: int  # micro-steps executed
    timesteps: int
    absorbed: bool
    tau_hh: int | None
    tau_wp: int | None
    final_homophily_hh: float
    final_homophily_wp: float
    component_sizes: tuple
    min_wp_size: int
    size_overflow: bool


def workplace_decile_bins(wp_a, wp_size) -> np.ndarray:
    """Decile bin index (1..10) per workplace; A-proportion 0 lands in bin 1.

    Bin k covers ((k-1)/10, k/10]; boundaries are decided in exact integer
    arithmetic.  Empty workplaces count as proportion 0.
    """
    wp_a = np.asarray(wp_a, dtype=np.int64)
    wp_size = np.asarray(wp_size, dtype=np.int64)
    sz = np.maximum(wp_size, 1)  # empty workplace -> proportion 0 -> bin 1
    k = -((-10 * wp_a) // sz)  # ceil(10 * a / size)
    return np.maximum(k, 1).astype(np.int64)


def snapshot(state: SimState, t: int, moves_this_step: int, flips_this_step: int) -> StatRecord:
    """Statistics vector of the current state plus this timestep's counters."""
    hs = state.household_size
    d_hh = np.bincount(state.hh_a, minlength=hs + 1)
    bins = workplace_decile_bins(state.wp_a, state.wp_size)
    d_wp = np.bincount(bins - 1, minlength=D_WP_BINS)
    overflow = bool((state.wp_size > S_WP_BINS).any())
    clipped = np.clip(state.wp_size, 1, S_WP_BINS)
    s_wp = np.bincount(clipped - 1, minlength=S_WP_BINS)
    return StatRecord(
        t=t,
        n_a=int(state.hh_a.sum()),
        d_hh=tuple(int(x) for x in d_hh),
        d_wp=tuple(int(x) for x in d_wp),
        s_wp=tuple(int(x) for x in s_wp),
        m_wp=int(moves_this_step),
        n_ch=int(flips_this_step),
        overflow=overflow,
    )


def homophily_index(state: SimState, layer: str) -> float:
    """Fraction of vertices whose hyperedge in ``layer`` is opinion-homogeneous."""
    if layer == HOUSEHOLDS:
        homog = (state.hh_a == 0) | (state.hh_a == state.household_size)
        return int(homog.sum()) * state.household_size / state.n
    if layer == WORKPLACES:
        homog = ((state.wp_a == 0) | (state.wp_a == state.wp_size)) & (state.wp_size > 0)
        return int(state.wp_size[homog].sum()) / state.n
    raise ValueError(f"unknown layer {layer!r}")


def _homophily_from_counts(hh_a, household_size, wp_a, wp_size, n):
    hh = int(((hh_a == 0) | (hh_a == household_size)).sum()) * household_size / n
    homog = ((wp_a == 0) | (wp_a == wp_size)) & (wp_size > 0)
    wp = int(wp_size[homog].sum()) / n
    return hh, wp


class _UnionFind:
    __slots__ = ("parent", "size")

    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        if self.size[rx] < self.size[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        self.size[rx] += self.size[ry]


def components(state: SimState) -> list[int]:
    """Sizes of connected components (largest first) of the graph where two
    vertices are adjacent iff they share a household or a workplace."""
    uf = _UnionFind(state.n)
    hs = state.household_size
    for start in range(0, state.n, hs):
        for v in range(start + 1, start + hs):
            uf.union(start, v)
    order = np.argsort(state.workplace_of, kind="stable")
    wps = state.workplace_of[order]
    boundaries = np.flatnonzero(np.diff(wps)) + 1
    for group in np.split(order, boundaries):
        first = int(group[0])
        for v in group[1:]:
            uf.union(first, int(v))
    roots = np.array([uf.find(v) for v in range(state.n)])
    sizes = np.bincount(roots)
    return sorted((int(s) for s in sizes[sizes > 0]), reverse=True)


def first_passage(series, threshold: float) -> int | None:
    """Smallest index t with series[t] > threshold (strict), else None."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    arr = np.asarray(series, dtype=np.float64)
    above = np.flatnonzero(arr > threshold)
    return int(above[0]) if above.size else None


@dataclass(frozen=True)
class CrossRunAggregate:
    n_runs: int
    sigma_final_n_a: float  # population standard deviation
    mean_final_n_a: float
    absorbed_fraction: float
    mean_tau_hh: float | None
    missing_tau_hh: int
    mean_tau_wp: float | None
    missing_tau_wp: int
    mean_homophily_hh: float
    mean_homophily_wp: float
    component_count_hist: dict


def cross_run_summary(summaries) -> CrossRunAggregate:
    """Aggregate terminal statistics across runs of one parameter cell."""
    summaries = list(summaries)
    if len(summaries) < 2:
        raise ValueError("cross_run_summary requires at least 2 runs")
    final = np.array([s.final_n_a for s in summaries], dtype=np.float64)
    taus_hh = [s.tau_hh for s in summaries if s.tau_hh is not None]
    taus_wp = [s.tau_wp for s in summaries if s.tau_wp is not None]
    ncomp = Counter(len(s.component_sizes) for s in summaries)
    return CrossRunAggregate(
        n_runs=len(summaries),
        sigma_final_n_a=float(final.std()),
        mean_final_n_a=float(final.mean()),
        absorbed_fraction=sum(s.absorbed for s in summaries) / len(summaries),
        mean_tau_hh=float(np.mean(taus_hh)) if taus_hh else None,
        missing_tau_hh=len(summaries) - len(taus_hh),
        mean_tau_wp=float(np.mean(taus_wp)) if taus_wp else None,
        missing_tau_wp=len(summaries) - len(taus_wp),
        mean_homophily_hh=float(np.mean([s.final_homophily_hh for s in summaries])),
        mean_homophily_wp=float(np.mean([s.final_homophily_wp for s in summaries])),
        component_count_hist=dict(sorted(ncomp.items())),
    )
