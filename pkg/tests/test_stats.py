from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_state, random_state
from opdyn import _kernel
from opdyn.model import ModelParams, SimState, StepKind, _apply_step, build_initial_state
from opdyn.stats import (
    HOUSEHOLDS,
    WORKPLACES,
    StatRecord,
    components,
    cross_run_summary,
    first_passage,
    homophily_index,
    snapshot,
    workplace_decile_bins,
)
from opdyn.sweep import RunSummary


# ---------------------------------------------------------------- snapshot


def test_snapshot_all_a_full_scale():
    params = ModelParams(beta=0.5, q=0.5, n=1000)
    st_ = build_initial_state(params, 1000, seed=1)
    rec = snapshot(st_, 0, 0, 0)
    assert rec.n_a == 1000
    assert rec.d_hh == (0, 0, 0, 0, 0, 200)
    assert rec.d_wp[9] == 200 and sum(rec.d_wp) == 200
    assert rec.s_wp[4] == 200  # all workplaces have size 5
    assert rec.width == 33
    assert not rec.overflow


def test_snapshot_balanced_init_identity():
    params = ModelParams(beta=0.5, q=0.5, n=1000)
    st_ = build_initial_state(params, 500, seed=2)
    rec = snapshot(st_, 0, 0, 0)
    assert sum(rec.d_hh) == 200
    assert sum(k * c for k, c in enumerate(rec.d_hh)) == rec.n_a == 500
    assert sum(rec.d_wp) == sum(rec.s_wp) == 200


def test_snapshot_row_round_trip():
    params = ModelParams(beta=0.5, q=0.5, n=50)
    st_ = build_initial_state(params, 20, seed=3)
    rec = snapshot(st_, 4, 7, 9)
    row = rec.to_row()
    assert row.dtype == np.int32 and row.shape == (33,)
    back = StatRecord.from_row(row, t=4)
    assert back == StatRecord(rec.t, rec.n_a, rec.d_hh, rec.d_wp, rec.s_wp, 7, 9)


def test_zero_a_workplace_in_bin_one():
    st_ = make_state("AAAAA BBBBB", "00000 11111")
    rec = snapshot(st_, 0, 0, 0)
    assert rec.d_wp[0] == 1  # the all-B workplace
    assert rec.d_wp[9] == 1  # the all-A workplace


def test_decile_bin_totals_on_random_states():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        num_wp = int(rng.integers(2, 8))
        st_ = random_state(rng, n=20, num_workplaces=num_wp)
        rec = snapshot(st_, 0, 0, 0)
        assert sum(rec.d_wp) == num_wp
        assert sum(rec.s_wp) == num_wp


@given(st.integers(1, 30).flatmap(lambda s: st.tuples(st.just(s), st.integers(0, s))))
def test_decile_bin_against_exact_rational_oracle(size_and_a):
    size, a = size_and_a
    k = int(workplace_decile_bins([a], [size])[0])
    p = Fraction(a, size)
    if p == 0:
        assert k == 1
    else:
        assert Fraction(k - 1, 10) < p <= Fraction(k, 10)


def test_snapshot_size_overflow_flag():
    st_ = make_state("A" * 20, "0" * 15 + "11111", num_workplaces=2)
    rec = snapshot(st_, 0, 0, 0)
    assert rec.overflow
    assert rec.s_wp[13] == 1  # size 15 clipped into bin 14
    assert sum(rec.s_wp) == 2


def test_snapshot_weighted_size_total():
    rng = np.random.default_rng(13)
    for _ in range(200):
        st_ = random_state(rng, n=30, num_workplaces=6)
        rec = snapshot(st_, 0, 0, 0)
        if not rec.overflow and all(st_.wp_size > 0):
            assert sum((k + 1) * c for k, c in enumerate(rec.s_wp)) == 30


# ---------------------------------------------------------------- homophily


def test_homophily_all_homogeneous(state_b):
    assert homophily_index(state_b, HOUSEHOLDS) == 1.0
    assert homophily_index(state_b, WORKPLACES) == 1.0


def test_homophily_reference_state_e(state_e):
    assert homophily_index(state_e, WORKPLACES) == 1.0
    assert homophily_index(state_e, HOUSEHOLDS) == 0.0


def test_homophily_single_mixed_household():
    opinions = ["A"] * 1000
    opinions[3] = "B"  # household 0 becomes mixed
    st_ = make_state("".join(opinions), "0" * 1000, num_workplaces=1)
    assert homophily_index(st_, HOUSEHOLDS) == 995 / 1000


def test_homophily_swap_invariant():
    rng = np.random.default_rng(17)
    for _ in range(100):
        st_ = random_state(rng, n=30, num_workplaces=5)
        for layer in (HOUSEHOLDS, WORKPLACES):
            assert homophily_index(st_, layer) == homophily_index(st_.swapped(), layer)


def test_homophily_unknown_layer(state_b):
    with pytest.raises(ValueError):
        homophily_index(state_b, "schools")


# --------------------------------------------------------------- components


def test_components_reference_states(state_a, state_b):
    assert components(state_a) == [10]  # workplaces straddle the households
    assert components(state_b) == [5, 5]


def _bfs_components(state: SimState) -> list:
    # independent oracle: breadth-first search over shared-group adjacency
    groups = {}
    for v in range(state.n):
        groups.setdefault(("h", int(state.household_of[v])), []).append(v)
        groups.setdefault(("w", int(state.workplace_of[v])), []).append(v)
    member = {}
    for key, vs in groups.items():
        for v in vs:
            member.setdefault(v, []).append(key)
    seen = set()
    sizes = []
    for start in range(state.n):
        if start in seen:
            continue
        queue = [start]
        seen.add(start)
        size = 0
        while queue:
            v = queue.pop()
            size += 1
            for key in member[v]:
                for u in groups[key]:
                    if u not in seen:
                        seen.add(u)
                        queue.append(u)
        sizes.append(size)
    return sorted(sizes, reverse=True)


def test_components_against_bfs_oracle():
    rng = np.random.default_rng(19)
    for _ in range(100):
        num_wp = int(rng.integers(2, 10))
        st_ = random_state(rng, n=50, num_workplaces=num_wp)
        got = components(st_)
        assert got == _bfs_components(st_)
        assert sum(got) == 50


def test_components_initial_random_state_connected():
    params = ModelParams(beta=0.5, q=0.5, n=1000)
    st_ = build_initial_state(params, 500, seed=5)
    got = components(st_)
    assert got == [1000]
    assert got == _bfs_components(st_)


def test_components_workplace_relabel_invariant():
    rng = np.random.default_rng(23)
    for _ in range(50):
        st_ = random_state(rng, n=30, num_workplaces=5)
        perm = rng.permutation(5)
        relabeled = SimState(
            st_.opinions, perm[st_.workplace_of], st_.household_size, 5
        )
        assert components(st_) == components(relabeled)


# ------------------------------------------------------------- first_passage


def test_first_passage_cases():
    assert first_passage([0.5, 0.1], 0.4) == 0
    assert first_passage([0.4, 0.4, 0.4], 0.4) is None  # strict inequality
    assert first_passage((0.1, 0.4, 0.41), 0.4) == 2
    assert first_passage([], 0.4) is None
    with pytest.raises(ValueError):
        first_passage([0.5], 0.0)


@given(st.lists(st.floats(0, 1, allow_nan=False), max_size=30),
       st.floats(0.01, 0.99))
def test_first_passage_is_first(series, threshold):
    t = first_passage(series, threshold)
    if t is None:
        assert all(v <= threshold for v in series)
    else:
        assert series[t] > threshold
        assert all(v <= threshold for v in series[:t])


# --------------------------------------------------------- cross_run_summary


def _summary(final_n_a=0, tau_hh=None, tau_wp=None, absorbed=True, comps=(10,)):
    return RunSummary(
        final_n_a=final_n_a, stopping_step=100, timesteps=10, absorbed=absorbed,
        tau_hh=tau_hh, tau_wp=tau_wp, final_homophily_hh=1.0, final_homophily_wp=1.0,
        component_sizes=comps, min_wp_size=2, size_overflow=False,
    )


def test_cross_run_sigma_degenerate():
    agg = cross_run_summary([_summary(final_n_a=100)] * 4)
    assert agg.sigma_final_n_a == 0.0


def test_cross_run_sigma_split():
    n = 200
    agg = cross_run_summary([_summary(final_n_a=0)] * 5 + [_summary(final_n_a=n)] * 5)
    assert agg.sigma_final_n_a == pytest.approx(n / 2)
    assert agg.mean_final_n_a == pytest.approx(n / 2)


def test_cross_run_requires_two_runs():
    with pytest.raises(ValueError):
        cross_run_summary([])
    with pytest.raises(ValueError):
        cross_run_summary([_summary()])


def test_cross_run_tau_missing_handling():
    agg = cross_run_summary([
        _summary(tau_hh=10, tau_wp=None, comps=(5, 5)),
        _summary(tau_hh=20, tau_wp=3, comps=(10,)),
        _summary(tau_hh=None, tau_wp=5, comps=(5, 5)),
    ])
    assert agg.mean_tau_hh == pytest.approx(15.0)
    assert agg.missing_tau_hh == 1
    assert agg.mean_tau_wp == pytest.approx(4.0)
    assert agg.missing_tau_wp == 1
    assert agg.component_count_hist == {1: 1, 2: 2}


# ------------------------------------------------- counter/state consistency


def test_counters_match_microstep_trace():
    # counters equal an exact outcome-by-outcome trace of the same draws
    params = ModelParams.nonlinear(0.8, 0.8, n=50, num_workplaces=10)
    ref = build_initial_state(params, 25, seed=31)
    fast = ref.copy()
    rng = np.random.default_rng(32)
    m = params.n
    vidx = rng.integers(0, params.n, size=m)
    u1, u2, u3 = rng.random(m), rng.random(m), rng.random(m)
    moves = flips = 0
    for i in range(m):
        out = _apply_step(ref, params, int(vidx[i]), u1[i], u2[i], u3[i])
        moves += out.kind is StepKind.MOVED_WORKPLACE
        flips += out.kind is StepKind.OPINION_FLIPPED
    out_vec = np.zeros(_kernel.OUT_LEN, dtype=np.int64)
    out_vec[_kernel.OUT_MIN_WP_SIZE] = int(fast.wp_size.min())
    _kernel.run_chunk(
        fast.opinions, fast.household_of, fast.workplace_of,
        fast.hh_a, fast.wp_a, fast.wp_size,
        params.household_size, params.beta, params.q, params.r1, params.r2,
        params.lam, vidx, u1, u2, u3, 0, out_vec,
    )
    assert int(out_vec[_kernel.OUT_MOVES]) == moves
    assert int(out_vec[_kernel.OUT_FLIPS]) == flips
    rec = snapshot(fast, 1, int(out_vec[_kernel.OUT_MOVES]), int(out_vec[_kernel.OUT_FLIPS]))
    assert rec.m_wp == moves and rec.n_ch == flips


def test_counters_bound_state_diffs():
    # between consecutive snapshots: flips >= changed opinions with matching
    # parity; moves >= changed workplace assignments
    params = ModelParams.linear(0.9, 0.9, n=50, num_workplaces=10)
    state = build_initial_state(params, 25, seed=41)
    rng = np.random.default_rng(42)
    for _ in range(30):
        ops_before = state.opinions.copy()
        wps_before = state.workplace_of.copy()
        moves = flips = 0
        for _ in range(params.n):
            out = _apply_step(state, params, int(rng.integers(0, params.n)),
                              rng.random(), rng.random(), rng.random())
            moves += out.kind is StepKind.MOVED_WORKPLACE
            flips += out.kind is StepKind.OPINION_FLIPPED
        op_diff = int((state.opinions != ops_before).sum())
        wp_diff = int((state.workplace_of != wps_before).sum())
        assert flips >= op_diff and (flips - op_diff) % 2 == 0
        assert moves >= wp_diff
