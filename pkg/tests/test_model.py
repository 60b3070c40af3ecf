import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_state, random_state
from opdyn import _kernel
from opdyn.model import (
    ModelParams,
    SimState,
    StepKind,
    _apply_step,
    build_initial_state,
    candidate_workplaces,
    change_probabilities,
    group_proportion,
    is_absorbing,
    micro_step,
    weighted_average,
)


# ------------------------------------------------------------------ params


def test_params_presets():
    lin = ModelParams.linear(0.3, 0.2, n=100)
    assert (lin.r1, lin.r2, lin.lam) == (1.0, 1.0, 0.5)
    non = ModelParams.nonlinear(0.3, 0.2, n=100)
    assert (non.r1, non.r2) == (0.5, 0.5)
    assert non.num_workplaces == 20
    assert non.num_households == 20


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(beta=0.0, q=0.5),
        dict(beta=1.5, q=0.5),
        dict(beta=0.5, q=-0.1),
        dict(beta=0.5, q=1.1),
        dict(beta=0.5, q=0.5, r1=0.0),
        dict(beta=0.5, q=0.5, r2=1.5),
        dict(beta=0.5, q=0.5, lam=1.2),
        dict(beta=0.5, q=0.5, n=101),
        dict(beta=0.5, q=0.5, n=100, num_workplaces=3),
        dict(beta=0.5, q=0.5, n=0),
    ],
)
def test_params_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**{"n": 100, **kwargs})


def test_params_accepts_lambda_zero():
    assert ModelParams(beta=0.5, q=0.5, lam=0.0, n=100).lam == 0.0


# ------------------------------------------------------- build_initial_state


def test_initial_state_all_a():
    params = ModelParams(beta=0.5, q=0.5, n=10)
    st_ = build_initial_state(params, 10, seed=1)
    assert st_.opinions.sum() == 10
    assert st_.num_workplaces == 2
    assert list(st_.wp_size) == [5, 5]


def test_initial_state_full_scale():
    params = ModelParams(beta=0.5, q=0.5, n=1000)
    st_ = build_initial_state(params, 500, seed=7)
    assert st_.num_households == 200
    assert st_.num_workplaces == 200
    assert st_.num_a == 500
    assert np.all(st_.wp_size == 5)
    assert st_.counts_consistent()
    # households are the fixed consecutive blocks
    assert list(st_.household_of[:6]) == [0, 0, 0, 0, 0, 1]


def test_initial_state_deterministic():
    params = ModelParams(beta=0.5, q=0.5, n=100)
    s1 = build_initial_state(params, 50, seed=123)
    s2 = build_initial_state(params, 50, seed=123)
    assert s1 == s2
    s3 = build_initial_state(params, 50, seed=124)
    assert s1 != s3


def test_initial_state_rejects_bad_num_a():
    params = ModelParams(beta=0.5, q=0.5, n=100)
    with pytest.raises(ValueError):
        build_initial_state(params, 101, seed=0)
    with pytest.raises(ValueError):
        build_initial_state(params, -1, seed=0)


def test_initial_state_workplaces_uniformish():
    # every vertex should land in every workplace under different seeds
    params = ModelParams(beta=0.5, q=0.5, n=20)
    seen = set()
    for seed in range(80):
        st_ = build_initial_state(params, 10, seed=seed)
        seen.update((0, int(w)) for w in [st_.workplace_of[0]])
    assert seen == {(0, w) for w in range(4)}


# --------------------------------------------------- proportions and support


def test_group_proportion_lone_opinion():
    st_ = make_state("ABBBB BBBBB", "00000 11111")
    h, w = group_proportion(st_, 0)
    assert h == pytest.approx(0.2)


def test_group_proportion_reference_state_e(state_e):
    # blue vertex in the 2/3-mixed household with an all-blue workplace of 4
    h, w = group_proportion(state_e, 0)
    assert (h, w) == (0.4, 1.0)
    assert weighted_average(h, w, 0.5) == pytest.approx(0.6)
    # red vertex: 3-of-5 in household, all-red workplace
    h, w = group_proportion(state_e, 2)
    assert (h, w) == (0.6, 1.0)
    assert weighted_average(h, w, 0.5) == pytest.approx(11 / 15)  # 0.7333...


def test_group_proportion_homogeneous(state_a):
    for v in range(10):
        assert group_proportion(state_a, v) == (1.0, 1.0)
    assert weighted_average(1.0, 1.0, 0.7) == 1.0


def test_group_proportion_bad_vertex(state_a):
    with pytest.raises(IndexError):
        group_proportion(state_a, 10)


_fractions = st.integers(1, 50).flatmap(
    lambda d: st.integers(0, d).map(lambda k: (k, d))
)


@given(_fractions, _fractions, st.sampled_from([0.25, 0.5, 0.75, 1.0]))
def test_weighted_average_properties(hf, wf, lam):
    h = hf[0] / hf[1]
    w = wf[0] / wf[1]
    a = weighted_average(h, w, lam)
    assert 0.0 <= a <= 1.0
    # a == 1 exactly when both proportions are 1
    assert (a == 1.0) == (h == 1.0 and w == 1.0)
    # monotone in both arguments
    assert weighted_average(min(h + 0.1, 1.0), w, lam) >= a
    assert weighted_average(h, min(w + 0.1, 1.0), lam) >= a


# ------------------------------------------------------ candidate_workplaces


def test_candidates_majority_included():
    # both members of workplace 1 share vertex 0's opinion -> primary set
    st_ = make_state("AABBB AABBB", "01000 10000", num_workplaces=2)
    assert st_.opinions[0] == 1
    assert st_.workplace_of[0] == 0
    members_wp1 = np.flatnonzero(st_.workplace_of == 1)
    assert list(st_.opinions[members_wp1]) == [1, 1]
    assert list(candidate_workplaces(st_, 0)) == [1]


def test_candidates_strict_majority_and_self_exclusion():
    # vertex 0 (A): own workplace 0 = {0,1,2,3,4} with 4 A's (w = 0.8);
    # workplace 1 = {5,6,7,8} holds an exact 2-of-4 tie; workplace 2 = {9} is B.
    st_ = make_state("AAAAB AABBB", "00000 11112", num_workplaces=3)
    cands = candidate_workplaces(st_, 0)
    # tie is not a majority, own majority workplace excluded -> fallback = {1, 2}
    assert list(cands) == [1, 2]


def test_candidates_majority_target():
    # vertex 9 (B) in wp2; wp1 = {5,6,7,8} has 3 B of 4 -> strict majority
    st_ = make_state("AAAAA ABBBB", "00000 11112", num_workplaces=3)
    assert list(candidate_workplaces(st_, 9)) == [1]


def test_candidates_empty_workplace_not_majority():
    # workplace 1 is empty: primary set empty, fallback contains it
    st_ = make_state("AAAAA AAAAA", "00000 00000", num_workplaces=2)
    assert list(candidate_workplaces(st_, 0)) == [1]


def test_candidates_single_workplace_empty():
    st_ = make_state("AABBB BBBBB", "00000 00000", num_workplaces=1)
    assert list(candidate_workplaces(st_, 0)) == []


# ----------------------------------------------------------------- micro_step


def test_micro_step_absorbing_vertex_never_changes(state_a):
    params = ModelParams(beta=1.0, q=1.0, n=10, num_workplaces=2)
    rng = np.random.default_rng(0)
    before = state_a.copy()
    for _ in range(200):
        out = micro_step(state_a, params, rng)
        assert out.kind is StepKind.NO_CHANGE
    assert state_a == before


def test_micro_step_flip_probability_monte_carlo():
    # nonlinear, beta = 1: vertex 0 has h = 0.2, w = 0.5 -> a = 0.3,
    # flip probability = 1.0 * (0.5 - 0.3) = 0.2
    base = make_state("ABBBB ABBBB", "00111 11111", num_workplaces=2)
    params = ModelParams.nonlinear(1.0, 0.0, n=10, num_workplaces=2)
    h, w = group_proportion(base, 0)
    assert (h, w) == (0.2, 0.5)
    rng = np.random.default_rng(42)
    trials = 100_000
    flips = 0
    for u in rng.random(trials):
        st_ = base.copy()
        out = _apply_step(st_, params, 0, u, 1.0, 0.5)
        flips += out.kind is StepKind.OPINION_FLIPPED
    p_hat = flips / trials
    tol = 3 * np.sqrt(0.2 * 0.8 / trials)
    assert abs(p_hat - 0.2) < tol


def test_micro_step_move_probability_monte_carlo():
    # linear, q = 0.5: vertex 0 has w = 0.6 -> move probability, conditional
    # on the flip not firing, is 0.5 * (1 - 0.6) = 0.2
    base = make_state("AAAAA AABBB", "00011 11001", num_workplaces=2)
    params = ModelParams.linear(0.5, 0.5, n=10, num_workplaces=2)
    h, w = group_proportion(base, 0)
    assert (h, w) == (1.0, 0.6)
    rng = np.random.default_rng(43)
    trials = 100_000
    moves = no_flip = 0
    for uf, um, ut in rng.random((trials, 3)):
        st_ = base.copy()
        out = _apply_step(st_, params, 0, uf, um, ut)
        if out.kind is not StepKind.OPINION_FLIPPED:
            no_flip += 1
            moves += out.kind is StepKind.MOVED_WORKPLACE
    p_hat = moves / no_flip
    tol = 3 * np.sqrt(0.2 * 0.8 / no_flip)
    assert abs(p_hat - 0.2) < tol


def test_micro_step_conservation_and_counts():
    params = ModelParams.nonlinear(0.8, 0.7, n=50, num_workplaces=10)
    st_ = build_initial_state(params, 25, seed=5)
    rng = np.random.default_rng(6)
    for _ in range(3000):
        na_before = st_.num_a
        sizes_before = st_.wp_size.copy()
        out = micro_step(st_, params, rng)
        if out.kind is StepKind.OPINION_FLIPPED:
            assert abs(st_.num_a - na_before) == 1
            assert np.array_equal(st_.wp_size, sizes_before)
        elif out.kind is StepKind.MOVED_WORKPLACE:
            assert st_.num_a == na_before
            diff = st_.wp_size.astype(int) - sizes_before
            assert diff[out.from_workplace] == -1 and diff[out.to_workplace] == 1
            assert out.from_workplace != out.to_workplace
        else:
            assert st_.num_a == na_before
            assert np.array_equal(st_.wp_size, sizes_before)
    assert st_.counts_consistent()
    assert st_.wp_size.sum() == 50


def test_micro_step_deterministic_given_rng():
    params = ModelParams.linear(0.6, 0.6, n=30, num_workplaces=6)
    s1 = build_initial_state(params, 15, seed=9)
    s2 = s1.copy()
    r1 = np.random.default_rng(11)
    r2 = np.random.default_rng(11)
    for _ in range(500):
        o1 = micro_step(s1, params, r1)
        o2 = micro_step(s2, params, r2)
        assert o1 == o2
    assert s1 == s2


# ------------------------------------------------------------- is_absorbing


def test_reference_state_b_absorbing_both_regimes(state_b):
    for factory in (ModelParams.linear, ModelParams.nonlinear):
        params = factory(0.5, 0.5, n=10, num_workplaces=2)
        assert is_absorbing(state_b, params)


def test_reference_state_e_absorbing_only_nonlinear(state_e):
    non = ModelParams.nonlinear(0.5, 0.5, n=10, num_workplaces=2)
    assert is_absorbing(state_e, non)
    lin = ModelParams.linear(0.5, 0.5, n=10, num_workplaces=2)
    assert not is_absorbing(state_e, lin)


def test_absorbing_iff_probabilities_zero():
    rng = np.random.default_rng(17)
    params = ModelParams.nonlinear(0.7, 0.6, n=10, num_workplaces=2)
    lin = ModelParams.linear(0.7, 0.6, n=10, num_workplaces=2)
    for _ in range(300):
        st_ = random_state(rng)
        for p in (params, lin):
            flip, move = change_probabilities(st_, p)
            assert is_absorbing(st_, p) == (not flip.any() and not move.any())


def test_absorbing_state_has_zero_probability_for_every_vertex(state_e):
    # exhaustive per-vertex check, not sampling
    params = ModelParams.nonlinear(1.0, 1.0, n=10, num_workplaces=2)
    flip, move = change_probabilities(state_e, params)
    assert np.all(flip == 0.0) and np.all(move == 0.0)


def test_q_zero_drops_workplace_condition(state_e):
    # with q = 0 only the flip condition matters even when w < r2
    st_ = make_state("AAAAA BBBBB", "00011 11100")  # mixed workplaces
    lin0 = ModelParams.linear(0.5, 0.0, n=10, num_workplaces=2)
    flip, move = change_probabilities(st_, lin0)
    assert np.all(move == 0.0)
    assert flip.any()  # mixed workplaces make a < 1
    assert not is_absorbing(st_, lin0)


def test_single_workplace_state_can_freeze():
    # n = 15, one workplace: the 5 B's have w = 1/3 < r2 but nowhere to go,
    # and no vertex can flip, so the state cannot change
    st_ = make_state("AAAAA AAAAA BBBBB", "0" * 15, num_workplaces=1)
    params = ModelParams.nonlinear(0.5, 0.9, n=15, num_workplaces=1)
    flip, move = change_probabilities(st_, params)
    assert np.all(flip == 0.0) and np.all(move == 0.0)
    assert is_absorbing(st_, params)
    rng = np.random.default_rng(3)
    before = st_.copy()
    for _ in range(100):
        assert micro_step(st_, params, rng).kind is StepKind.NO_CHANGE
    assert st_ == before


def test_size_one_workplace_occupant_is_stable():
    # linear regime: alone in a workplace means w = 1, so no move urge from
    # the workplace layer and the workplace can never empty out
    st_ = make_state("AAAAA AAAAB", "00001 22334", num_workplaces=5)
    params = ModelParams.linear(0.5, 0.9, n=10, num_workplaces=5)
    occupant = 4
    assert st_.wp_size[int(st_.workplace_of[occupant])] == 1
    _, w = group_proportion(st_, occupant)
    assert w == 1.0
    _, move = change_probabilities(st_, params)
    assert move[occupant] == 0.0


def test_swap_symmetry_of_probabilities():
    rng = np.random.default_rng(23)
    params = ModelParams.nonlinear(0.6, 0.8, n=20, num_workplaces=4)
    for _ in range(100):
        st_ = random_state(rng, n=20, num_workplaces=4)
        flip, move = change_probabilities(st_, params)
        flip_s, move_s = change_probabilities(st_.swapped(), params)
        assert np.array_equal(flip, flip_s)
        assert np.array_equal(move, move_s)


# ------------------------------------------------------------------- kernel


def _run_kernel(state: SimState, params: ModelParams, vidx, u1, u2, u3,
                check_every: int = 0):
    out = np.zeros(_kernel.OUT_LEN, dtype=np.int64)
    out[_kernel.OUT_MIN_WP_SIZE] = int(state.wp_size.min())
    _kernel.run_chunk(
        state.opinions, state.household_of, state.workplace_of,
        state.hh_a, state.wp_a, state.wp_size,
        params.household_size, params.beta, params.q, params.r1, params.r2,
        params.lam, vidx, u1, u2, u3, check_every, out,
    )
    return out


@pytest.mark.parametrize("regime", ["linear", "nonlinear"])
def test_kernel_matches_reference_step(regime):
    factory = ModelParams.linear if regime == "linear" else ModelParams.nonlinear
    params = factory(0.7, 0.6, n=60, num_workplaces=12)
    for seed in range(3):
        ref = build_initial_state(params, 30, seed=seed)
        fast = ref.copy()
        rng = np.random.default_rng(seed + 50)
        m = 4000
        vidx = rng.integers(0, params.n, size=m)
        u1, u2, u3 = rng.random(m), rng.random(m), rng.random(m)
        moves = flips = 0
        for i in range(m):
            out = _apply_step(ref, params, int(vidx[i]), u1[i], u2[i], u3[i])
            moves += out.kind is StepKind.MOVED_WORKPLACE
            flips += out.kind is StepKind.OPINION_FLIPPED
        out = _run_kernel(fast, params, vidx, u1, u2, u3)
        assert ref == fast
        assert (out[_kernel.OUT_MOVES], out[_kernel.OUT_FLIPS]) == (moves, flips)


def test_kernel_absorbing_check_matches_is_absorbing():
    rng = np.random.default_rng(31)
    for _ in range(300):
        st_ = random_state(rng)
        for factory in (ModelParams.linear, ModelParams.nonlinear):
            params = factory(0.5, 0.5, n=10, num_workplaces=2)
            quiet = _kernel.all_quiet(
                st_.opinions, st_.household_of, st_.workplace_of,
                st_.hh_a, st_.wp_a, st_.wp_size,
                params.household_size, params.q, params.r1, params.r2, params.lam,
            )
            assert bool(quiet) == is_absorbing(st_, params)


def test_long_run_invariants_nonlinear():
    # 10^5 micro-steps: counts stay consistent, sizes sum to n, and in the
    # nonlinear regime no workplace ever drops below size 2
    params = ModelParams.nonlinear(0.6, 0.7, n=100, num_workplaces=20)
    st_ = build_initial_state(params, 50, seed=77)
    rng = np.random.default_rng(78)
    min_seen = int(st_.wp_size.min())
    for _ in range(100):
        m = 1000
        vidx = rng.integers(0, params.n, size=m)
        out = _run_kernel(st_, params, vidx, rng.random(m), rng.random(m), rng.random(m))
        min_seen = min(min_seen, int(out[_kernel.OUT_MIN_WP_SIZE]))
        assert st_.wp_size.sum() == params.n
    assert min_seen >= 2
    assert st_.counts_consistent()
