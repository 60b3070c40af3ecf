"""Two-layer hypergraph opinion model: state, parameters, and one micro-step.

Vertices carry a binary opinion (A/B) and belong to exactly one household
(fixed consecutive blocks) and one workplace (mutable).  In each micro-step a
uniformly chosen vertex may first flip its opinion and, failing that, may move
to another workplace where its opinion holds a strict majority.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from opdyn import _kernel

OPINION_B = 0
OPINION_A = 1


class Opinion(enum.IntEnum):
    B = OPINION_B
    A = OPINION_A


class StepKind(enum.Enum):
    OPINION_FLIPPED = "opinion_flipped"
    MOVED_WORKPLACE = "moved_workplace"
    NO_CHANGE = "no_change"


@dataclass(frozen=True)
class StepOutcome:
    vertex: int
    kind: StepKind
    from_workplace: int | None = None
    to_workplace: int | None = None


@dataclass(frozen=True)
class ModelParams:
    """Dynamics parameters plus the structural constants of the hypergraph.

    ``beta`` scales the opinion-flip probability, ``q`` the workplace-move
    probability; ``r1``/``r2`` are the respective thresholds and ``lam`` the
    workplace weight in the support average.  ``r1 = r2 = 1`` is the linear
    regime, ``r1 = r2 = 0.5`` the nonlinear one.
    """

    beta: float
    q: float
    r1: float = 1.0
    r2: float = 1.0
    lam: float = 0.5
    n: int = 1000
    household_size: int = 5
    num_workplaces: int = field(default=-1)  # -1: resolve to n // household_size

    def __post_init__(self):
        if self.num_workplaces == -1:
            object.__setattr__(self, "num_workplaces", self.n // self.household_size)
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not (0.0 <= self.q <= 1.0):
            raise ValueError(f"q must be in [0, 1], got {self.q}")
        if not (0.0 < self.r1 <= 1.0):
            raise ValueError(f"r1 must be in (0, 1], got {self.r1}")
        if not (0.0 < self.r2 <= 1.0):
            raise ValueError(f"r2 must be in (0, 1], got {self.r2}")
        # lam = 0 is accepted (degenerate: households only), though untested
        # against any reference values.
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.n <= 0 or self.household_size <= 0 or self.num_workplaces <= 0:
            raise ValueError("n, household_size, num_workplaces must be positive")
        if self.n % self.household_size != 0:
            raise ValueError(
                f"n={self.n} not divisible by household_size={self.household_size}"
            )
        if self.n % self.num_workplaces != 0:
            raise ValueError(
                f"n={self.n} not divisible by num_workplaces={self.num_workplaces}"
            )

    @property
    def num_households(self) -> int:
        return self.n // self.household_size

    @classmethod
    def linear(cls, beta: float, q: float, **kwargs) -> "ModelParams":
        return cls(beta=beta, q=q, r1=1.0, r2=1.0, **kwargs)

    @classmethod
    def nonlinear(cls, beta: float, q: float, **kwargs) -> "ModelParams":
        return cls(beta=beta, q=q, r1=0.5, r2=0.5, **kwargs)


class SimState:
    """Mutable simulation state with incrementally maintained group counts.

    ``household_of`` is the fixed block partition (vertex v lives in household
    v // household_size); ``workplace_of`` changes over time.  ``hh_a`` /
    ``wp_a`` cache the per-group A-counts and ``wp_size`` the workplace sizes;
    they must always match a recount from the assignment vectors.
    """

    __slots__ = (
        "n",
        "household_size",
        "num_workplaces",
        "opinions",
        "household_of",
        "workplace_of",
        "hh_a",
        "wp_a",
        "wp_size",
    )

    def __init__(self, opinions, workplace_of, household_size, num_workplaces):
        opinions = np.asarray(opinions, dtype=np.int8)
        workplace_of = np.asarray(workplace_of, dtype=np.int32)
        n = opinions.shape[0]
        if workplace_of.shape[0] != n:
            raise ValueError("opinions and workplace_of must have equal length")
        if n % household_size != 0:
            raise ValueError(f"n={n} not divisible by household_size={household_size}")
        if not np.all((opinions == 0) | (opinions == 1)):
            raise ValueError("opinions must be 0 (B) or 1 (A)")
        if workplace_of.min(initial=0) < 0 or workplace_of.max(initial=0) >= num_workplaces:
            raise ValueError("workplace index out of range")
        self.n = n
        self.household_size = household_size
        self.num_workplaces = num_workplaces
        self.opinions = opinions
        self.household_of = (np.arange(n, dtype=np.int32) // household_size).astype(np.int32)
        self.workplace_of = workplace_of
        self.hh_a = np.zeros(n // household_size, dtype=np.int32)
        self.wp_a = np.zeros(num_workplaces, dtype=np.int32)
        self.wp_size = np.zeros(num_workplaces, dtype=np.int32)
        self.recompute_counts()

    @property
    def num_households(self) -> int:
        return self.n // self.household_size

    @property
    def num_a(self) -> int:
        return int(self.hh_a.sum())

    def recompute_counts(self) -> None:
        self.hh_a.fill(0)
        np.add.at(self.hh_a, self.household_of, self.opinions.astype(np.int32))
        self.wp_a.fill(0)
        np.add.at(self.wp_a, self.workplace_of, self.opinions.astype(np.int32))
        self.wp_size.fill(0)
        np.add.at(self.wp_size, self.workplace_of, 1)

    def counts_consistent(self) -> bool:
        hh_a = np.zeros_like(self.hh_a)
        np.add.at(hh_a, self.household_of, self.opinions.astype(np.int32))
        wp_a = np.zeros_like(self.wp_a)
        np.add.at(wp_a, self.workplace_of, self.opinions.astype(np.int32))
        wp_size = np.zeros_like(self.wp_size)
        np.add.at(wp_size, self.workplace_of, 1)
        return (
            np.array_equal(hh_a, self.hh_a)
            and np.array_equal(wp_a, self.wp_a)
            and np.array_equal(wp_size, self.wp_size)
        )

    def copy(self) -> "SimState":
        st = object.__new__(SimState)
        st.n = self.n
        st.household_size = self.household_size
        st.num_workplaces = self.num_workplaces
        st.opinions = self.opinions.copy()
        st.household_of = self.household_of
        st.workplace_of = self.workplace_of.copy()
        st.hh_a = self.hh_a.copy()
        st.wp_a = self.wp_a.copy()
        st.wp_size = self.wp_size.copy()
        return st

    def swapped(self) -> "SimState":
        """The state with all opinions exchanged (A <-> B)."""
        return SimState(
            1 - self.opinions, self.workplace_of, self.household_size, self.num_workplaces
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SimState)
            and self.household_size == other.household_size
            and self.num_workplaces == other.num_workplaces
            and np.array_equal(self.opinions, other.opinions)
            and np.array_equal(self.workplace_of, other.workplace_of)
        )


def build_initial_state(params: ModelParams, num_a: int, seed: int) -> SimState:
    """Random initial state: ``num_a`` A-opinions and balanced random workplaces.

    Opinions are assigned to a uniformly random vertex subset, independent of
    structure.  Workplaces are a uniformly random partition into
    ``num_workplaces`` blocks of equal size.  Fully determined by ``seed``.
    """
    n = params.n
    if not (0 <= num_a <= n):
        raise ValueError(f"num_a={num_a} out of range [0, {n}]")
    rng = np.random.default_rng(np.uint64(seed))
    opinions = np.zeros(n, dtype=np.int8)
    opinions[rng.permutation(n)[:num_a]] = OPINION_A
    wp_of = np.empty(n, dtype=np.int32)
    wp_of[rng.permutation(n)] = np.repeat(
        np.arange(params.num_workplaces, dtype=np.int32), n // params.num_workplaces
    )
    return SimState(opinions, wp_of, params.household_size, params.num_workplaces)


def group_proportion(state: SimState, vertex: int) -> tuple[float, float]:
    """Proportions (h, w) of the vertex's own opinion in its household and
    workplace, counting the vertex itself."""
    if not (0 <= vertex < state.n):
        raise IndexError(f"vertex {vertex} out of range")
    o = state.opinions[vertex]
    hh = state.household_of[vertex]
    wp = state.workplace_of[vertex]
    ca_h = state.hh_a[hh]
    own_h = ca_h if o == OPINION_A else state.household_size - ca_h
    sz = state.wp_size[wp]
    ca_w = state.wp_a[wp]
    own_w = ca_w if o == OPINION_A else sz - ca_w
    return own_h / state.household_size, own_w / sz


def weighted_average(h: float, w: float, lam: float) -> float:
    """Support a = (h + lam*w) / (1 + lam)."""
    return (h + lam * w) / (1.0 + lam)


def candidate_workplaces(state: SimState, vertex: int) -> np.ndarray:
    """Workplaces a moving vertex may join, evaluated before it joins.

    Primary set: workplaces other than the current one where the vertex's
    opinion holds a strict majority of the present members (empty workplaces
    never qualify).  If the primary set is empty the fallback is every other
    workplace; with a single workplace the result is empty and the move is a
    no-op.
    """
    if not (0 <= vertex < state.n):
        raise IndexError(f"vertex {vertex} out of range")
    o = state.opinions[vertex]
    current = state.workplace_of[vertex]
    own = state.wp_a if o == OPINION_A else state.wp_size - state.wp_a
    majority = 2 * own > state.wp_size
    majority[current] = False
    primary = np.flatnonzero(majority)
    if primary.size:
        return primary
    others = np.arange(state.num_workplaces)
    return others[others != current]


def change_probabilities(state: SimState, params: ModelParams):
    """Per-vertex flip and move probabilities, conditional on being chosen.

    The move probability is the probability that the state actually changes:
    with a single workplace there is no destination, so it is zero even when
    w < r2.
    """
    o = state.opinions.astype(np.int64)
    ca_h = state.hh_a[state.household_of].astype(np.int64)
    own_h = np.where(o == OPINION_A, ca_h, state.household_size - ca_h)
    sz = state.wp_size[state.workplace_of].astype(np.int64)
    ca_w = state.wp_a[state.workplace_of].astype(np.int64)
    own_w = np.where(o == OPINION_A, ca_w, sz - ca_w)
    h = own_h / state.household_size
    w = own_w / sz
    a = (h + params.lam * w) / (1.0 + params.lam)
    flip = np.where(a < params.r1, params.beta * (params.r1 - a), 0.0)
    can_move = state.num_workplaces >= 2
    move = np.where((w < params.r2) & can_move, params.q * (params.r2 - w), 0.0)
    return flip, move


def is_absorbing(state: SimState, params: ModelParams) -> bool:
    """True iff no micro-step can change the state.

    Equivalent to: every vertex has a >= r1, and (q == 0 or w >= r2 or there
    is no other workplace to move to).
    """
    flip, move = change_probabilities(state, params)
    return not (flip.any() or move.any())


def _apply_step(
    state: SimState,
    params: ModelParams,
    vertex: int,
    u_flip: float,
    u_move: float,
    u_target: float,
) -> StepOutcome:
    """Reference single-step update; mirrors the compiled kernel exactly."""
    o = state.opinions[vertex]
    hh = state.household_of[vertex]
    wp = state.workplace_of[vertex]
    ca_h = state.hh_a[hh]
    own_h = ca_h if o == OPINION_A else state.household_size - ca_h
    sz = state.wp_size[wp]
    ca_w = state.wp_a[wp]
    own_w = ca_w if o == OPINION_A else sz - ca_w
    h = own_h / state.household_size
    w = own_w / sz
    a = (h + params.lam * w) / (1.0 + params.lam)
    if a < params.r1 and u_flip < params.beta * (params.r1 - a):
        delta = 1 if o == OPINION_B else -1
        state.opinions[vertex] = 1 - o
        state.hh_a[hh] += delta
        state.wp_a[wp] += delta
        return StepOutcome(vertex, StepKind.OPINION_FLIPPED)
    if w < params.r2 and u_move < params.q * (params.r2 - w):
        target = _kernel.choose_target(
            state.wp_a, state.wp_size, o, wp, u_target
        )
        if target >= 0:
            state.workplace_of[vertex] = target
            state.wp_size[wp] -= 1
            state.wp_size[target] += 1
            if o == OPINION_A:
                state.wp_a[wp] -= 1
                state.wp_a[target] += 1
            return StepOutcome(vertex, StepKind.MOVED_WORKPLACE, wp, target)
    return StepOutcome(vertex, StepKind.NO_CHANGE)


def micro_step(state: SimState, params: ModelParams, rng: np.random.Generator) -> StepOutcome:
    """One stochastic micro-step, mutating ``state``.

    Consumes exactly four draws from ``rng`` in a fixed order (vertex index,
    flip uniform, move uniform, target uniform) regardless of the branch
    taken, so trajectories are reproducible from the generator state alone.
    """
    vertex = int(rng.integers(0, state.n))
    u_flip, u_move, u_target = rng.random(3)
    return _apply_step(state, params, vertex, u_flip, u_move, u_target)
