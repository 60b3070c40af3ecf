"""Exact absorbing-state analysis of the 10-vertex toy system.

Two households (vertices 0-4 and 5-9) and two workplaces make the full
product space of opinion and workplace assignments a 20-bit integer, small
enough to sweep exhaustively.  Absorbing states are grouped into canonical
classes (orbits under opinion swap, household swap and workplace relabeling)
and mapped onto structural families:

  a  single opinion present, any workplace structure
  b  opposite homogeneous households, workplaces aligned with them
  c  opposite homogeneous households, balanced workplaces of sizes 6 and 4
  d  opposite homogeneous households, balanced workplaces of sizes 8 and 2
  e  households split 2/3 and 2/3, homogeneous workplaces
  f  households split 3/2 and 2/3, homogeneous workplaces
  g  one homogeneous household, one split 2/3, homogeneous workplaces
  h  one homogeneous household, one split 3/2, homogeneous workplaces

Absorbing states outside these families are reported with a ``variant:``
label rather than forced into the list.  (The exhaustive sweep does find
such states under the nonlinear thresholds, e.g. a balanced workplace next
to a homogeneous one with one mixed household; see the enumeration output.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from opdyn import _kernel
from opdyn.model import ModelParams, SimState, build_initial_state, is_absorbing
from opdyn.seeds import TAG_DYNAMICS, TAG_INIT, TAG_TOY, mix64

TOY_N = 10
TOY_HOUSEHOLD_SIZE = 5
TOY_WORKPLACES = 2
_MASK10 = (1 << 10) - 1

LINEAR = "linear"
NONLINEAR = "nonlinear"

FAMILY_LABELS = ("a", "b", "c", "d", "e", "f", "g", "h")
MIXED_HOUSEHOLD_FAMILIES = ("e", "f", "g", "h")
TWO_HOUSEHOLD_FAMILIES = ("b", "c", "d")


def regime_thresholds(regime: str) -> tuple[float, float]:
    if regime == LINEAR:
        return 1.0, 1.0
    if regime == NONLINEAR:
        return 0.5, 0.5
    raise ValueError(f"unknown regime {regime!r}")


def toy_params(beta: float, q: float, regime: str, lam: float = 0.5) -> ModelParams:
    r1, r2 = regime_thresholds(regime)
    return ModelParams(
        beta=beta, q=q, r1=r1, r2=r2, lam=lam,
        n=TOY_N, household_size=TOY_HOUSEHOLD_SIZE, num_workplaces=TOY_WORKPLACES,
    )


def encode_state(opinions, workplace_of) -> int:
    """Pack a toy state into 20 bits: bit v = opinion, bit 10+v = workplace."""
    code = 0
    for v in range(TOY_N):
        code |= int(opinions[v]) << v
        code |= int(workplace_of[v]) << (10 + v)
    return code


def decode_state(code: int):
    opinions = np.array([(code >> v) & 1 for v in range(TOY_N)], dtype=np.int8)
    workplace_of = np.array([(code >> (10 + v)) & 1 for v in range(TOY_N)], dtype=np.int32)
    return opinions, workplace_of


def to_sim_state(code: int) -> SimState:
    opinions, workplace_of = decode_state(code)
    return SimState(opinions, workplace_of, TOY_HOUSEHOLD_SIZE, TOY_WORKPLACES)


def _swap_households(bits: int) -> int:
    # vertex relabeling v -> (v + 5) mod 10 on a 10-bit field
    return ((bits << 5) | (bits >> 5)) & _MASK10


def canonical_class(code: int) -> int:
    """Minimum encoding over the 8-element symmetry group (opinion swap x
    household swap x workplace relabeling)."""
    op = code & _MASK10
    wp = (code >> 10) & _MASK10
    best = None
    for hh_swap in (False, True):
        o1 = _swap_households(op) if hh_swap else op
        w1 = _swap_households(wp) if hh_swap else wp
        for op_swap in (False, True):
            o2 = o1 ^ _MASK10 if op_swap else o1
            for wp_swap in (False, True):
                w2 = w1 ^ _MASK10 if wp_swap else w1
                cand = (w2 << 10) | o2
                if best is None or cand < best:
                    best = cand
    return best


def render_state(code: int) -> tuple[str, str]:
    """Human-readable (opinions, workplaces) strings, vertex 0 first."""
    opinions, workplace_of = decode_state(code)
    ops = "".join("A" if o else "B" for o in opinions)
    wps = "".join(str(int(w)) for w in workplace_of)
    return ops, wps


def classify_family(code: int) -> str:
    """Structural family label of an absorbing toy state ('a'..'h' or
    'variant:<description>')."""
    opinions, workplace_of = decode_state(code)
    k1 = int(opinions[:5].sum())
    k2 = int(opinions[5:].sum())
    n_a = k1 + k2
    if n_a in (0, TOY_N):
        return "a"
    wp_comp = []
    for j in range(TOY_WORKPLACES):
        members = workplace_of == j
        a = int(opinions[members].sum())
        b = int(members.sum()) - a
        wp_comp.append((a, b))
    all_homog = all(a == 0 or b == 0 for a, b in wp_comp)
    households_opposite = {k1, k2} == {0, 5}
    if households_opposite:
        if all_homog and all(a + b > 0 for a, b in wp_comp):
            return "b"
        if all(a == b for a, b in wp_comp):
            sizes = tuple(sorted(a + b for a, b in wp_comp))
            if sizes == (4, 6):
                return "c"
            if sizes == (2, 8):
                return "d"
            return "variant:balanced-" + "-".join(str(s) for s in sizes)
        return "variant:homogeneous-households"
    if all_homog:
        canon = min(tuple(sorted((k1, k2))), tuple(sorted((5 - k1, 5 - k2))))
        label = {(2, 2): "e", (2, 3): "f", (0, 3): "g", (0, 2): "h"}.get(canon)
        if label is not None:
            return label
        return "variant:mixed-households"
    return "variant:hybrid-workplaces"


@dataclass(frozen=True)
class AbsorbingClass:
    canonical_key: int
    family: str
    raw_count: int
    representative: int


@dataclass(frozen=True)
class ToyEnumeration:
    regime: str
    lam: float
    classes: tuple  # AbsorbingClass, sorted by canonical key
    absorbing_codes: np.ndarray  # all raw absorbing encodings, sorted

    @property
    def total_raw(self) -> int:
        return int(self.absorbing_codes.size)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def families(self) -> set:
        return {c.family for c in self.classes}

    def family_raw_counts(self) -> dict:
        out: dict = {}
        for c in self.classes:
            out[c.family] = out.get(c.family, 0) + c.raw_count
        return out

    def key_to_family(self) -> dict:
        return {c.canonical_key: c.family for c in self.classes}


def absorbing_mask(r1: float, r2: float, lam: float = 0.5) -> np.ndarray:
    """Boolean mask over all 2^20 toy states: absorbing under (r1, r2, lam)
    with the workplace condition active (q > 0)."""
    m = 1 << 20
    idx = np.arange(m, dtype=np.uint32)
    op = ((idx[:, None] >> np.arange(10, dtype=np.uint32)) & 1).astype(np.int64)
    wb = ((idx[:, None] >> np.arange(10, 20, dtype=np.uint32)) & 1).astype(np.int64)
    hh_a = (op[:, :5].sum(axis=1), op[:, 5:].sum(axis=1))
    sz1 = wb.sum(axis=1)
    sz0 = TOY_N - sz1
    n_a = hh_a[0] + hh_a[1]
    a1 = (op * wb).sum(axis=1)
    a0 = n_a - a1
    ok = np.ones(m, dtype=bool)
    for v in range(TOY_N):
        o = op[:, v]
        ca_h = hh_a[0] if v < 5 else hh_a[1]
        own_h = np.where(o == 1, ca_h, TOY_HOUSEHOLD_SIZE - ca_h)
        in1 = wb[:, v] == 1
        sz = np.where(in1, sz1, sz0)
        ca_w = np.where(in1, a1, a0)
        own_w = np.where(o == 1, ca_w, sz - ca_w)
        h = own_h / TOY_HOUSEHOLD_SIZE
        w = own_w / sz  # sz >= 1: vertex v itself is a member
        a = (h + lam * w) / (1.0 + lam)
        ok &= a >= r1
        ok &= w >= r2
    return ok


def enumerate_absorbing(regime: str, lam: float = 0.5) -> ToyEnumeration:
    """Sweep all 2^20 toy states and group the absorbing ones into canonical
    classes with raw-state counts and family labels.

    The workplace condition is evaluated in its q > 0 form; for q = 0 the
    per-state check in the core model drops it.
    """
    r1, r2 = regime_thresholds(regime)
    mask = absorbing_mask(r1, r2, lam)
    codes = np.flatnonzero(mask)
    groups: dict = {}
    for code in codes:
        code = int(code)
        key = canonical_class(code)
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [code, 1]
    classes = tuple(
        AbsorbingClass(
            canonical_key=key,
            family=classify_family(key),
            raw_count=count,
            representative=rep,
        )
        for key, (rep, count) in sorted(groups.items())
    )
    return ToyEnumeration(
        regime=regime, lam=lam, classes=classes, absorbing_codes=codes.astype(np.int64)
    )


@dataclass(frozen=True)
class ToyRates:
    """Monte-Carlo absorption-rate estimates for one (beta, q) point."""

    params: ModelParams
    num_runs: int
    class_rates: dict  # canonical key -> rate
    family_rates: dict  # family label -> rate
    non_absorbed: float
    mean_steps: float

    def rate(self, *families: str) -> float:
        return sum(self.family_rates.get(f, 0.0) for f in families)

    @property
    def homogeneous_rate(self) -> float:
        return self.rate("a")

    @property
    def mixed_household_rate(self) -> float:
        return self.rate(*MIXED_HOUSEHOLD_FAMILIES)

    @property
    def two_household_rate(self) -> float:
        return self.rate(*TWO_HOUSEHOLD_FAMILIES)


def _run_to_absorption(params: ModelParams, run_seed: int, step_cap: int,
                       chunk: int = 1000):
    state = build_initial_state(params, TOY_N // 2, mix64(run_seed, TAG_INIT))
    rng = np.random.default_rng(mix64(run_seed, TAG_DYNAMICS))
    if is_absorbing(state, params):
        return state, True, 0
    out = np.zeros(_kernel.OUT_LEN, dtype=np.int64)
    steps = 0
    while steps < step_cap:
        m = min(chunk, step_cap - steps)
        vidx = rng.integers(0, TOY_N, size=m)
        u_flip = rng.random(m)
        u_move = rng.random(m)
        u_target = rng.random(m)
        out[_kernel.OUT_MIN_WP_SIZE] = state.wp_size.min()
        _kernel.run_chunk(
            state.opinions, state.household_of, state.workplace_of,
            state.hh_a, state.wp_a, state.wp_size,
            params.household_size, params.beta, params.q,
            params.r1, params.r2, params.lam,
            vidx, u_flip, u_move, u_target, TOY_N, out,
        )
        steps += int(out[_kernel.OUT_STEPS])
        if out[_kernel.OUT_ABSORBED]:
            return state, True, steps
    return state, False, steps


def absorption_rates(params: ModelParams, num_runs: int, master_seed: int,
                     step_cap: int = 10**6) -> ToyRates:
    """Estimate per-class absorption rates from ``num_runs`` independent runs,
    each starting from a fresh random 5-A / balanced-workplace state."""
    if params.n != TOY_N or params.num_workplaces != TOY_WORKPLACES:
        raise ValueError("absorption_rates requires the (10, 2, 2) toy geometry")
    if num_runs < 1:
        raise ValueError("num_runs must be >= 1")
    class_counts: dict = {}
    family_counts: dict = {}
    absorbed_runs = 0
    total_steps = 0
    for rep in range(num_runs):
        run_seed = mix64(master_seed, TAG_TOY, rep)
        state, absorbed, steps = _run_to_absorption(params, run_seed, step_cap)
        total_steps += steps
        if not absorbed:
            continue
        absorbed_runs += 1
        key = canonical_class(encode_state(state.opinions, state.workplace_of))
        class_counts[key] = class_counts.get(key, 0) + 1
        family = classify_family(key)
        family_counts[family] = family_counts.get(family, 0) + 1
    return ToyRates(
        params=params,
        num_runs=num_runs,
        class_rates={k: c / num_runs for k, c in sorted(class_counts.items())},
        family_rates={f: c / num_runs for f, c in sorted(family_counts.items())},
        non_absorbed=(num_runs - absorbed_runs) / num_runs,
        mean_steps=total_steps / num_runs,
    )
