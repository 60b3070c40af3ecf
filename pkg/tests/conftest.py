import numpy as np
import pytest
from hypothesis import settings

from opdyn.model import SimState

settings.register_profile("ci", derandomize=True, max_examples=100)
settings.load_profile("ci")


def make_state(opinions: str, workplaces: str, household_size: int = 5,
               num_workplaces: int | None = None) -> SimState:
    """Build a state from compact strings, e.g. ('AABBB BBBBB', '00110 11001')."""
    opinions = opinions.replace(" ", "")
    workplaces = workplaces.replace(" ", "")
    ops = [1 if c == "A" else 0 for c in opinions]
    wps = [int(c) for c in workplaces]
    if num_workplaces is None:
        num_workplaces = max(wps) + 1
    return SimState(ops, wps, household_size, num_workplaces)


# Hand-built 10-vertex reference configurations, named by family label.
# (a): consensus, workplaces straddling both households
# (b): opposite homogeneous households, workplaces aligned with them
# (e): two 2/3-mixed households, homogeneous workplaces of sizes 4 and 6
STATE_A = ("AAAAA AAAAA", "01010 10101")
STATE_B = ("AAAAA BBBBB", "00000 11111")
STATE_E = ("AABBB AABBB", "00111 00111")


@pytest.fixture
def state_a():
    return make_state(*STATE_A)


@pytest.fixture
def state_b():
    return make_state(*STATE_B)


@pytest.fixture
def state_e():
    return make_state(*STATE_E)


def random_state(rng: np.random.Generator, n: int = 10, household_size: int = 5,
                 num_workplaces: int = 2) -> SimState:
    """Uniform random opinions and (possibly unbalanced) workplace assignment."""
    opinions = rng.integers(0, 2, size=n).astype(np.int8)
    wps = rng.integers(0, num_workplaces, size=n).astype(np.int32)
    return SimState(opinions, wps, household_size, num_workplaces)
