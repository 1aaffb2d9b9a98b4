import numpy as np
import pytest

from reschrom import (
    CosineSchedule,
    LinearSchedule,
    NaturalSchedule,
    TabulatedSchedule,
)


@pytest.fixture
def natural():
    return NaturalSchedule()


@pytest.fixture
def cosine():
    return CosineSchedule()


@pytest.fixture
def linear():
    return LinearSchedule()


def make_tabulated(n_knots: int = 200, seed: int = 0) -> TabulatedSchedule:
    """Random smooth-ish tabulated schedule: a warped cosine sampled densely."""
    rng = np.random.default_rng(seed)
    base = CosineSchedule(offset=rng.uniform(0.004, 0.02))
    ts = np.sort(rng.uniform(0.0, 1.0, n_knots - 2))
    ts = np.concatenate([[0.0], ts, [1.0]])
    alphas = np.asarray(base.alpha(ts))
    return TabulatedSchedule(list(zip(ts, alphas)))


@pytest.fixture
def tabulated():
    return make_tabulated()


@pytest.fixture
def all_schedules(natural, cosine, linear, tabulated):
    return {
        "natural": natural,
        "cosine": cosine,
        "linear": linear,
        "tabulated": tabulated,
    }


def interior_times(schedule, n: int, rng, lo: float = 0.02, hi: float = 0.98):
    """Random times in the domain interior (clamp plateaus excluded)."""
    span = schedule.t_max - schedule.t_min
    return schedule.t_min + span * rng.uniform(lo, hi, n)
