import numpy as np
import pytest

from osc_pic.core import Ensemble
from osc_pic.fields import make_field
from osc_pic.fine_solver import CharacteristicODE

EPS = 0.01


def make_ensemble(r, v, weights=None, time=0.0):
    r = np.atleast_1d(np.asarray(r, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    w = np.full(r.size, 1.0 / r.size) if weights is None else weights
    return Ensemble(r, v, np.asarray(w, dtype=float), time)


@pytest.fixture
def zero_ode():
    return CharacteristicODE(EPS, make_field("zero"))


@pytest.fixture
def cubic_ode():
    return CharacteristicODE(EPS, make_field("cubic"))
