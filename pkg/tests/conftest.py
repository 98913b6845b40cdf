import pathlib

import numpy as np
import pytest

from mter import masses_to_env, solve_values, choice_probabilities

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


def consistent_state(x, y, network, demand, params):
    """Env, values, and policies consistent with the given masses."""
    env = masses_to_env(np.asarray(x, float), np.asarray(y, float), network)
    values = solve_values(env, params, demand, network)
    policies = choice_probabilities(values, params, demand, network)
    return env, values, policies
