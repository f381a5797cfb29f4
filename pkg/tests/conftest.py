import numpy as np
import pytest

from amplitude import AmplitudeProcess, ClassicalProcess, action_table, classical_table
from causet import parse_causet
from growth import PathSpace, build_levels

# Sites of the worked three-step example, in canonical order
SITES = {
    "x1": "1;",
    "x2": "2;0<1",
    "x3": "2;",
    "x4": "3;0<1,1<2",
    "x5": "3;0<1,0<2",
    "x6": "3;0<1",
    "x7": "3;0<2,1<2",
    "x8": "3;",
}

A3 = np.array([-0.5, 0.5, 0.5, 0.5, 0.25, -0.25], dtype=complex)


@pytest.fixture(scope="session")
def levels():
    return build_levels(5)


@pytest.fixture(scope="session")
def space(levels):
    return PathSpace(levels)


@pytest.fixture(scope="session")
def action(levels, space):
    return AmplitudeProcess(action_table(levels), space)


@pytest.fixture(scope="session")
def uniform(levels, space):
    return ClassicalProcess(classical_table(levels), space)


@pytest.fixture(scope="session")
def sites():
    return {name: parse_causet(text) for name, text in SITES.items()}


@pytest.fixture(scope="session")
def a3():
    """Amplitudes of the six 3-paths under the action process."""
    return A3.copy()
