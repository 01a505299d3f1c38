import json

import numpy as np
import pytest

from imexglm.tableau import load_method, parse_tableau


def euler_doc(**overrides):
    """Implicit Euler paired with an explicit Euler component sharing c = 1.

    The explicit component carries y + h f in its external stage, so both
    components satisfy the order-1 conditions with c = [1].
    """
    doc = {
        "name": "imex-euler", "mode": "additive", "s": 1, "r": 1, "p": 1,
        "q_explicit": 1, "q_implicit": 1, "c": [1.0],
        "A_explicit": [[0.0]], "A_implicit": [[1.0]], "U": [[1.0]],
        "B_explicit": [[1.0]], "B_implicit": [[1.0]], "V": [[1.0]],
        "W_explicit": [[1.0, 1.0]], "W_implicit": [[1.0, 0.0]],
    }
    doc.update(overrides)
    return doc


def explicit_euler_doc():
    """Forward Euler (c = 0) with an inert implicit partner."""
    return {
        "name": "explicit-euler", "mode": "additive", "s": 1, "r": 1, "p": 1,
        "q_explicit": 1, "q_implicit": 1, "c": [0.0],
        "A_explicit": [[0.0]], "A_implicit": [[0.0]], "U": [[1.0]],
        "B_explicit": [[1.0]], "B_implicit": [[1.0]], "V": [[1.0]],
        "W_explicit": [[1.0, 0.0]], "W_implicit": [[1.0, 0.0]],
    }


def make_pair(doc):
    return parse_tableau(json.dumps(doc))


@pytest.fixture(scope="session")
def p1():
    return load_method("imex-glm-p1")


@pytest.fixture(scope="session")
def p2():
    return load_method("imex-glm-p2")


@pytest.fixture(scope="session")
def minf_neg1():
    return load_method("imex-glm-p2-minf-neg1")


@pytest.fixture(scope="session")
def minf_pos1():
    return load_method("imex-glm-p2-minf-pos1")


@pytest.fixture(scope="session")
def euler():
    return make_pair(euler_doc())


@pytest.fixture(scope="session")
def fwd_euler():
    return make_pair(explicit_euler_doc())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
