import time

import numpy as np
import pytest

from entrapsim import engine
from entrapsim.scenario import bundled_scenario_path, load_scenario

# As-published stress weights (rounded to four digits) and configuration;
# typed out here independently of any package data so tests cannot drift
# with the bundled files.
PUBLISHED_WEIGHTS = {
    (1, 2): 0.2714, (1, 3): 0.2714, (4, 6): 0.2714, (5, 7): 0.2714,
    (1, 4): -0.137, (1, 5): -0.137, (3, 6): -0.137, (2, 7): -0.137,
    (2, 4): 0.548, (3, 5): 0.548, (4, 5): 0.0685, (6, 7): 0.137,
}
CONFIG_POINTS = [(2, 0), (1, 1), (1, -1), (0, 1), (0, -1), (-1, 1), (-1, -1)]

# Exact-ratio stress (weights are integer multiples of one another) whose
# equilibrium residual is identically zero on CONFIG_POINTS.
EXACT_WEIGHTS_UNIT = {
    (1, 2): 4.0, (1, 3): 4.0, (4, 6): 4.0, (5, 7): 4.0,
    (1, 4): -2.0, (1, 5): -2.0, (3, 6): -2.0, (2, 7): -2.0,
    (2, 4): 8.0, (3, 5): 8.0, (4, 5): 1.0, (6, 7): 2.0,
}


@pytest.fixture(scope="session")
def bundled():
    return load_scenario(bundled_scenario_path("entrap2d"))


@pytest.fixture(scope="session")
def bundled_static():
    return load_scenario(bundled_scenario_path("entrap2d_static"))


@pytest.fixture(scope="session")
def bundled_published():
    return load_scenario(bundled_scenario_path("entrap2d_published"))


@pytest.fixture(scope="session")
def full_run(bundled):
    """The closed-loop run of the bundled scenario, with its wall time."""
    t0 = time.perf_counter()
    result = engine.run(bundled)
    elapsed = time.perf_counter() - t0
    return result, elapsed


@pytest.fixture(scope="session")
def nominal_run(bundled):
    """Same scenario with the controller fed exact distances."""
    return engine.run(bundled.replace(exact_rho_feed=True))


def mini_fixed_point_scenario():
    """Four static leaders on the axes, one follower at the origin.

    Every bearing is axis aligned, so displacements, estimates, and their
    weighted sums are exact in floating point and the desired state is an
    exact fixed point of the discretized closed loop.
    """
    return {
        "name": "mini_fixed_point",
        "agents": {"n": 5, "n_l": 4},
        "configuration": [[2, 0], [0, 2], [-2, 0], [0, -2], [0, 0]],
        "stress_edges": [
            {"i": 1, "j": 5, "weight": 1.0},
            {"i": 2, "j": 5, "weight": 1.0},
            {"i": 3, "j": 5, "weight": 1.0},
            {"i": 4, "j": 5, "weight": 1.0},
        ],
        "target": {"p0": [0.0, 0.0], "v0": [0.0, 0.0]},
        "leaders": {
            "kind": "static",
            "initial_positions": [[2, 0], [0, 2], [-2, 0], [0, -2]],
        },
        "followers": {"positions": [[0.0, 0.0]], "velocities": [[0.0, 0.0]]},
        "estimator": {
            "k_1": 1.0,
            "rho_hat0_default": 1.0,
            "rho_hat0": {"5-1": 2.0, "5-2": 2.0, "5-3": 2.0, "5-4": 2.0},
        },
        "gains": {"k_p": 1.0, "k_v": 1.5, "k_delta": 4.0, "delta_bar": 0.2},
        "uncertainty": {"kind": "zero"},
        "integrator": {"dt": 0.001, "horizon": 1.0, "sample_every": 10, "method": "euler"},
        "pe": {"sigma_v": 5.0, "eps_v": 0.5, "sigma_omega": 5.0, "eps_omega": 0.3},
        "avoidance": {"c_c": 0.05},
    }


def consistent_observation(rng):
    """Random kinematically consistent (phi, phi_dot, v_ij, rho) tuple."""
    from entrapsim.geometry import bearing_rate, unit

    phi = unit(rng.normal(size=2))
    v_ij = rng.normal(size=2) * 3.0
    rho = float(rng.uniform(0.2, 10.0))
    return phi, bearing_rate(phi, v_ij, rho), v_ij, rho


def as_array(x):
    return np.asarray(x, dtype=float)
