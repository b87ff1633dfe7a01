import json
import subprocess
import sys

import pytest


@pytest.fixture(scope="session")
def sim_outputs(tmp_path_factory):
    """Trace/summary produced by the simulator CLI (the published contract)."""
    out = tmp_path_factory.mktemp("simout")
    scenario = subprocess.run(
        [sys.executable, "-c",
         "from entrapsim.scenario import bundled_scenario_path;"
         "print(bundled_scenario_path('entrap2d'))"],
        check=True, capture_output=True, text=True,
    ).stdout.strip()
    subprocess.run(
        [sys.executable, "-m", "entrapsim.cli", "run",
         "--scenario", scenario, "--out", str(out)],
        check=True, capture_output=True, text=True,
    )
    return out / "trace.csv", out / "summary.json"


@pytest.fixture(scope="session")
def empty_outputs(tmp_path_factory):
    """A zero-horizon run: valid header, no rows."""
    out = tmp_path_factory.mktemp("simempty")
    scenario = subprocess.run(
        [sys.executable, "-c",
         "from entrapsim.scenario import bundled_scenario_path;"
         "print(bundled_scenario_path('entrap2d'))"],
        check=True, capture_output=True, text=True,
    ).stdout.strip()
    subprocess.run(
        [sys.executable, "-m", "entrapsim.cli", "run",
         "--scenario", scenario, "--out", str(out), "--horizon", "0"],
        check=True, capture_output=True, text=True,
    )
    return out / "trace.csv", out / "summary.json"


@pytest.fixture(scope="session")
def summary(sim_outputs):
    return json.loads(sim_outputs[1].read_text())
