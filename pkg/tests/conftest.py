import numpy as np
import pytest

from sphere_euler.mesh import build_icosphere
from sphere_euler.energy import theta_power_shortcut
from sphere_euler import euler_solver as es


@pytest.fixture(scope="session")
def zonal_run():
    """The reference regression run shared by solver and acceptance tests."""
    mesh = build_icosphere(3)
    theta = theta_power_shortcut(1.4)
    config = {"h": 0.02, "tau": 0.1, "eps_factor": 2.0,
              "initial": {"preset": "zonal", "a": 0.2, "b": 0.1}}
    states, ledger = es.run(mesh, theta, config)
    return {"mesh": mesh, "theta": theta, "config": config,
            "states": states, "ledger": ledger}
