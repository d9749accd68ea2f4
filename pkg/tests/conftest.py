import copy

import pytest

from evgrid.scenario import config_from_dict, default_config

# Smallest instance with a real deferral decision: one building, two EVs
# parked all day, an expensive stage followed by a cheap one.  Laxity makes
# both EVs must-charge at stage 1, so only the stage-0 policy cell matters
# and the whole episode enumerates in 4 branches.
TINY_RAW = {
    "microgrid": {"buildings": 1, "stages": 2, "stage_hours": 12.0, "window_stages": 2},
    "tariff": {"rmb_per_kwh": [0.8135, 0.3515]},
    "load": {"stage_kw": [[100.0, 100.0]]},
    "wind": {"forecast_stage_kw": [[50.0, 50.0]], "capacity_kw": [200.0], "rel_std": 0.0},
    "ev": {"battery_kwh": 36.0, "charge_kw": 5.0, "charge_eff": 1.0},
    "hes": {
        "capacity_kwh": 100.0,
        "power_kw": 20.0,
        "eff_charge": 0.82,
        "eff_discharge": 0.62,
        "initial_soc": 0.5,
    },
    "limits": {"g_lo_kw": -5600.0, "g_hi_kw": 5600.0},
    "piles": {"per_building": [2]},
    "optimizer": {"paths": 16, "eps_stop": 0.05, "step_xi": 0.1, "max_iter": 30, "actions": 2},
    "fleet": {
        "model": "explicit",
        "ev": [
            {"segments": [[0, 1, 24.0, 30.0]]},
            {"segments": [[0, 1, 24.0, 30.0]]},
        ],
    },
}


def tiny_raw():
    return copy.deepcopy(TINY_RAW)


@pytest.fixture
def tiny_cfg():
    return config_from_dict(tiny_raw())


@pytest.fixture(scope="session")
def default_cfg():
    return default_config()
