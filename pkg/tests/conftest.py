import copy
import json

import pytest

SMALL_CONFIG = {
    "seed": 7,
    "dataset": {"kind": "blobs", "k": 3, "d": 4, "n_per_class": 40, "separation": 3.0},
    "primal": {"arch": {"kind": "mlp", "layer_widths": [4, 16, 3]}, "train": {"epochs": 10}},
    "auxiliary": {"arch": {"kind": "mlp", "layer_widths": [4, 24, 3], "activation": "tanh"},
                  "train": {"epochs": 10}},
    "substitute": {"arch": {"kind": "mlp", "layer_widths": [4, 8, 3]}, "train": {"epochs": 10}},
    "attacks": [
        {"name": "fgsm", "kind": "fgsm", "epsilon": 0.15},
        {"name": "pgd", "kind": "pgd", "epsilon": 0.15, "step_size": 0.04},
        {"name": "rs", "kind": "random_search", "epsilon": 0.15, "query_budget": 100},
        {"name": "transfer", "kind": "transfer", "epsilon": 0.15, "step_size": 0.04},
        {"name": "adaptive", "kind": "adaptive", "epsilon": 0.15, "step_size": 0.04},
    ],
    "detector": {"metrics": [1, 2, 3, 4]},
}


@pytest.fixture
def small_config():
    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture(scope="session")
def small_study():
    from pidetect.benchmark import run_study
    from pidetect.config import config_from_dict

    return run_study(config_from_dict(copy.deepcopy(SMALL_CONFIG)))


@pytest.fixture
def small_config_path(tmp_path, small_config):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(small_config), encoding="utf-8")
    return path
