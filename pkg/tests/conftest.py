import sys
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))  # oracles.py importable


TINY_RUN_CONFIG = {
    "model": {"height": 32, "width": 32, "stage_channels": [2, 4, 4, 4],
              "dan_hidden": 2, "head_channels": [4, 4], "disc_hidden": 4,
              "num_keypoints": 19},
    "loss": {"alpha": -1.0, "beta": 500.0, "w1": 1.0, "w2": 10.0},
    "stages": {"stages": [{"lr": 0.001, "disturbance": False}],
               "window": 3, "max_epochs_per_stage": 2},
    "batch": {"fractions": [0.5, 0.25, 0.25], "batch_size": 8},
    "pplo": {"mu0": 0.9, "mu_step": 0.01, "mu_window": 2, "batch_size": 4,
             "lr": 0.0001, "k_source": 1, "k_target": 1},
    "sigma": 1.5,
    "seed": 3,
    "steps_per_epoch": 2,
    "pplo_epochs": 2,
    "data": {
        "human": {"synth": {"name": "h", "proportions": None, "count": 6,
                            "seed": 11, "human": True}},
        "animal": {"synth_mix": [
            {"name": "a1", "proportions": None, "count": 3, "seed": 12},
            {"name": "a2", "proportions": None, "count": 3, "seed": 13},
        ]},
        "target_unlabeled": {"synth": {"name": "t", "proportions": None,
                                       "count": 4, "seed": 14}},
        "eval": {"synth": {"name": "t", "proportions": None, "count": 4, "seed": 15}},
    },
}


def _fill_proportions(cfg):
    from crosspose.synthetic import default_proportions
    out = yaml.safe_load(yaml.safe_dump(cfg))
    for role, entry in out["data"].items():
        specs = entry.get("synth_mix", [entry.get("synth")])
        for spec in specs:
            if spec and spec.get("proportions") is None:
                kind = "human-like" if spec.get("human") else "animal"
                spec["proportions"] = [float(x) for x in default_proportions(kind)]
    return out


@pytest.fixture
def tiny_config_file(tmp_path):
    cfg = _fill_proportions(TINY_RUN_CONFIG)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path
