import pytest
import yaml

from crosspose.config import (
    AdaptationConfig, RunManifest, apply_overrides, load_config, load_dataset, save_config,
)
from crosspose.errors import ConfigError
from crosspose.synthetic import default_proportions


def test_defaults_round_trip(tmp_path):
    cfg = AdaptationConfig()
    path = tmp_path / "cfg.yaml"
    save_config(cfg, path)
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.hash() == cfg.hash()


def test_hash_changes_with_values():
    a = AdaptationConfig()
    b = AdaptationConfig()
    b.loss.w2 = 1.0
    assert a.hash() != b.hash()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        AdaptationConfig.from_dict({"learning_rate": 0.1})


def test_overrides():
    cfg = AdaptationConfig()
    out = apply_overrides(cfg, ["loss.w2=1", "seed=9"])
    assert out.loss.w2 == 1 and out.seed == 9
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["nosuch.key=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["badpair"])


def test_load_config_rejects_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("a: [unclosed")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(path)


def test_tiny_config_fixture_loads(tiny_config_file):
    cfg = load_config(tiny_config_file)
    assert cfg.model.num_keypoints == 19
    assert cfg.stages.stages[0].lr == pytest.approx(0.001)


def test_load_dataset_synth_and_mix(tiny_config_file):
    cfg = load_config(tiny_config_file)
    human = load_dataset(cfg.data["human"], labeled=True)
    assert len(human) == 6 and all(i.y == 0 for i in human)
    animal = load_dataset(cfg.data["animal"], labeled=True)
    assert len(animal) == 6 and len(animal.species_list()) == 2
    target = load_dataset(cfg.data["target_unlabeled"], labeled=False)
    assert all(i.z == 1 for i in target) and target.hidden_truth


def test_load_dataset_validates_entry():
    with pytest.raises(ConfigError):
        load_dataset({"nonsense": 1})
    with pytest.raises(ConfigError):
        load_dataset("a string")


def test_manifest_checks_artifacts(tmp_path):
    log = tmp_path / "metrics.csv"
    log.write_text("epoch\n0\n")
    m = RunManifest(config_hash="x", seed=0, command="train wscda", datasets={},
                    checkpoints=[], metric_logs=[str(log)], stage_reached=2,
                    param_checksum="y")
    m.save(tmp_path / "manifest.json")
    loaded = RunManifest.load(tmp_path / "manifest.json")
    assert loaded.param_checksum == "y"
    bad = RunManifest(config_hash="x", seed=0, command="c", datasets={},
                      checkpoints=[str(tmp_path / "missing.npz")], metric_logs=[],
                      stage_reached=0, param_checksum="y")
    with pytest.raises(ConfigError, match="missing artifact"):
        bad.save(tmp_path / "m2.json")
