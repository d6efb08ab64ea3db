from pathlib import Path

import pytest

from losses.bundle import ABLATION_PRESETS, LossToggles
from training.config import ConfigError, OimTarget, TrainConfig, apply_overrides, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_defaults():
    config = load_config()
    assert config.optim.lr == pytest.approx(1e-3)
    assert config.optim.momentum == pytest.approx(0.9)
    assert config.optim.weight_decay == pytest.approx(5e-4)
    assert config.losses.oim_on == OimTarget.BOTH
    assert config.losses.toggles == LossToggles()
    assert config.device == "cpu"
    assert config.metrics_path == Path("runs/default/metrics.jsonl")
    assert config.checkpoint_dir == Path("runs/default/checkpoints")


def test_device_comes_from_environment(monkeypatch):
    monkeypatch.setenv("DEVICE", "cuda:1")
    assert TrainConfig().device == "cuda:1"


def test_toy_file():
    config = load_config(CONFIGS / "toy.yaml")
    assert config.toy_mode
    backbone = config.backbone_config()
    assert backbone.architecture_id == "resnet18"
    assert tuple(backbone.image_size) == (64, 64)
    assert config.teacher.embedding_dim == backbone.embedding_dim
    assert config.encoders.kind == "toy"


def test_reference_file():
    config = load_config(CONFIGS / "reference.yaml")
    assert not config.toy_mode
    backbone = config.backbone_config()
    assert backbone.architecture_id == "resnet50"
    assert tuple(backbone.image_size) == (900, 1500)
    assert config.encoders.text_dim == 512


def test_overrides_are_yaml_scalars():
    config = load_config(
        CONFIGS / "toy.yaml",
        ["optim.lr=0.01", "toy_mode=true", "losses.oim_on=predicted", "eval.confidence_floor=0.2", "max_steps=3"],
    )
    assert config.optim.lr == pytest.approx(0.01)
    assert config.losses.oim_on == OimTarget.PREDICTED
    assert config.eval.confidence_floor == pytest.approx(0.2)
    assert config.max_steps == 3


def test_apply_overrides_builds_sections():
    assert apply_overrides({}, ["a.b.c=1", "d=[1, 2]"]) == {"a": {"b": {"c": 1}}, "d": [1, 2]}
    with pytest.raises(ConfigError):
        apply_overrides({"a": 1}, ["a.b=2"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no_equals_sign"])


@pytest.mark.parametrize("name", sorted(ABLATION_PRESETS))
def test_ablation_presets(name):
    toggles = load_config(overrides=[f"losses.ablation={name}"]).losses.toggles
    assert {k for k, on in toggles.model_dump().items() if on} == set(ABLATION_PRESETS[name])


def test_preset_wins_over_explicit_toggles():
    config = load_config(overrides=["losses.toggles.sra_obj=false", "losses.ablation=full"])
    assert config.losses.toggles.sra_obj


@pytest.mark.parametrize(
    "overrides",
    [["losses.ablation=everything"], ["optim.learning_rate=0.1"], ["batch_size=0"], ["losses.oim_momentum=1.0"]],
)
def test_invalid_settings(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_bad_backbone_override():
    config = load_config(CONFIGS / "toy.yaml", ["backbone.stem_output_channels=999"])
    with pytest.raises(ConfigError):
        config.backbone_config()
