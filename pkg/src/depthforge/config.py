"""JSON run configuration: parsing, serialization, seed overrides.

Parsing is strict about key names (a typo should fail loudly, not fall
back to a default) but lenient about omissions: any missing key keeps its
dataclass default, so a config file only states what it changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

from .engine import RunConfig, run_config_dict
from .errors import ConfigError
from .perturb import PerturbConfig
from .synth import DataConfig, SceneSpec


@dataclass(frozen=True)
class ExperimentConfig:
    """One run's worth of configuration: the training run and its data."""

    run: RunConfig = RunConfig()
    data: DataConfig = DataConfig()


_TUPLE_FIELDS = {
    "ratio",
    "brightness",
    "contrast",
    "saturation",
    "hue",
    "blur_sigma",
    "cutmix_area",
    "cutmix_aspect",
    "primitive_count",
    "depth_range",
}


def _build(cls, payload: dict, where: str):
    """Construct a flat dataclass from a dict, rejecting unknown keys."""
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected an object, got {type(payload).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in payload.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError(f"{where}.{key}: expected a two-element list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def run_config_from_dict(payload: dict) -> RunConfig:
    payload = dict(payload) if isinstance(payload, dict) else payload
    if not isinstance(payload, dict):
        raise ConfigError(f"run: expected an object, got {type(payload).__name__}")
    perturb_payload = payload.pop("perturb", None)
    config = _build(RunConfig, payload, "run")
    if perturb_payload is not None:
        config = replace(config, perturb=_build(PerturbConfig, perturb_payload, "run.perturb"))
    return config


def data_config_from_dict(payload: dict) -> DataConfig:
    payload = dict(payload) if isinstance(payload, dict) else payload
    if not isinstance(payload, dict):
        raise ConfigError(f"data: expected an object, got {type(payload).__name__}")
    scene_payload = payload.pop("scene", None)
    config = _build(DataConfig, payload, "data")
    if scene_payload is not None:
        config = replace(config, scene=_build(SceneSpec, scene_payload, "data.scene"))
    return config


def experiment_from_dict(payload: dict) -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ConfigError(f"config: expected an object, got {type(payload).__name__}")
    unknown = sorted(set(payload) - {"run", "data"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    run = run_config_from_dict(payload["run"]) if "run" in payload else RunConfig()
    data = data_config_from_dict(payload["data"]) if "data" in payload else DataConfig()
    return ExperimentConfig(run=run, data=data)


def scene_spec_dict(scene: SceneSpec) -> dict:
    return {
        "height": scene.height,
        "width": scene.width,
        "primitive_count": list(scene.primitive_count),
        "depth_range": list(scene.depth_range),
        "sky_fraction": scene.sky_fraction,
        "noise_amplitude": scene.noise_amplitude,
        "domain_id": scene.domain_id,
        "seed": scene.seed,
    }


def data_config_dict(data: DataConfig) -> dict:
    return {
        "scene": scene_spec_dict(data.scene),
        "labeled": data.labeled,
        "unlabeled": data.unlabeled,
        "test": data.test,
    }


def experiment_dict(config: ExperimentConfig) -> dict:
    return {"run": run_config_dict(config.run), "data": data_config_dict(config.data)}


def serialize_config(config: ExperimentConfig) -> str:
    return json.dumps(experiment_dict(config), indent=2, sort_keys=True) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return experiment_from_dict(payload)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(path, config: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Override both the run seed and the scene seed in one step."""
    run = replace(config.run, seed=seed)
    data = replace(config.data, scene=replace(config.data.scene, seed=seed))
    return ExperimentConfig(run=run, data=data)
