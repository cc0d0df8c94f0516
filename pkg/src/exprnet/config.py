"""JSON run configuration: ``model``, ``train``, ``augment`` and ``data``
sections, every field optional. Unknown keys are rejected by name."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .augment import AugmentConfig
from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig

SECTIONS = ("model", "train", "augment", "data")


@dataclass
class DataConfig:
    dir: Optional[str] = None
    val_frac: float = 0.2
    seed: int = 0


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def model(self) -> ModelConfig:
        return self.train.model

    def to_dict(self) -> dict:
        t = self.train.to_dict()
        return {"model": t.pop("model"), "augment": t.pop("augment"), "train": t,
                "data": dataclasses.asdict(self.data)}

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _checked(cls, section: str, values: dict, exclude=()):
    if not isinstance(values, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key '{section}.{key}'")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"section '{section}': {e}") from None


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(f"unknown key '{key}'")
    model = _checked(ModelConfig, "model", doc.get("model", {}))
    if "augment" in doc and doc["augment"] is None:
        augment = None
    else:
        augment = _checked(AugmentConfig, "augment", doc.get("augment", {}))
    train_values = dict(doc.get("train", {}))
    train = _checked(TrainConfig, "train", train_values, exclude=("model", "augment"))
    train = train.replace(model=model, augment=augment)
    data = _checked(DataConfig, "data", doc.get("data", {}))
    return RunConfig(train, data)


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_run_config(doc)
