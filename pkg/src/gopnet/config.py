"""Run configuration: everything needed to reproduce a CLI run."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .progression import ProgressionConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    data: str | None = None
    n_label_cols: int = 1
    horizon: int = 10
    has_day: bool = True
    label_offset: int = 0
    n_classes: int = 3
    folds: int = 9  # 0 = train and evaluate on the whole file
    standardize: bool = True
    out_dir: str = "runs"
    seed: int = 0
    threads: int = 1
    progression: ProgressionConfig = field(default_factory=ProgressionConfig)

    def __post_init__(self):
        if isinstance(self.progression, dict):
            self.progression = ProgressionConfig(**self.progression)
        if self.folds < 0 or self.threads < 1:
            raise ValueError("folds must be >= 0 and threads >= 1")

    def progression_config(self) -> ProgressionConfig:
        """The growth settings with the run seed applied."""
        return dataclasses.replace(self.progression, seed=self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``dotted.key=value`` to a nested config dict; value parsed as JSON when possible."""
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ValueError(f"override {assignment!r} is not key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    target = doc
    for part in parts[:-1]:
        if not isinstance(target.get(part), dict):
            raise ValueError(f"unknown config section {part!r} in {key!r}")
        target = target[part]
    if parts[-1] not in target:
        raise ValueError(f"unknown config key {key!r}")
    target[parts[-1]] = value


def default_dict() -> dict:
    return RunConfig().to_dict()


__all__ = ["RunConfig", "ProgressionConfig", "TrainConfig", "apply_override", "default_dict"]
