"""Experiment configuration: defaults, validation, and config-file parsing.

Experiments are described by a sectioned key/value file (INI syntax) so a
run is a version-controllable artifact; command-line flags only override
the output directory, the seed list, and verbosity.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigurationError

REGIME_KINDS = (
    "centralized_baseline",
    "fl_baseline",
    "framework_balanced",
    "framework_unbalanced_paired",
    "framework_unbalanced_random",
)
GROUP_NAMES = ("image", "audio", "multimodal")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one experiment, with the reference hyperparameters as defaults.

    Defaults: 100 global epochs, learning rate 0.001, batch size 10,
    30 participants with 10 local epochs and local batch 10, temperature
    0.5, width scale 0.25.
    """

    # experiment
    regime: str = "framework_balanced"
    seeds: tuple[int, ...] = (0, 1, 2)
    global_epochs: int = 100
    groups: tuple[str, ...] = GROUP_NAMES
    reference_report: str | None = None
    # model
    scale: float = 0.25
    embed_dim: int | None = None
    leaky_slope: float = 0.01
    # data
    data_source: str = "synthetic"
    classes: int = 9
    per_class: int = 200
    image_dim: int = 64
    audio_dim: int = 40
    latent_dim: int = 16
    noise_sigma: float = 0.5
    within_class_jitter: float = 0.5
    image_csv: str | None = None
    audio_csv: str | None = None
    label_csv: str | None = None
    combined_csv: str | None = None
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    # federation
    participants: int = 30
    local_epochs: int = 10
    local_batch: int = 10
    batch_size: int = 10
    learning_rate: float = 0.001
    temperature: float = 0.5
    min_count: int | None = None
    workers: int = 1
    # output
    output_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.regime not in REGIME_KINDS:
            raise ConfigurationError(f"unknown regime {self.regime!r}")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ConfigurationError("seeds must be nonnegative")
        if self.global_epochs < 1:
            raise ConfigurationError("global_epochs must be >= 1")
        bad_groups = [g for g in self.groups if g not in GROUP_NAMES]
        if bad_groups or not self.groups:
            raise ConfigurationError(f"invalid groups {self.groups!r}")
        if self.regime.startswith("framework") and set(self.groups) != set(GROUP_NAMES):
            raise ConfigurationError("framework regimes need all three groups")
        if self.scale <= 0:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigurationError("embed_dim must be >= 1")
        if self.data_source not in ("synthetic", "csv"):
            raise ConfigurationError(f"unknown data source {self.data_source!r}")
        if self.data_source == "csv":
            separate = all(p for p in (self.image_csv, self.audio_csv, self.label_csv))
            if not separate and not self.combined_csv:
                raise ConfigurationError(
                    "csv source needs image/audio/label paths or a combined path"
                )
        else:
            if self.classes < 2 or self.per_class < 1:
                raise ConfigurationError("synthetic data needs classes >= 2, per_class >= 1")
            if min(self.image_dim, self.audio_dim, self.latent_dim) < 1:
                raise ConfigurationError("feature and latent dims must be >= 1")
            if self.noise_sigma < 0 or self.within_class_jitter < 0:
                raise ConfigurationError("noise levels must be nonnegative")
        for name in ("train_fraction", "val_fraction", "test_fraction"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must sum to 1, got {total}")
        if self.participants < 1:
            raise ConfigurationError("participants must be >= 1")
        if self.local_epochs < 0:
            raise ConfigurationError("local_epochs must be >= 0")
        if self.local_batch < 1 or self.batch_size < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.min_count is not None and self.min_count < 1:
            raise ConfigurationError("min_count must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        out["groups"] = list(self.groups)
        return out


# config-file layout: section -> {key: config field}
_LAYOUT = {
    "experiment": {
        "regime": "regime",
        "seeds": "seeds",
        "global_epochs": "global_epochs",
        "groups": "groups",
        "reference_report": "reference_report",
    },
    "model": {
        "scale": "scale",
        "embed_dim": "embed_dim",
        "leaky_slope": "leaky_slope",
    },
    "data": {
        "source": "data_source",
        "classes": "classes",
        "per_class": "per_class",
        "image_dim": "image_dim",
        "audio_dim": "audio_dim",
        "latent_dim": "latent_dim",
        "noise_sigma": "noise_sigma",
        "within_class_jitter": "within_class_jitter",
        "image_csv": "image_csv",
        "audio_csv": "audio_csv",
        "label_csv": "label_csv",
        "combined_csv": "combined_csv",
        "train_fraction": "train_fraction",
        "val_fraction": "val_fraction",
        "test_fraction": "test_fraction",
    },
    "federation": {
        "participants": "participants",
        "local_epochs": "local_epochs",
        "local_batch": "local_batch",
        "batch_size": "batch_size",
        "learning_rate": "learning_rate",
        "temperature": "temperature",
        "min_count": "min_count",
        "workers": "workers",
    },
    "output": {
        "directory": "output_dir",
    },
}

_INT_TUPLE_FIELDS = {"seeds"}
_STR_TUPLE_FIELDS = {"groups"}
_INT_FIELDS = {
    "global_epochs", "classes", "per_class", "image_dim", "audio_dim", "latent_dim",
    "participants", "local_epochs", "local_batch", "batch_size", "workers",
    "embed_dim", "min_count",
}
_FLOAT_FIELDS = {
    "scale", "leaky_slope", "noise_sigma", "within_class_jitter",
    "train_fraction", "val_fraction", "test_fraction", "learning_rate", "temperature",
}


def _coerce(field_name: str, raw: str):
    text = raw.strip()
    try:
        if field_name in _INT_TUPLE_FIELDS:
            return tuple(int(tok) for tok in text.replace(",", " ").split())
        if field_name in _STR_TUPLE_FIELDS:
            return tuple(text.replace(",", " ").split())
        if field_name in _INT_FIELDS:
            return int(text)
        if field_name in _FLOAT_FIELDS:
            return float(text)
    except ValueError:
        raise ConfigurationError(f"cannot parse {field_name} value {raw!r}") from None
    return text


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        read = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if not read:
        raise ConfigurationError(f"config file not found: {path}")

    overrides = {}
    for section in parser.sections():
        if section not in _LAYOUT:
            raise ConfigurationError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _LAYOUT[section]:
                raise ConfigurationError(f"{path}: unknown key {key!r} in [{section}]")
            field_name = _LAYOUT[section][key]
            overrides[field_name] = _coerce(field_name, raw)

    known = {f.name for f in fields(ExperimentConfig)}
    assert set(overrides) <= known
    cfg = replace(ExperimentConfig(), **overrides)
    return cfg.validate()
