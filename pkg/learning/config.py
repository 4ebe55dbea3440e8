"""
Experiment configuration.

An `ExperimentConfig` fully determines a run or a sweep. Every field defaults
to the matching constant in `server/conf/settings.py`. Configs are stored as
JSON objects and can be adjusted from the command line with `key=value`
overrides, which are coerced by the field's annotation:

    noise_ratios=0,0.2,0.4      -> (0.0, 0.2, 0.4)
    method=svae                 -> Method.SVAE_REWEIGHT
    alpha_override=none         -> None
    isolate_svae=false          -> False

"""

import json
import os
import types
import typing
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum

from models.svae import Architecture
from server.conf import settings

from .enums import AlphaGranularity, KlSign, Method, NoiseMode, Task

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")
_NONE = ("none", "null", "")


class ConfigError(ValueError):
    pass


def _optional_enum(enum_cls, value):
    return None if value is None else enum_cls(value)


@dataclass(frozen=True)
class ExperimentConfig:
    task: Task = Task(settings.TASK)
    method: Method = Method.from_alias(settings.METHOD)
    noise_ratios: tuple[float, ...] = tuple(settings.NOISE_RATIOS)
    seeds: tuple[int, ...] = tuple(settings.SEEDS)
    noise_mode: NoiseMode | None = _optional_enum(NoiseMode, settings.NOISE_MODE)
    split_fractions: tuple[float, ...] = tuple(settings.SPLIT_FRACTIONS)

    multilabel_samples: int = settings.MULTILABEL_SAMPLES
    multilabel_features: int = settings.MULTILABEL_FEATURES
    multilabel_classes: int = settings.MULTILABEL_CLASSES
    segmentation_samples: int = settings.SEGMENTATION_SAMPLES
    segmentation_height: int = settings.SEGMENTATION_HEIGHT
    segmentation_width: int = settings.SEGMENTATION_WIDTH
    segmentation_channels: int = settings.SEGMENTATION_CHANNELS
    segmentation_classes: int = settings.SEGMENTATION_CLASSES

    hidden_dims: tuple[int, ...] = tuple(settings.HIDDEN_DIMS)
    feature_dim: int = settings.FEATURE_DIM
    latent_dim: int = settings.LATENT_DIM
    isolate_svae: bool = settings.ISOLATE_SVAE
    zero_init_heads: bool = settings.ZERO_INIT_HEADS

    focal_gamma: float = settings.FOCAL_GAMMA
    kl_sign: KlSign = KlSign(settings.KL_SIGN)
    svae_loss_weights: tuple[float, ...] = tuple(settings.SVAE_LOSS_WEIGHTS)
    alpha_floor: float = settings.ALPHA_FLOOR
    alpha_granularity: AlphaGranularity = AlphaGranularity(settings.ALPHA_GRANULARITY)
    alpha_override: float | None = settings.ALPHA_OVERRIDE

    epochs: int = settings.EPOCHS
    batch_size: int = settings.BATCH_SIZE
    learning_rate: float = settings.LEARNING_RATE
    adam_beta1: float = settings.ADAM_BETA1
    adam_beta2: float = settings.ADAM_BETA2
    adam_eps: float = settings.ADAM_EPS

    audit_weights: bool = settings.AUDIT_WEIGHTS
    audit_last_k: int = settings.AUDIT_LAST_K
    probe_routing: bool = settings.PROBE_ROUTING
    save_checkpoints: bool = settings.SAVE_CHECKPOINTS
    output_dir: str = settings.OUTPUT_DIR
    workers: int = settings.WORKERS

    # single runs

    @property
    def noise_ratio(self) -> float:
        self._require_single_run()
        return self.noise_ratios[0]

    @property
    def seed(self) -> int:
        self._require_single_run()
        return self.seeds[0]

    def _require_single_run(self):
        if len(self.noise_ratios) != 1 or len(self.seeds) != 1:
            raise ConfigError(
                f"A single run needs one noise ratio and one seed, got "
                f"{len(self.noise_ratios)} and {len(self.seeds)}."
            )

    def for_run(self, method: Method, noise_ratio: float, seed: int) -> "ExperimentConfig":
        """
        Narrow a sweep config to one (method, ratio, seed) entry.

        """
        return replace(self, method=method, noise_ratios=(float(noise_ratio),), seeds=(int(seed),))

    def run_dir(self) -> str:
        return os.path.join(
            self.output_dir,
            self.task.value,
            self.method.value,
            f"rho-{self.noise_ratio:.2f}",
            f"seed-{self.seed}",
        )

    # derived settings

    @property
    def resolved_noise_mode(self) -> NoiseMode:
        return self.noise_mode or NoiseMode.for_task(self.task)

    @property
    def num_classes(self) -> int:
        if self.task is Task.SEGMENTATION:
            return self.segmentation_classes
        return self.multilabel_classes

    def dataset_dims(self) -> dict:
        if self.task is Task.SEGMENTATION:
            return {
                "num_samples": self.segmentation_samples,
                "height": self.segmentation_height,
                "width": self.segmentation_width,
                "num_channels": self.segmentation_channels,
                "num_classes": self.segmentation_classes,
            }
        return {
            "num_samples": self.multilabel_samples,
            "num_features": self.multilabel_features,
            "num_classes": self.multilabel_classes,
        }

    def architecture(self, input_dim: int | None = None, num_classes: int | None = None) -> Architecture:
        if input_dim is None:
            input_dim = (
                self.segmentation_channels if self.task is Task.SEGMENTATION else self.multilabel_features
            )
        return Architecture(
            task=self.task,
            input_dim=input_dim,
            num_classes=num_classes or self.num_classes,
            hidden_dims=tuple(self.hidden_dims),
            feature_dim=self.feature_dim,
            latent_dim=self.latent_dim,
            with_svae=self.method.uses_svae,
            isolate_svae=self.isolate_svae,
            zero_init_heads=self.zero_init_heads,
        )

    @property
    def focal_gamma_or_none(self) -> float | None:
        """
        The focal exponent the task loss uses, None meaning cross entropy.

        """
        return self.focal_gamma if self.method is Method.FOCAL_BASELINE else None

    # validation

    def validate(self) -> "ExperimentConfig":
        """
        Check every value range.

        Returns:
            ExperimentConfig: self, for chaining.

        Raises:
            ConfigError: On the first bad value.

        """
        def need(condition, message):
            if not condition:
                raise ConfigError(message)

        need(self.noise_ratios, "noise_ratios is empty.")
        need(all(0.0 <= ratio <= 0.6 for ratio in self.noise_ratios),
             f"noise_ratios must lie in [0, 0.6], got {self.noise_ratios}.")
        need(self.seeds, "seeds is empty.")
        need(all(seed >= 0 for seed in self.seeds), f"seeds must be non-negative, got {self.seeds}.")
        need(len(self.split_fractions) == 3 and min(self.split_fractions) >= 0
             and abs(sum(self.split_fractions) - 1.0) < 1e-9,
             f"split_fractions must be three values summing to 1, got {self.split_fractions}.")
        if self.noise_mode is not None:
            need(self.noise_mode is NoiseMode.for_task(self.task),
                 f"noise_mode {self.noise_mode.value} does not apply to {self.task.value}.")

        dims = {name: value for name, value in self.dataset_dims().items()}
        dims.update(feature_dim=self.feature_dim, latent_dim=self.latent_dim)
        for name, value in dims.items():
            need(value > 0, f"{name} must be positive, got {value}.")
        need(all(width > 0 for width in self.hidden_dims), f"hidden_dims must be positive, got {self.hidden_dims}.")
        if self.task is Task.SEGMENTATION:
            need(self.segmentation_classes >= 2, "segmentation needs at least two classes.")

        need(self.focal_gamma >= 0, f"focal_gamma must be non-negative, got {self.focal_gamma}.")
        need(len(self.svae_loss_weights) == 3 and min(self.svae_loss_weights) >= 0,
             f"svae_loss_weights must be three non-negative values, got {self.svae_loss_weights}.")
        need(0.0 < self.alpha_floor < 1.0, f"alpha_floor must lie in (0, 1), got {self.alpha_floor}.")
        if self.alpha_override is not None:
            need(0.0 <= self.alpha_override <= 1.0,
                 f"alpha_override must lie in [0, 1], got {self.alpha_override}.")

        need(self.epochs >= 0, f"epochs must be non-negative, got {self.epochs}.")
        need(self.batch_size >= 1, f"batch_size must be positive, got {self.batch_size}.")
        need(self.learning_rate > 0, f"learning_rate must be positive, got {self.learning_rate}.")
        need(0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0,
             "Adam betas must lie in [0, 1).")
        need(self.adam_eps > 0, "adam_eps must be positive.")
        need(self.audit_last_k >= 1, f"audit_last_k must be positive, got {self.audit_last_k}.")
        need(self.workers >= 1, f"workers must be positive, got {self.workers}.")
        return self

    # serialization

    def to_dict(self) -> dict:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, Enum):
                data[key] = value.value
            elif isinstance(value, tuple):
                data[key] = list(value)
        return data

    def to_json(self, path: str | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path:
            with open(path, "w", encoding="utf-8") as stream:
                stream.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        hints = typing.get_type_hints(cls)
        known = {field.name for field in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{key: _coerce(key, hints[key], value) for key, value in data.items()})

    @classmethod
    def from_json(cls, source: str) -> "ExperimentConfig":
        """
        Args:
            source (str): A path to a JSON file, or the JSON text itself.

        """
        if os.path.exists(source):
            with open(source, encoding="utf-8") as stream:
                source = stream.read()
        try:
            data = json.loads(source)
        except json.JSONDecodeError as err:
            raise ConfigError(f"Config is not valid JSON: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("A config file must hold a JSON object.")
        return cls.from_dict(data)

    def with_overrides(self, pairs) -> "ExperimentConfig":
        """
        Apply `key=value` strings on top of this config.

        """
        hints = typing.get_type_hints(type(self))
        changes = {}
        for pair in pairs or ():
            key, sep, value = pair.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in hints:
                raise ConfigError(f"Bad override {pair!r}: expected key=value with a known key.")
            changes[key] = _coerce(key, hints[key], value)
        return replace(self, **changes)


def _coerce(name: str, hint, value):
    """
    Convert a JSON value or a command-line string to the annotated type.

    """
    try:
        origin = typing.get_origin(hint)
        args = typing.get_args(hint)
        if origin in (types.UnionType, typing.Union):
            if value is None or (isinstance(value, str) and value.strip().lower() in _NONE):
                return None
            inner = next(arg for arg in args if arg is not type(None))
            return _coerce(name, inner, value)
        if origin is tuple:
            if isinstance(value, str):
                value = [part for part in value.split(",") if part.strip()]
            elif not isinstance(value, (list, tuple)):
                value = [value]
            return tuple(_coerce(name, args[0], item) for item in value)
        if isinstance(hint, type) and issubclass(hint, Enum):
            if isinstance(value, hint):
                return value
            if hint is Method:
                return Method.from_alias(str(value))
            return hint(str(value).strip().lower())
        if hint is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError("not a boolean")
        if hint is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("not an integer")
            return int(value)
        if hint is float:
            if isinstance(value, bool):
                raise ValueError("not a number")
            return float(value)
        return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"Bad value {value!r} for {name}: {err}") from err
