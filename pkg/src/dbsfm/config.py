"""Run configuration: namespaced defaults, TOML parsing, and round-trip
serialization.

Defaults pin the published hyperparameters (learning rate 1e-4, betas
0.9/0.95, 100 epochs, batch 50, mask ratio 0.3, model 64/32/4 heads/2
layers, 15 tokens, 32 hidden units, patience 5). Unknown sections or keys
are rejected outright.
"""

import sys
from dataclasses import dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from dbsfm.errors import ConfigError
from dbsfm.model import ModelConfig
from dbsfm.spectral import WelchConfig
from dbsfm.training import FinetuneHyper, OptimConfig, PretrainHyper


@dataclass(frozen=True)
class PathsSection:
    data: str = ""
    out: str = ""


@dataclass(frozen=True)
class WelchSection:
    fs_hz: float = 250.0
    segment_len_samples: int = 250
    overlap_fraction: float = 0.5
    window: str = "hann"
    log_floor: float = 1e-12


@dataclass(frozen=True)
class ModelSection:
    input_dim: int = 125
    d_model: int = 64
    d_ff: int = 32
    n_heads: int = 4
    n_layers: int = 2
    tokens_per_sequence: int = 15
    head_hidden: int = 32
    layernorm_eps: float = 1e-5


@dataclass(frozen=True)
class PretrainSection:
    epochs: int = 100
    batch_size: int = 50
    mask_ratio: float = 0.3
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.01
    val_fraction: float = 0.1
    hour_weight: float = 0.0
    scale_loss: bool = True


@dataclass(frozen=True)
class FinetuneSection:
    epochs: int = 100
    batch_size: int = 50
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.01
    patience: int = 5
    freeze_backbone: bool = False
    val_fraction: float = 0.1


@dataclass(frozen=True)
class SynthSection:
    subjects: int = 8
    days: float = 2.0


@dataclass(frozen=True)
class CvSection:
    jobs: int = 1


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1234
    paths: PathsSection = field(default_factory=PathsSection)
    welch: WelchSection = field(default_factory=WelchSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    synth: SynthSection = field(default_factory=SynthSection)
    cv: CvSection = field(default_factory=CvSection)

    def welch_config(self) -> WelchConfig:
        return WelchConfig(
            fs_hz=self.welch.fs_hz,
            segment_len_samples=self.welch.segment_len_samples,
            overlap_fraction=self.welch.overlap_fraction,
            window=self.welch.window,
            log_floor=self.welch.log_floor,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_dim=self.model.input_dim,
            d_model=self.model.d_model,
            d_ff=self.model.d_ff,
            n_heads=self.model.n_heads,
            n_layers=self.model.n_layers,
            seq_positions=self.model.tokens_per_sequence + 1,
            layernorm_eps=self.model.layernorm_eps,
            head_hidden=self.model.head_hidden,
        )

    def pretrain_hyper(self) -> PretrainHyper:
        p = self.pretrain
        return PretrainHyper(
            epochs=p.epochs,
            batch_size=p.batch_size,
            mask_ratio=p.mask_ratio,
            seed=self.seed,
            optim=OptimConfig(lr=p.lr, beta1=p.beta1, beta2=p.beta2, eps=p.eps, weight_decay=p.weight_decay),
            val_fraction=p.val_fraction,
            hour_weight=p.hour_weight,
            scale_loss=p.scale_loss,
        )

    def finetune_hyper(self) -> FinetuneHyper:
        f = self.finetune
        return FinetuneHyper(
            max_epochs=f.epochs,
            batch_size=f.batch_size,
            patience=f.patience,
            seed=self.seed,
            optim=OptimConfig(lr=f.lr, beta1=f.beta1, beta2=f.beta2, eps=f.eps, weight_decay=f.weight_decay),
            val_fraction=f.val_fraction,
            freeze_backbone=f.freeze_backbone,
        )

    def validate(self) -> "RunConfig":
        token_dim = self.welch.segment_len_samples // 2
        if self.model.input_dim != token_dim:
            raise ConfigError(
                f"model.input_dim={self.model.input_dim} does not match the token "
                f"dimension {token_dim} implied by welch.segment_len_samples"
            )
        if self.synth.subjects < 2:
            raise ConfigError("synth.subjects must be >= 2")
        if self.synth.days <= 0:
            raise ConfigError("synth.days must be positive")
        if not 0.0 <= self.pretrain.mask_ratio <= 1.0:
            raise ConfigError("pretrain.mask_ratio must be in [0, 1]")
        if self.cv.jobs != 1:
            raise ConfigError("cv.jobs must be 1 (bit-reproducible sequential runs)")
        return self


_SECTIONS = {
    "paths": PathsSection,
    "welch": WelchSection,
    "model": ModelSection,
    "pretrain": PretrainSection,
    "finetune": FinetuneSection,
    "synth": SynthSection,
    "cv": CvSection,
}


def _coerce(section: str, name: str, value, target_type):
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{name} must be a boolean")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{name} must be an integer")
        return value
    if not isinstance(value, target_type):
        raise ConfigError(
            f"{section}.{name} must be {target_type.__name__}, got {type(value).__name__}"
        )
    return value


def config_from_mapping(mapping: dict) -> RunConfig:
    """Build a RunConfig from parsed TOML; unknown sections/keys are errors."""
    mapping = dict(mapping)
    kwargs = {}
    if "seed" in mapping:
        seed = mapping.pop("seed")
        kwargs["seed"] = _coerce("", "seed", seed, int)
    for section_name, section_cls in _SECTIONS.items():
        if section_name not in mapping:
            continue
        body = mapping.pop(section_name)
        if not isinstance(body, dict):
            raise ConfigError(f"section [{section_name}] must be a table")
        known = {f.name: f.type for f in fields(section_cls)}
        values = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {section_name}.{key}")
            target = {"int": int, "float": float, "str": str, "bool": bool}[known[key]] if isinstance(known[key], str) else known[key]
            values[key] = _coerce(section_name, key, value, target)
        kwargs[section_name] = section_cls(**values)
    if mapping:
        stray = sorted(mapping)[0]
        raise ConfigError(f"unknown config key or section {stray!r}")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            parsed = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")
    return config_from_mapping(parsed)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise ConfigError(f"cannot serialize config value {value!r}")


def to_toml(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}", ""]
    for section_name, _ in _SECTIONS.items():
        section = getattr(cfg, section_name)
        lines.append(f"[{section_name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_toml_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_resolved_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_toml(cfg))


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply dotted-key overrides like synth__subjects=2 or seed=7."""
    out = cfg
    for key, value in overrides.items():
        if value is None:
            continue
        if "__" in key:
            section_name, field_name = key.split("__", 1)
            section = getattr(out, section_name)
            out = replace(out, **{section_name: replace(section, **{field_name: value})})
        else:
            out = replace(out, **{key: value})
    return out
