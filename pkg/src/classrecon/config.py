"""Flat key=value experiment configuration with typed defaults and snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .classifiers import ClassifierSpec
from .diffusion import DiffusionTrainConfig
from .errors import ConfigError
from .gan import GanAttackConfig
from .path_attack import PathAttackConfig
from .vae import LatentAttackConfig, VaeSpec

# key -> (type, default); `targets` is a comma list of 1-based person ids
SCHEMA: dict[str, tuple[type, object]] = {
    "data": (str, ""),
    "out_root": (str, "runs"),
    "master_seed": (int, 0),
    "targets": (str, "8,7"),
    "cnn2.epochs": (int, 60),
    "cnn2.batch_size": (int, 32),
    "cnn2.learning_rate": (float, 1e-3),
    "cnn2.weight_decay": (float, 1e-4),
    "vgg11.epochs": (int, 90),
    "vgg11.batch_size": (int, 32),
    "vgg11.learning_rate": (float, 2e-4),
    "vgg11.weight_decay": (float, 0.0),
    "schedule.steps": (int, 600),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "diffusion.epochs": (int, 150),
    "diffusion.batch_size": (int, 16),
    "diffusion.learning_rate": (float, 2e-4),
    "diffusion.base_width": (int, 32),
    "attack.learning_rate": (float, 1.0),
    "attack.max_iterations": (int, 200),
    "attack.stop_loss": (float, 0.05),
    "attack.grad_mode": (str, "checkpointed:25"),
    "attack.stop_on_plateau": (bool, True),
    "gan.alpha": (float, 1.0),
    "gan.rounds": (int, 40),
    "gan.d_steps": (int, 25),
    "gan.g_steps": (int, 10),
    "gan.real_batch": (int, 200),
    "gan.fake_batch": (int, 200),
    "gan.learning_rate": (float, 2e-4),
    "vae.latent_dim": (int, 64),
    "vae.base_width": (int, 32),
    "vae.kl_weight": (float, 1e-3),
    "vae.epochs": (int, 60),
    "vae.batch_size": (int, 16),
    "vae.learning_rate": (float, 1e-3),
    "vae_attack.learning_rate": (float, 0.05),
    "vae_attack.max_iterations": (int, 200),
    "vae_attack.stop_loss": (float, 0.05),
    "vae_attack.init": (str, "pool"),
}


def _parse_value(key: str, raw: str):
    typ, _ = SCHEMA[key]
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from e


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: every schema key bound to a typed value."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def target_classes(self) -> list[int]:
        """0-based class ids parsed from the 1-based `targets` entry."""
        try:
            people = [int(tok) for tok in str(self.values["targets"]).split(",") if tok.strip()]
        except ValueError as e:
            raise ConfigError(f"targets must be a comma list of person ids: {self.values['targets']!r}") from e
        return [p - 1 for p in people]

    def classifier_spec(self, arch: str) -> ClassifierSpec:
        return ClassifierSpec(
            arch=arch,
            epochs=self.values[f"{arch}.epochs"],
            batch_size=self.values[f"{arch}.batch_size"],
            learning_rate=self.values[f"{arch}.learning_rate"],
            weight_decay=self.values[f"{arch}.weight_decay"],
        )

    def diffusion_config(self) -> DiffusionTrainConfig:
        return DiffusionTrainConfig(
            epochs=self.values["diffusion.epochs"],
            batch_size=self.values["diffusion.batch_size"],
            learning_rate=self.values["diffusion.learning_rate"],
            base_width=self.values["diffusion.base_width"],
        )

    def path_attack_config(self, target: int, seed: int) -> PathAttackConfig:
        return PathAttackConfig(
            target=target,
            learning_rate=self.values["attack.learning_rate"],
            max_iterations=self.values["attack.max_iterations"],
            stop_loss=self.values["attack.stop_loss"],
            grad_mode=self.values["attack.grad_mode"],
            stop_on_plateau=self.values["attack.stop_on_plateau"],
            seed=seed,
        )

    def gan_config(self, target: int, seed: int) -> GanAttackConfig:
        return GanAttackConfig(
            target=target,
            alpha=self.values["gan.alpha"],
            rounds=self.values["gan.rounds"],
            d_steps=self.values["gan.d_steps"],
            g_steps=self.values["gan.g_steps"],
            real_batch=self.values["gan.real_batch"],
            fake_batch=self.values["gan.fake_batch"],
            d_learning_rate=self.values["gan.learning_rate"],
            g_learning_rate=self.values["gan.learning_rate"],
            seed=seed,
        )

    def vae_spec(self) -> VaeSpec:
        return VaeSpec(
            latent_dim=self.values["vae.latent_dim"],
            base_width=self.values["vae.base_width"],
            kl_weight=self.values["vae.kl_weight"],
            epochs=self.values["vae.epochs"],
            batch_size=self.values["vae.batch_size"],
            learning_rate=self.values["vae.learning_rate"],
        )

    def latent_attack_config(self, target: int, seed: int) -> LatentAttackConfig:
        return LatentAttackConfig(
            target=target,
            learning_rate=self.values["vae_attack.learning_rate"],
            max_iterations=self.values["vae_attack.max_iterations"],
            stop_loss=self.values["vae_attack.stop_loss"],
            init=self.values["vae_attack.init"],
            seed=seed,
        )

    def snapshot(self) -> str:
        lines = [f"{key} = {_format_value(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def default_config(**overrides) -> ExperimentConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, value in overrides.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return ExperimentConfig(values=values)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw.strip())
    return ExperimentConfig(values=values)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))
