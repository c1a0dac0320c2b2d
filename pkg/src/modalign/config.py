"""Run configuration: a single JSON file, parsed strictly (unknown keys are
fatal, with the dotted path named) and merged over documented defaults.

Paths are interpreted relative to the run's output directory unless
absolute, so a config file can be reused across output locations.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .align import AlignConfig
from .pipeline import PipelineConfig
from .speech import FinetuneConfig, MaeConfig
from .synthetic import SyntheticSpec
from .teacher import TeacherArchSpec, TeacherConfig


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 0,
        "profile": "default",  # default | small
        "paths": {
            "unlabeled_speech": "data/unlabeled_speech.csv",
            "mri_cohort": "data/mri_cohort.csv",
            "paired_speech": "data/paired_speech.csv",
            "paired_mri": "data/paired_mri.csv",
            "checkpoints": "checkpoints",
            "split": "splits/split.json",
        },
        "synthetic": {
            "latent_dim": 16,
            "class_separation": 6.0,
            "noise_sigma_speech": 0.5,
            "noise_sigma_mri": 0.5,
            "unlabeled_dispersion": 1.5,
        },
        "split": {"seed": 42, "fractions": [0.70, 0.15, 0.15]},
        "mae": {k: getattr(MaeConfig(), k) for k in MaeConfig.__dataclass_fields__},
        "finetune": {**{k: getattr(FinetuneConfig(), k)
                        for k in FinetuneConfig.__dataclass_fields__},
                     "from_scratch": False},
        "teacher": {**{k: getattr(TeacherConfig(), k)
                       for k in TeacherConfig.__dataclass_fields__},
                    "hidden_widths": [1024, 256], "dropout_rate": 0.3,
                    "cv_folds": 0},
        "align": {**{k: getattr(AlignConfig(), k)
                     for k in AlignConfig.__dataclass_fields__},
                  "head_hidden": 96, "head_dropout": 0.6},
        "evaluation": {"bootstrap_resamples": 1000, "level": 0.95},
        "hpo": {"budget": 60, "warmup_epochs": 10, "min_trials_before_pruning": 5,
                "trial_epochs": 60, "cv_folds": 5},
    }


def _merge(base: dict, override: dict, trail: str = "") -> dict:
    for key, value in override.items():
        path = f"{trail}.{key}" if trail else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path!r} must be an object")
            _merge(base[key], value, path)
        else:
            if isinstance(value, dict):
                raise ConfigError(f"{path!r} must be a scalar or list")
            base[key] = value
    return base


def load_config(path=None, seed: int | None = None,
                profile: str | None = None) -> dict:
    """Defaults, overlaid by the JSON file, then by CLI-level overrides."""
    cfg = default_config()
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        _merge(cfg, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if profile is not None:
        cfg["profile"] = profile
    if cfg["profile"] not in ("default", "small"):
        raise ConfigError(f"profile must be 'default' or 'small', got {cfg['profile']!r}")
    return cfg


def resolve_path(cfg: dict, key: str, out_dir) -> Path:
    raw = Path(cfg["paths"][key])
    return raw if raw.is_absolute() else Path(out_dir) / raw


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    if cfg["profile"] == "small":
        # .small() is a constructor: pass the run's seed and overrides through
        return SyntheticSpec.small(seed=cfg["seed"], **cfg["synthetic"])
    return SyntheticSpec(seed=cfg["seed"], **cfg["synthetic"])


def pipeline_config(cfg: dict) -> PipelineConfig:
    """Project the flat JSON tree onto the stage dataclasses."""
    finetune = {k: v for k, v in cfg["finetune"].items() if k != "from_scratch"}
    teacher = dict(cfg["teacher"])
    arch = TeacherArchSpec(hidden_widths=list(teacher.pop("hidden_widths")),
                           dropout_rate=teacher.pop("dropout_rate"))
    cv_folds = teacher.pop("cv_folds")
    align = dict(cfg["align"])
    head_hidden = align.pop("head_hidden")
    head_dropout = align.pop("head_dropout")
    try:
        return PipelineConfig(
            seed=cfg["seed"],
            split_seed=cfg["split"]["seed"],
            split_fractions=tuple(cfg["split"]["fractions"]),
            mae=MaeConfig(**cfg["mae"]),
            finetune=FinetuneConfig(**finetune),
            teacher_arch=arch,
            teacher=TeacherConfig(**teacher),
            align=AlignConfig(**align),
            head_hidden=head_hidden,
            head_dropout=head_dropout,
            pretrain_enabled=not cfg["finetune"]["from_scratch"],
            teacher_cv_folds=cv_folds,
            bootstrap_resamples=cfg["evaluation"]["bootstrap_resamples"],
            ci_level=cfg["evaluation"]["level"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_snapshot(cfg: dict) -> dict:
    """Deep copy for embedding in run reports."""
    return copy.deepcopy(cfg)
