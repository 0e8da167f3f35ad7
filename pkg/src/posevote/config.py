"""Structured configuration: packaged YAML defaults merged with a user file."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .core import InvalidArgumentError, SymmetryType
from .losses import LossSettings, LossWeights, SizeScoreParams
from .solver import RefineConfig
from .synth import SHAPES, NoiseSpec, SceneSpec


class ConfigError(InvalidArgumentError):
    """Invalid or unreadable configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


# sections whose keys are free-form names rather than a fixed schema
_OPEN_SECTIONS = {"categories", "noise_profiles", "generation.sizes"}


def default_config() -> dict:
    text = resources.files("posevote").joinpath("data/default_config.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base and path not in _OPEN_SECTIONS:
            raise ConfigError("unknown key", where)
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            if where in _OPEN_SECTIONS:
                # named entries are added or replaced whole
                out[key] = {**base[key], **copy.deepcopy(value)}
            else:
                out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file at ``path``, then ``overrides``; validated."""
    cfg = default_config()
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _build(key: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key) from None


def validate(cfg: dict) -> None:
    """Build every typed object once so bad values fail early with their key."""
    loss_settings(cfg)
    refine_config(cfg)
    for name in cfg["noise_profiles"]:
        noise_spec(cfg, name)
    symmetries(cfg)
    gen = cfg["generation"]
    for shape in gen["shapes"]:
        if shape not in SHAPES:
            raise ConfigError(f"unknown shape {shape!r}; expected one of {SHAPES}", "generation.shapes")
        if shape not in gen["sizes"]:
            raise ConfigError(f"no size for shape {shape!r}", "generation.sizes")
    if int(gen["n"]) < 1:
        raise ConfigError("must be >= 1", "generation.n")
    if cfg["eval"]["noise_profile"] not in cfg["noise_profiles"]:
        raise ConfigError(f"unknown profile {cfg['eval']['noise_profile']!r}", "eval.noise_profile")
    if cfg["eval"]["vote_mode"] not in ("exact", "distance"):
        raise ConfigError("must be exact or distance", "eval.vote_mode")
    if int(cfg["metrics"]["iou_samples"]) < 1:
        raise ConfigError("must be >= 1", "metrics.iou_samples")
    gc = cfg["gradcheck"]
    if not float(gc["eps"]) > 0:
        raise ConfigError("must be positive", "gradcheck.eps")


def loss_settings(cfg: dict) -> LossSettings:
    weights = _build("weights", LossWeights, **{k: float(v) for k, v in cfg["weights"].items()})
    size = _build("size_score", SizeScoreParams, **cfg["size_score"])
    return _build("loss", LossSettings, weights=weights, size=size,
                  k1=float(cfg["rotation"]["k1"]), k2=float(cfg["voting"]["k2"]),
                  huber=float(cfg["loss"]["huber"]), bin_seed=int(cfg["loss"]["bin_seed"]))


def refine_config(cfg: dict) -> RefineConfig:
    return _build("refine", RefineConfig, settings=loss_settings(cfg), **cfg["refine"])


def noise_spec(cfg: dict, profile: str) -> NoiseSpec:
    profiles = cfg["noise_profiles"]
    if profile not in profiles:
        raise ConfigError(f"unknown profile {profile!r}", "noise_profiles")
    fields: dict[str, Any] = dict(profiles[profile] or {})
    fields.setdefault("k1", float(cfg["rotation"]["k1"]))
    return _build(f"noise_profiles.{profile}", NoiseSpec, **fields)


def symmetries(cfg: dict) -> dict[str, SymmetryType]:
    out = {}
    for name, entry in cfg["categories"].items():
        entry = dict(entry or {})
        kind = entry.get("kind", "none")
        if kind == "none":
            out[name] = SymmetryType.none()
        else:
            out[name] = _build(f"categories.{name}", SymmetryType, kind, entry.get("vector"))
    return out


def scene_specs(cfg: dict, seed: int) -> list[SceneSpec]:
    """One spec per scene; shapes cycle and scene ``i`` uses seed ``seed + i``."""
    gen = cfg["generation"]
    shapes = list(gen["shapes"])
    specs = []
    for i in range(int(gen["n"])):
        shape = shapes[i % len(shapes)]
        specs.append(_build("generation", SceneSpec, shape=shape, size=tuple(gen["sizes"][shape]),
                            n_points=int(gen["n_points"]), noise_sigma=float(gen["noise_sigma"]),
                            outlier_fraction=float(gen["outlier_fraction"]),
                            view=None if gen["view"] is None else tuple(gen["view"]),
                            seed=int(seed) + i))
    return specs
