"""Flat TOML experiment configuration with a printable schema."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

import tomli
import tomli_w

from ..objectives import DuelConfig
from ..synth import MixtureSpec, ring_mixture


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# key -> (description); types and defaults come from the dataclasses
_DESCRIPTIONS = {
    "variant": "duelgan | vanilla | d2gan (single-run commands)",
    "alpha_max": "peak weight of the cross-sample penalty in the duel term, [0, 1]",
    "beta_max": "peak weight of the duel term, [0, 1]",
    "schedule": "triangular (0 -> max -> 0) | constant",
    "m": "minibatch size per source (T holds 2m samples)",
    "k": "discriminator steps per generator step",
    "generator_loss": "non_saturating | saturating",
    "d2gan_alpha": "D2GAN weight on log D1(x)",
    "d2gan_beta": "D2GAN weight on log D2(G(z))",
    "clamp_eps": "probability clamp before logs, (0, 1e-3]",
    "lr": "Adam learning rate for all networks",
    "adam_beta1": "Adam first-moment decay",
    "adam_beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "noise_dim": "generator input dimension",
    "g_hidden": "generator hidden widths",
    "d_hidden": "discriminator hidden widths",
    "hidden_activation": "relu | tanh",
    "update_order": "simultaneous | sequential discriminator updates",
    "peer_init": "redraw (independent D2 init) | copy (D2 starts as D1)",
    "n_modes": "number of ring components",
    "radius": "ring radius",
    "variance": "per-axis variance of each component",
    "total_iters": "training iterations per run",
    "eval_every": "iterations between metric records",
    "checkpoint_every": "iterations between intermediate checkpoints (0 = final only)",
    "seeds": "seeds for compare / ablate",
    "variants": "variants for compare",
    "output_dir": "root directory for run outputs",
    "ablate_alpha": "alpha_max grid for ablate",
    "ablate_beta": "beta_max grid for ablate",
}


@dataclass(frozen=True)
class ExperimentConfig:
    duel: DuelConfig = field(default_factory=DuelConfig)
    n_modes: int = 8
    radius: float = 2.0
    variance: float = 0.02
    total_iters: int = 25_000
    eval_every: int = 500
    checkpoint_every: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variants: tuple[str, ...] = ("vanilla", "d2gan", "duelgan")
    output_dir: str = "results"
    ablate_alpha: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    ablate_beta: tuple[float, ...] = (0.25, 0.5, 0.75)

    def target(self) -> MixtureSpec:
        return ring_mixture(self.n_modes, self.radius, self.variance)

    def to_flat(self) -> dict:
        flat = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.duel).items()}
        for f in fields(self):
            if f.name != "duel":
                v = getattr(self, f.name)
                flat[f.name] = list(v) if isinstance(v, tuple) else v
        return flat

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_flat())

    def with_overrides(self, **kw) -> "ExperimentConfig":
        flat = self.to_flat()
        flat.update({k: v for k, v in kw.items() if v is not None})
        return from_flat(flat)


_DUEL_KEYS = {f.name: f for f in fields(DuelConfig)}
_EXP_KEYS = {f.name: f for f in fields(ExperimentConfig) if f.name != "duel"}


def schema_lines() -> list[str]:
    default = ExperimentConfig().to_flat()
    out = []
    for key, val in default.items():
        kind = type(val).__name__ if not isinstance(val, list) else f"list[{type(val[0]).__name__}]"
        out.append(f"{key} ({kind}, default {val!r}): {_DESCRIPTIONS.get(key, '')}")
    return out


def _coerce(key: str, value, default, problems: list[str]):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{key}: expected a number, got {value!r}")
            return value
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            problems.append(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)) or not value:
            problems.append(f"{key}: expected a nonempty list, got {value!r}")
            return value
        return tuple(_coerce(f"{key}[{i}]", v, default[0], problems) for i, v in enumerate(value))
    return value


def from_flat(flat: dict) -> ExperimentConfig:
    defaults = ExperimentConfig().to_flat()
    problems = [f"{k}: unknown key" for k in sorted(set(flat) - set(defaults))]
    vals = {k: _coerce(k, v, defaults[k], problems) for k, v in flat.items() if k in defaults}
    if problems:
        raise ConfigError(problems)
    duel_kw = {k: v for k, v in vals.items() if k in _DUEL_KEYS}
    exp_kw = {k: v for k, v in vals.items() if k in _EXP_KEYS}
    try:
        duel = DuelConfig(**duel_kw)
    except ValueError:
        # gather every field-level message, not just the first
        raw = object.__new__(DuelConfig)
        for k, f in _DUEL_KEYS.items():
            object.__setattr__(raw, k, duel_kw.get(k, f.default))
        problems = DuelConfig.problems(raw)
        duel = DuelConfig()
    cfg = ExperimentConfig(duel=duel, **exp_kw)
    problems += experiment_problems(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def experiment_problems(cfg: ExperimentConfig) -> list[str]:
    out = []
    if cfg.n_modes < 1:
        out.append("n_modes: must be >= 1")
    if cfg.radius < 0:
        out.append("radius: must be >= 0")
    if cfg.variance <= 0:
        out.append("variance: must be positive")
    if cfg.total_iters < 1:
        out.append("total_iters: must be >= 1")
    if cfg.eval_every < 1:
        out.append("eval_every: must be >= 1")
    if cfg.checkpoint_every < 0:
        out.append("checkpoint_every: must be >= 0")
    if not cfg.seeds or any(s < 0 for s in cfg.seeds):
        out.append("seeds: need at least one nonnegative seed")
    bad = [v for v in cfg.variants if v not in ("duelgan", "vanilla", "d2gan")]
    if bad:
        out.append(f"variants: unknown {bad}")
    for name in ("ablate_alpha", "ablate_beta"):
        if any(not 0 <= v <= 1 for v in getattr(cfg, name)):
            out.append(f"{name}: values must lie in [0, 1]")
    return out


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, "rb") as fh:
        try:
            flat = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from None
    nested = [k for k, v in flat.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError([f"{k}: tables are not allowed, the config is flat" for k in nested])
    return from_flat(flat)


def ensure_writable(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError([f"output_dir: cannot create {path}: {exc.strerror}"]) from None
    if not os.access(path, os.W_OK):
        raise ConfigError([f"output_dir: {path} is not writable"])
