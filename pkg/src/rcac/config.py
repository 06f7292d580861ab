"""Run configuration: defaults, validation and the flat key=value file format.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Keys are the field names of :class:`RunConfig`. Unspecified keys
keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from rcac.envs import DEFAULT_ACTION_REPEAT, ENV_IDS
from rcac.errors import ConfigurationError

MODES = ("rcac", "baseline", "mixed")


@dataclass
class RunConfig:
    env: str = "pendulum_swingup"
    mode: str = "rcac"
    seed: int = 0
    p_c: float = 0.2
    beta: float = 0.1
    total_steps: int = 100000
    eval_interval: int = 10000
    eval_episodes: int = 10
    pretrain_transitions: int = 1000
    pretrain_updates: int = 1000
    batch_size: int = 128
    gamma: float = 0.99
    buffer_capacity: int = 80000
    hidden_dim: int = 1024
    tau: float = 0.01
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    rae_lr: float = 1e-3
    alpha_lr: float = 1e-4
    init_alpha: float = 0.1
    frame_stack: int = 3
    obs_size: int = 48
    num_filters: int = 32
    latent_dim: int = 50
    action_repeat: int = 0  # 0 picks the per-environment default
    actor_update_freq: int = 2
    target_update_freq: int = 2
    latent_penalty: float = 1e-6
    decoder_decay: float = 1e-7
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    actor_grad_to_encoder: bool = False
    log_visits: bool = True
    checkpoint_buffer: bool = False

    @property
    def resolved_action_repeat(self) -> int:
        return self.action_repeat or DEFAULT_ACTION_REPEAT.get(self.env, 1)

    def problems(self) -> list[str]:
        """Every violated constraint, as readable messages."""
        errs = []
        if self.env not in ENV_IDS:
            errs.append(f"env: unknown environment {self.env!r} (choose from {', '.join(ENV_IDS)})")
        if self.mode not in MODES:
            errs.append(f"mode: must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not 0.0 <= self.p_c <= 1.0:
            errs.append(f"p_c: must lie in [0, 1], got {self.p_c}")
        if self.mode == "baseline" and self.p_c != 0.0:
            errs.append(f"p_c: baseline mode never uses the curious policy, so p_c must be 0 "
                        f"(got {self.p_c})")
        if self.mode == "mixed" and self.p_c != 0.0:
            errs.append(f"p_c: mixed mode trains a single agent, so p_c must be 0 (got {self.p_c})")
        if self.beta < 0:
            errs.append(f"beta: must be non-negative, got {self.beta}")
        for name in ("eval_interval", "eval_episodes", "batch_size", "buffer_capacity",
                     "hidden_dim", "frame_stack", "obs_size", "num_filters", "latent_dim",
                     "actor_update_freq", "target_update_freq"):
            if getattr(self, name) < 1:
                errs.append(f"{name}: must be at least 1, got {getattr(self, name)}")
        for name in ("pretrain_transitions", "pretrain_updates", "action_repeat", "seed"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.total_steps <= self.pretrain_transitions:
            errs.append(f"total_steps: must exceed pretrain_transitions "
                        f"({self.total_steps} <= {self.pretrain_transitions})")
        if self.eval_interval >= 1 and self.total_steps % self.eval_interval:
            errs.append(f"eval_interval: {self.eval_interval} does not divide total_steps "
                        f"{self.total_steps}")
        if 1 <= self.eval_interval <= self.pretrain_transitions:
            errs.append(f"eval_interval: {self.eval_interval} falls inside the "
                        f"{self.pretrain_transitions} pretraining steps")
        if self.pretrain_transitions < self.batch_size and self.pretrain_updates > 0:
            errs.append(f"pretrain_transitions: {self.pretrain_transitions} transitions cannot "
                        f"fill a batch of {self.batch_size}")
        if not 0.0 <= self.gamma <= 1.0:
            errs.append(f"gamma: must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            errs.append(f"tau: must lie in [0, 1], got {self.tau}")
        for name in ("actor_lr", "critic_lr", "rae_lr", "alpha_lr", "init_alpha"):
            if getattr(self, name) <= 0:
                errs.append(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("latent_penalty", "decoder_decay"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.log_std_min >= self.log_std_max:
            errs.append("log_std_min: must be below log_std_max")
        if 1 <= self.obs_size < 16:
            errs.append(f"obs_size: {self.obs_size} is too small for the encoder (minimum 16)")
        return errs

    def validate(self) -> "RunConfig":
        errs = self.problems()
        if errs:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errs))
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw, errs):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            as_float = float(raw)
            if not as_float.is_integer():
                raise ValueError(raw)
            return int(as_float)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        errs.append(f"{key}: cannot read {raw!r} as {kind}")
        return None


def config_from_mapping(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Build and validate a config from string values, reporting every problem at once.

    Choosing ``mode`` baseline or mixed without an explicit ``p_c`` sets
    ``p_c`` to 0; an explicit non-zero value is reported as a contradiction.
    """
    errs = []
    changes = {}
    for key, raw in values.items():
        if key not in _FIELD_TYPES:
            errs.append(f"{key}: unknown key")
            continue
        value = _coerce(key, str(raw), errs)
        if value is not None:
            changes[key] = value
    if changes.get("mode") in ("baseline", "mixed") and "p_c" not in values:
        changes["p_c"] = 0.0  # these modes never act with a curious policy
    cfg = (base or RunConfig()).replace(**changes)
    errs.extend(cfg.problems())
    if errs:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    errs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errs.append(f"line {lineno}: expected key = value")
            continue
        key, raw = line.split("=", 1)
        key = key.strip()
        if key in values:
            errs.append(f"line {lineno}: {key} given twice")
        values[key] = raw.strip()
    if errs:
        raise ConfigurationError("invalid configuration file:\n  " + "\n  ".join(errs))
    return values


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    return config_from_mapping(values)
