"""Run configuration: schema, profiles, file format, and content hashing.

Config files are flat YAML mappings of ``key: value`` pairs whose keys are
exactly the fields of :class:`TrainConfig`.  Unknown keys and wrong types are
rejected with a :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

ABLATION_MODES = ("base_cat", "mvco_cat", "mvco_fusion", "mvco_dot")
GUMBEL_FORMS = ("standard", "printed")
POOLING_MODES = ("mean", "max")
DECODE_MODES = ("greedy", "beam")


class ConfigError(ValueError):
    """Invalid configuration key or value (CLI exit code 2)."""


@dataclass
class TrainConfig:
    """All knobs for data synthesis, model shape, and the training regime.

    The ``desk`` profile (the defaults below) trains in CPU minutes; the
    ``paper`` profile mirrors the full-scale hyperparameters and is provided
    for reference, not for desk-scale runs.
    """

    # data synthesis
    n_cases: int = 1000
    n_findings: int = 4
    noise_level: float = 0.35
    data_seed: int = 1234
    image_size: int = 32
    min_freq: int = 5
    max_len: int = 114

    # model shape
    feat_dim: int = 32          # raw region feature width (D)
    latent_dim: int = 64        # view embedding width (d)
    grid_size: int = 4          # feature grid; regions R = grid_size**2
    hidden_dim: int = 64        # decoder LSTM width (H)
    embed_dim: int = 64         # word embedding width
    attn_dim: int = 64          # decoder attention width
    proj_dim: int = 64          # semantic projection output width
    proj_hidden: int = 64       # semantic projection hidden width
    encoder_layers: int = 2
    encoder_heads: int = 4
    view_proj_layers: int = 1   # depth of the per-view projections
    router_hidden: int = 32
    shared_decoder: bool = True

    # routing
    tau_s: float = 0.3
    gumbel_form: str = "standard"
    dot_pooling: str = "mean"

    # contrastive branch
    tau_c: float = 0.1
    mvco_symmetric: bool = True

    # training regime
    ablation_mode: str = "mvco_dot"
    pretrain_epochs: int = 30
    rl_epochs: int = 10
    batch_size: int = 8
    rl_batch_size: int = 8
    base_lr: float = 2e-3
    rl_lr: float = 1e-4
    rl_lr_floor_ratio: float = 0.01
    warmup_steps: int = 200
    cosine_period_epochs: int = 15
    alternation: str = "1:1"    # generation:contrastive step ratio
    rl_keep_alternating: bool = False
    grad_clip: float = 5.0
    seed: int = 0
    val_every: int = 5
    eval_beam: int = 2
    eval_decode: str = "greedy"
    reward_weights: tuple = (2.0, 2.0, 1.0, 1.0, 2.0, 2.0)
    features_archive: str = ""  # optional precomputed-feature archive (.npz)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(
                f"ablation_mode must be one of {ABLATION_MODES}, got {self.ablation_mode!r}"
            )
        if self.gumbel_form not in GUMBEL_FORMS:
            raise ConfigError(f"gumbel_form must be one of {GUMBEL_FORMS}, got {self.gumbel_form!r}")
        if self.dot_pooling not in POOLING_MODES:
            raise ConfigError(f"dot_pooling must be one of {POOLING_MODES}, got {self.dot_pooling!r}")
        if self.eval_decode not in DECODE_MODES:
            raise ConfigError(f"eval_decode must be one of {DECODE_MODES}, got {self.eval_decode!r}")
        for key in ("tau_s", "tau_c", "base_lr", "rl_lr", "noise_level"):
            if getattr(self, key) < 0 or (key.startswith("tau") and getattr(self, key) == 0):
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("n_cases", "n_findings", "batch_size", "rl_batch_size", "warmup_steps",
                    "cosine_period_epochs", "min_freq", "grid_size", "eval_beam"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if len(tuple(self.reward_weights)) != 6 or any(w < 0 for w in self.reward_weights):
            raise ConfigError("reward_weights must be 6 nonnegative numbers")
        self.gen_steps, self.con_steps = _parse_alternation(self.alternation)

    @property
    def regions(self) -> int:
        return self.grid_size * self.grid_size

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["reward_weights"] = list(out["reward_weights"])
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml())


def _parse_alternation(spec: str) -> tuple[int, int]:
    try:
        gen, con = (int(part) for part in str(spec).split(":"))
    except ValueError as exc:
        raise ConfigError(f"alternation must look like 'G:C', got {spec!r}") from exc
    if gen < 1 or con < 0:
        raise ConfigError(f"alternation ratio must have G >= 1 and C >= 0, got {spec!r}")
    return gen, con


PROFILES = {
    "desk": {},
    # Full-scale reference settings; listed for completeness, far beyond CPU budgets.
    "paper": {
        "feat_dim": 2048,
        "latent_dim": 1024,
        "hidden_dim": 1024,
        "embed_dim": 1024,
        "attn_dim": 1024,
        "proj_dim": 1024,
        "proj_hidden": 1024,
        "encoder_layers": 4,
        "pretrain_epochs": 60,
        "rl_epochs": 60,
        "batch_size": 6,
        "rl_batch_size": 2,
        "base_lr": 1e-4,
        "rl_lr": 1e-5,
        "warmup_steps": 10_000,
        "eval_decode": "beam",
    },
}


def config_field_names() -> list[str]:
    return [f.name for f in fields(TrainConfig)]


def _coerce(name: str, value, target_type):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {name!r} expects a boolean, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {name!r} expects an integer, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {name!r} expects a number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key {name!r} expects a string, got {value!r}")
        return value
    if target_type is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {name!r} expects a list, got {value!r}")
        return tuple(float(v) for v in value)
    return value


def make_config(profile: str = "desk", file: str | Path | None = None,
                overrides: dict | None = None) -> TrainConfig:
    """Resolve profile defaults, then an optional config file, then overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values: dict = dict(PROFILES[profile])
    if file is not None:
        values.update(load_config_file(file))
    for key, value in (overrides or {}).items():
        values[key] = value
    known = {f.name: f for f in fields(TrainConfig)}
    clean = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        clean[key] = _coerce(key, value, known[key].type if isinstance(known[key].type, type)
                             else _field_runtime_type(known[key]))
    return TrainConfig(**clean)


def _field_runtime_type(f: dataclasses.Field):
    # dataclass field types arrive as strings under `from __future__ import annotations`
    mapping = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}
    return mapping.get(str(f.type), object)


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a flat key-value mapping")
    return raw


def parse_overrides(pairs: list[str]) -> dict:
    """Parse repeated ``--set key=value`` strings; values use YAML scalar syntax."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, _, raw = pair.partition("=")
        key = key.strip()
        try:
            out[key] = yaml.safe_load(raw.strip())
        except yaml.YAMLError as exc:
            raise ConfigError(f"override value for {key!r} is not a YAML scalar: {raw!r}") from exc
    return out


def config_hash(config: TrainConfig) -> str:
    """Content hash of the resolved config, excluding the seed.

    Run directories are named ``<hash>-s<seed>`` so reruns of the same setup
    with different seeds land next to each other.
    """
    payload = config.to_dict()
    payload.pop("seed")
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:10]
