"""Run configuration.

Config files are flat TOML: one ``key = value`` per line, no tables.  Every
key must be a field of :class:`AmidConfig`; anything else is rejected so that
typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import ModalitySpec, SyntheticSpec
from .errors import ConfigurationError

ABLATION_FLAGS = ("fixed_teacher", "no_warmup", "no_d2", "uniform_lambda",
                  "mi_s_only", "no_mi_a", "no_adv", "nce_positive_set")
BASELINES = ("none", "student", "teacher")


@dataclass
class AmidConfig:
    # objective
    alpha1: float = 4.0
    alpha2: float = 1.6
    alpha3: float = 1.0
    tau: float = 0.5
    beta: float = 0.9
    # schedule
    t_start: int = 20
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    aux_pretrain_epochs: int = 30
    d_mode: str = "ema"
    # architecture
    embed_dim: int = 32
    hidden: int = 64
    disc_hidden: int = 64
    # synthetic data (ignored when features_dir is set)
    num_classes: int = 8
    per_class: int = 60
    latent_dim: int = 16
    nuisance_dim: int = 4
    class_sep: float = 1.5
    target_dim: int = 32
    target_rho: float = 0.3
    target_noise: float = 1.0
    aux_dim: int = 16
    aux_rho: float = 0.9
    aux_noise: float = 1.0
    data_seed: int = -1
    features_dir: str = ""
    # variants
    baseline: str = "none"
    fixed_teacher: bool = False
    no_warmup: bool = False
    no_d2: bool = False
    uniform_lambda: bool = False
    mi_s_only: bool = False
    no_mi_a: bool = False
    no_adv: bool = False
    nce_positive_set: bool = False
    # evaluation / output
    retrieval: str = "train_gallery"
    out_dir: str = ""
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ConfigurationError("alpha weights must be nonnegative")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigurationError(f"beta must lie in (0, 1), got {self.beta}")
        if self.t_start < 0 or self.t_start > self.epochs:
            raise ConfigurationError(f"t_start must be in [0, epochs], got {self.t_start} with epochs={self.epochs}")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.baseline not in BASELINES:
            raise ConfigurationError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.d_mode not in ("ema", "static"):
            raise ConfigurationError(f"d_mode must be 'ema' or 'static', got {self.d_mode!r}")
        if self.retrieval not in ("train_gallery", "leave_one_out"):
            raise ConfigurationError(f"unknown retrieval protocol {self.retrieval!r}")

    # -- derived settings ------------------------------------------------------
    @property
    def alphas(self) -> tuple[float, float, float]:
        a1, a2, a3 = self.alpha1, self.alpha2, self.alpha3
        if self.mi_s_only:
            a2 = a3 = 0.0
        if self.no_mi_a:
            a2 = 0.0
        if self.no_adv:
            a3 = 0.0
        return a1, a2, a3

    @property
    def warmup_epochs(self) -> int:
        return 0 if self.no_warmup else self.t_start

    @property
    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed < 0 else self.data_seed

    def synthetic_spec(self) -> SyntheticSpec:
        s = self.resolved_data_seed
        return SyntheticSpec(
            num_classes=self.num_classes, per_class=self.per_class, latent_dim=self.latent_dim,
            nuisance_dim=self.nuisance_dim, class_sep=self.class_sep,
            modalities=(ModalitySpec("video", "target", self.target_dim, self.target_rho, self.target_noise, 11),
                        ModalitySpec("audio", "auxiliary", self.aux_dim, self.aux_rho, self.aux_noise, 23)),
            seed=s)

    def replace(self, **changes) -> "AmidConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"


PRESETS = {
    # larger batches, warmer temperature, short warm-up
    "emotion": {"batch_size": 128, "tau": 0.6, "t_start": 5, "num_classes": 4, "per_class": 200},
    "video": {"batch_size": 16, "tau": 0.5, "t_start": 20},
}


def _coerce(key: str, value, kind):
    try:
        if kind in (bool, "bool"):
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind in (int, "int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind in (float, "float"):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: cannot use {value!r} as {getattr(kind, '__name__', kind)}") from None


_FIELD_TYPES = {f.name: f.type for f in fields(AmidConfig)}


def config_from_mapping(values: dict, base: AmidConfig | None = None) -> AmidConfig:
    base = base or AmidConfig()
    changes = {}
    for key, value in values.items():
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, value, _FIELD_TYPES[key])
    return dataclasses.replace(base, **changes)


def read_config_file(path: str | Path) -> dict:
    """Raw key/value mapping of a flat TOML file, with ``preset`` expanded underneath it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        values = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigurationError(f"{path}: tables are not allowed ({nested[0]!r})")
    preset = values.pop("preset", None)
    if preset is None:
        return values
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}")
    return {**PRESETS[preset], **values}


def load_config(path: str | Path, base: AmidConfig | None = None, overrides: dict | None = None) -> AmidConfig:
    """File values, then ``overrides``, validated together as one config."""
    return config_from_mapping({**read_config_file(path), **(overrides or {})}, base)


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with a TOML value; bare words fall back to strings."""
    if "=" not in item:
        raise ConfigurationError(f"override must look like key=value: {item!r}")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def parse_overrides(items: list[str]) -> dict:
    return dict(parse_override(i) for i in items)


def apply_overrides(config: AmidConfig, items: list[str]) -> AmidConfig:
    return config_from_mapping(parse_overrides(items), config)
