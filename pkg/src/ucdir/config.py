"""Run configuration: four TOML sections with strict keys.

    [generator]   GeneratorSpec fields
    [train]       TrainConfig fields (minus ``loss`` / ``eval_interval``)
    [loss]        LossConfig fields
    [eval]        ks, eval_interval, directions

Precedence, lowest first: built-in defaults, config file, ``UCDIR_<SECTION>_<KEY>``
environment variables, command-line overrides.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import GeneratorSpec
from .evaluation import DIRECTIONS
from .losses import LossConfig
from .training import TrainConfig

ENV_PREFIX = "UCDIR_"
SECTIONS = ("generator", "train", "loss", "eval")


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    ks: tuple = (1, 5, 15)
    eval_interval: int = 5
    directions: tuple = DIRECTIONS

    def __post_init__(self):
        self.ks = tuple(int(k) for k in self.ks)
        self.directions = tuple(self.directions)
        if not self.ks or min(self.ks) < 1:
            raise ValueError("ks must be positive integers")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        bad = [d for d in self.directions if d not in DIRECTIONS]
        if bad or not self.directions:
            raise ValueError(f"directions must be drawn from {DIRECTIONS}, got {list(self.directions)}")


_TRAIN_EXCLUDED = {"loss", "eval_interval"}


def _train_keys():
    return [f.name for f in fields(TrainConfig) if f.name not in _TRAIN_EXCLUDED]


def _default_train() -> dict:
    d = TrainConfig()
    out = {k: getattr(d, k) for k in _train_keys()}
    out["K"] = None
    return out


@dataclass
class RunConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    train: dict = field(default_factory=_default_train)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def desk_scale(cls) -> "RunConfig":
        """Defaults sized for a CPU run of the synthetic benchmark (see README)."""
        return apply_overrides(cls(), DESK_SCALE)

    @classmethod
    def load(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        return merge(base or cls(), doc)

    def generator_spec(self, **kw) -> GeneratorSpec:
        return replace(self.generator, **kw)

    def train_config(self, variant: str | None = None, **kw) -> TrainConfig:
        t = dict(self.train)
        t.update(kw)
        if t.get("K") is None:
            t["K"] = self.generator.num_classes
        loss = self.loss.with_variant(variant) if variant else self.loss
        return TrainConfig(**t, loss=loss, eval_interval=self.eval.eval_interval)

    def to_toml(self) -> str:
        out = []
        for sec in SECTIONS:
            vals = section_dict(self, sec)
            out.append(f"[{sec}]")
            for k, v in vals.items():
                if v is None:
                    continue
                out.append(f"{k} = {_toml_value(v)}")
            out.append("")
        return "\n".join(out)


DESK_SCALE = [
    "train.epochs=60",
    "train.batch_size=32",
    "train.lr0=0.02",
    "loss.T1=6",
    "loss.T2=30",
    "loss.phi=0.2",
    "loss.gamma=0.1",
]


def section_dict(cfg: RunConfig, sec: str) -> dict:
    obj = getattr(cfg, sec)
    if isinstance(obj, dict):
        return dict(obj)
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def _coerce(sec: str, key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{sec}.{key}: expected a boolean, got {value!r}")
    if isinstance(default, int) or (default is None and key == "K"):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{sec}.{key}: expected an integer, got {value!r}")
        try:
            iv = int(value)
        except ValueError:
            raise ConfigError(f"{sec}.{key}: expected an integer, got {value!r}") from None
        if isinstance(value, float) and iv != value:
            raise ConfigError(f"{sec}.{key}: expected an integer, got {value!r}")
        return iv
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{sec}.{key}: expected a number, got {value!r}") from None
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{sec}.{key}: expected a list, got {value!r}")
        if default and isinstance(default[0], str):
            return tuple(str(v).strip() for v in value)
        return tuple(int(v) for v in value)
    if isinstance(default, str):
        return str(value)
    return value


def merge(cfg: RunConfig, doc: dict) -> RunConfig:
    """Return ``cfg`` updated from a nested ``{section: {key: value}}`` mapping."""
    unknown = [s for s in doc if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section {unknown[0]!r}")
    new = {}
    for sec in SECTIONS:
        cur = section_dict(cfg, sec)
        upd = doc.get(sec, {})
        if not isinstance(upd, dict):
            raise ConfigError(f"section {sec!r} must be a table")
        for key, value in upd.items():
            if key not in cur:
                raise ConfigError(f"unknown config key {sec}.{key}")
            cur[key] = _coerce(sec, key, value, cur[key])
        new[sec] = cur
    try:
        return RunConfig(GeneratorSpec(**new["generator"]), new["train"],
                         LossConfig(**new["loss"]), EvalConfig(**new["eval"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_scalar(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: RunConfig, items) -> RunConfig:
    """Apply ``section.key=value`` strings."""
    doc: dict = {}
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, text = item.split("=", 1)
        sec, key = path.strip().split(".", 1)
        doc.setdefault(sec, {})[key] = _parse_scalar(text.strip())
    return merge(cfg, doc)


def env_overrides(cfg: RunConfig, environ=None) -> RunConfig:
    """Apply ``UCDIR_<SECTION>_<KEY>=value`` variables (case-insensitive)."""
    environ = os.environ if environ is None else environ
    doc: dict = {}
    for name, text in environ.items():
        if not name.upper().startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        sec, _, key = rest.partition("_")
        sec = sec.lower()
        if sec not in SECTIONS or not key:
            raise ConfigError(f"environment variable {name} does not name a config key")
        cur = section_dict(cfg, sec)
        match = [k for k in cur if k.lower() == key.lower()]
        if not match:
            raise ConfigError(f"unknown config key {sec}.{key.lower()} (from {name})")
        doc.setdefault(sec, {})[match[0]] = _parse_scalar(text)
    return merge(cfg, doc) if doc else cfg


def as_dict(cfg: RunConfig) -> dict:
    return {sec: section_dict(cfg, sec) for sec in SECTIONS}


__all__ = ["RunConfig", "EvalConfig", "ConfigError", "merge", "apply_overrides",
           "env_overrides", "as_dict", "DESK_SCALE"]
