"""Experiment configuration: INI files with one section per settings group.

Every key must be known; unknown sections or keys are errors so that a typo
can never silently fall back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .train import OptimizerConfig

EXPERIMENTS = ("toy_regression", "dim_sweep", "arch_sweep", "theory_sweep", "manifold_compare")
MANIFOLDS = ("circle", "tractrix", "embedded_circle")


DEFAULT_SEED_COUNT = {"toy_regression": 20, "dim_sweep": 10, "arch_sweep": 30, "manifold_compare": 1}
DEFAULT_MANIFOLDS = {"toy_regression": ("circle",), "arch_sweep": ("circle", "tractrix"),
                     "dim_sweep": ("embedded_circle",)}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# seeds

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, tag: str) -> int:
    """Child seed for ``tag``; streams for different tags never share state."""
    h = int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")
    return splitmix64(splitmix64(seed & _MASK) ^ h)


# ---------------------------------------------------------------------------
# settings groups


@dataclass(frozen=True)
class TaskSettings:
    amplitude: float = 1.0
    frequency: float | None = None  # None: 3 on circles, pi on the tractrix
    noise_sigma: float = 0.1
    n_points: int = 1000


@dataclass(frozen=True)
class CountSettings:
    grid_per_unit: int = 4096
    refine_tol: float = 1e-10
    merge_tol: float = 1e-8
    distance_samples: int = 512
    log_every: int = 10


@dataclass(frozen=True)
class SweepSettings:
    dims: tuple[int, ...] = tuple(range(2, 53, 5))
    archs: tuple[tuple[int, ...], ...] = ((10, 10, 10), (20, 20, 20), (30, 30, 30))


@dataclass(frozen=True)
class TheorySettings:
    n_min: int = 2
    n_max: int = 30


@dataclass(frozen=True)
class CompareSettings:
    latent_dim: int = 4
    ambient_dim: int = 32
    decoder_hidden: tuple[int, ...] = (64, 64)
    classifier_hidden: tuple[int, ...] = (256, 64)
    n_train: int = 256
    pairs: int = 10
    segments: int = 100
    learning_rate: float = 0.01
    momentum: float = 0.5
    batch_size: int = 32
    epochs: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "toy_regression"
    manifolds: tuple[str, ...] | None = None
    arch: tuple[int, ...] = (2, 10, 16, 1)
    seeds: tuple[int, ...] | None = None
    master_seed: int = 0
    output_dir: str = "runs"
    weight_scheme: str = "he_normal"
    bias_scheme: str = "uniform(-0.5,0.5)"
    checkpoints: bool = False
    task: TaskSettings = field(default_factory=TaskSettings)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    counting: CountSettings = field(default_factory=CountSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    theory: TheorySettings = field(default_factory=TheorySettings)
    compare: CompareSettings = field(default_factory=CompareSettings)

    def __post_init__(self):
        if self.manifolds is None:
            object.__setattr__(self, "manifolds", DEFAULT_MANIFOLDS.get(self.experiment, ("circle",)))
        if self.seeds is None:
            object.__setattr__(self, "seeds", tuple(range(DEFAULT_SEED_COUNT.get(self.experiment, 1))))

    def config_hash(self) -> str:
        """Hash of everything that affects a single run's results.

        The output directory and the seed list are left out: records are keyed
        by (hash, variant, seed), so extending the seed list reuses finished runs.
        """
        doc = dataclasses.asdict(self)
        doc.pop("output_dir")
        doc.pop("seeds")
        doc["optimizer"].pop("seed")
        text = json.dumps(doc, sort_keys=True, default=list)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


SECTIONS = {
    "experiment": None,
    "task": TaskSettings,
    "optimizer": OptimizerConfig,
    "counting": CountSettings,
    "sweep": SweepSettings,
    "theory": TheorySettings,
    "compare": CompareSettings,
}
_SECTION_ATTR = {"task": "task", "optimizer": "optimizer", "counting": "counting", "sweep": "sweep",
                 "theory": "theory", "compare": "compare"}
_NOT_CONFIGURABLE = {"optimizer": {"seed"}}


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:  # inclusive range a..b or a..b:step
        rng, _, step = text.partition(":")
        a, b = rng.split("..")
        return tuple(range(int(a), int(b) + 1, int(step or 1)))
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _coerce(tp, raw: str, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        if tp is str:
            return raw.strip()
        if origin in (typing.Union, types.UnionType):
            if raw.strip().lower() in ("", "none", "default"):
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _coerce(inner, raw, where)
        if origin is tuple and args and args[0] is int:
            return _int_list(raw)
        if origin is tuple and args and typing.get_origin(args[0]) is tuple:
            # hidden-width lists: "10-10-10; 20-20-20"
            return tuple(tuple(int(w) for w in item.strip().split("-")) for item in raw.split(";") if item.strip())
        if origin is tuple and args and args[0] is str:
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc
    raise ConfigError(f"{where}: unsupported field type {tp}")


def _types(cls) -> dict:
    return typing.get_type_hints(cls)


_EXPERIMENT_KEYS = {"kind": "experiment", "manifold": "manifolds", "arch": "arch", "seeds": "seeds",
                    "seed": "master_seed", "output_dir": "output_dir", "weight_scheme": "weight_scheme",
                    "bias_scheme": "bias_scheme", "checkpoints": "checkpoints"}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values: dict = {}
    sub: dict[str, dict] = {}
    top_types = _types(ExperimentConfig)
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            where = f"{source}: [{section}] {key}"
            if section == "experiment":
                if key not in _EXPERIMENT_KEYS:
                    raise ConfigError(f"{where}: unknown key")
                name = _EXPERIMENT_KEYS[key]
                if name == "seeds" and raw.strip().isdigit():
                    values[name] = tuple(range(int(raw)))  # a bare count n means seeds 0..n-1
                else:
                    values[name] = _coerce(top_types[name], raw, where)
            else:
                cls = SECTIONS[section]
                hints = _types(cls)
                if key not in hints or key in _NOT_CONFIGURABLE.get(section, ()):
                    raise ConfigError(f"{where}: unknown key")
                sub.setdefault(section, {})[key] = _coerce(hints[key], raw, where)
    for section, kv in sub.items():
        try:
            values[_SECTION_ATTR[section]] = SECTIONS[section](**kv)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from exc
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` overrides by re-parsing through the INI path."""
    if not overrides:
        return cfg
    lines: dict[str, list[str]] = {}
    for item in overrides:
        lhs, sep, rhs = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lines.setdefault(section, []).append(f"{key} = {rhs}")
    base = to_ini(cfg)
    extra = "\n".join(f"[{s}]\n" + "\n".join(kv) for s, kv in lines.items())
    merged = configparser.ConfigParser(interpolation=None, strict=False)
    merged.optionxform = str
    merged.read_string(base)
    try:
        merged.read_string(extra)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    out = []
    for s in merged.sections():
        out.append(f"[{s}]")
        out.extend(f"{k} = {v}" for k, v in merged.items(s))
    return parse_config("\n".join(out) + "\n", "<overrides>")


def _fmt(v) -> str:
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join("-".join(str(w) for w in item) for item in v)
    if isinstance(v, tuple):
        # trailing comma keeps a lone seed from reading back as a seed count
        return ",".join(str(x) for x in v) + ("," if len(v) == 1 else "")
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(cfg: ExperimentConfig) -> str:
    rev = {v: k for k, v in _EXPERIMENT_KEYS.items()}
    lines = ["[experiment]"]
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in rev:
            lines.append(f"{rev[f.name]} = {_fmt(getattr(cfg, f.name))}")
    for section, attr in _SECTION_ATTR.items():
        lines.append(f"\n[{section}]")
        obj = getattr(cfg, attr)
        for f in dataclasses.fields(obj):
            if f.name in _NOT_CONFIGURABLE.get(section, ()):
                continue
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def validate(cfg: ExperimentConfig) -> None:
    """Check cross-field constraints before any run starts."""
    from .network import NetworkError, init_random

    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected one of {EXPERIMENTS}")
    for m in cfg.manifolds:
        if m not in MANIFOLDS:
            raise ConfigError(f"unknown manifold {m!r}")
    if cfg.experiment in ("toy_regression", "arch_sweep"):
        bad = [m for m in cfg.manifolds if m not in ("circle", "tractrix")]
        if bad:
            raise ConfigError(f"{cfg.experiment} supports circle and tractrix only, got {bad}")
    if len(cfg.arch) < 2 or any(w < 1 for w in cfg.arch) or cfg.arch[-1] != 1:
        raise ConfigError(f"arch must be positive widths ending in a scalar output, got {cfg.arch}")
    if cfg.experiment == "toy_regression" and cfg.arch[0] != 2:
        raise ConfigError("toy regression curves live in R^2; arch must start with 2")
    if not cfg.seeds or len(set(cfg.seeds)) != len(cfg.seeds) or min(cfg.seeds) < 0:
        raise ConfigError("seeds must be distinct non-negative integers")
    try:
        init_random([1, 1, 1], 0, cfg.weight_scheme, cfg.bias_scheme)
    except NetworkError as exc:
        raise ConfigError(str(exc)) from exc
    c = cfg.counting
    if c.grid_per_unit < 2 or not c.refine_tol > 0 or not c.merge_tol > c.refine_tol:
        raise ConfigError("counting needs grid_per_unit >= 2 and merge_tol > refine_tol > 0")
    if c.distance_samples < 1 or c.log_every < 1:
        raise ConfigError("distance_samples and log_every must be >= 1")
    if cfg.task.n_points < 5 or cfg.task.noise_sigma < 0:
        raise ConfigError("task needs n_points >= 5 and noise_sigma >= 0")
    if cfg.experiment == "dim_sweep" and (not cfg.sweep.dims or min(cfg.sweep.dims) < 2):
        raise ConfigError("dim sweep needs dims >= 2")
    if cfg.experiment == "arch_sweep":
        if not cfg.sweep.archs or any(len(a) != 3 or min(a) < 1 for a in cfg.sweep.archs):
            raise ConfigError("arch sweep needs three-hidden-layer widths like 10-10-10")
    t = cfg.theory
    if t.n_min < 2 or t.n_max < t.n_min:
        raise ConfigError("theory sweep needs 2 <= n_min <= n_max")
    k = cfg.compare
    if k.latent_dim < 1 or k.ambient_dim <= k.latent_dim:
        raise ConfigError("compare needs 1 <= latent_dim < ambient_dim")
    if k.pairs < 1 or k.segments < 1 or k.n_train < 1 or k.epochs < 0 or k.batch_size < 1:
        raise ConfigError("compare sizes must be positive")
    if not k.learning_rate > 0 or not 0 <= k.momentum < 1:
        raise ConfigError("compare optimizer settings out of range")
