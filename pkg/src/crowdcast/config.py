"""Run configuration: a hierarchical YAML document validated section by
section against the module dataclasses. Unknown keys are rejected by name.

Sections (all optional, defaults apply): seed, output_dir, sim, grid, tdm,
model, train, eval, augment, data, ablation. `--set a.b=value` overrides one
dotted key; values parse as YAML scalars.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, CrowdcastError
from .evaluation import EvalProtocol, TM_FUNCTION_ORDER
from .masking import TDMConfig
from .model import ModelConfig
from .simdata import SimConfig
from .tokenizer import CubeGrid
from .training import AugmentPolicy, TrainConfig


@dataclass
class DataConfig:
    """Trajectory file paths and the windowing stride."""

    train_path: str | None = None
    eval_path: str | None = None
    stride: int | None = None


@dataclass
class AblationConfig:
    tm_functions: list[str] = field(default_factory=lambda: list(TM_FUNCTION_ORDER))
    dm_enabled: bool = True

    def __post_init__(self):
        unknown = [fn for fn in self.tm_functions if fn not in TM_FUNCTION_ORDER]
        if unknown:
            raise ConfigError(f"unknown TM ratio function(s) {unknown}; "
                              f"choose from {list(TM_FUNCTION_ORDER)}")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    sim: SimConfig = field(default_factory=SimConfig)
    grid: CubeGrid = field(default_factory=CubeGrid)
    tdm: TDMConfig = field(default_factory=TDMConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)


_SECTIONS = {
    "sim": SimConfig,
    "grid": CubeGrid,
    "tdm": TDMConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalProtocol,
    "augment": AugmentPolicy,
    "data": DataConfig,
    "ablation": AblationConfig,
}
_SCALARS = {"seed": int, "output_dir": str}


def _build_section(cls, doc: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{section}': {', '.join(unknown)}")
    coerced = {}
    for key, value in doc.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except CrowdcastError as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


def build_run_config(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    unknown = sorted(set(doc) - set(_SECTIONS) - set(_SCALARS))
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, conv in _SCALARS.items():
        if key in doc:
            kwargs[key] = conv(doc[key])
    for key, cls in _SECTIONS.items():
        section = doc.get(key, {})
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigError(f"section '{key}' must be a mapping, got {type(section).__name__}")
        kwargs[key] = _build_section(cls, section, key)
    cfg = RunConfig(**kwargs)
    # Cascade the top-level seed into sections that did not pin their own.
    if "seed" not in (doc.get("sim") or {}):
        cfg.sim = dataclasses.replace(cfg.sim, seed=cfg.seed)
    if "seed" not in (doc.get("train") or {}):
        cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed + 1)
    if "seed" not in (doc.get("eval") or {}):
        cfg.eval = dataclasses.replace(cfg.eval, seed=cfg.seed + 2)
    # Token length always follows the cube grid.
    cfg.model = dataclasses.replace(cfg.model, token_len=cfg.grid.token_len)
    return cfg


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply `--set a.b=value` overrides onto the raw document."""
    doc = dict(doc or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        dotted, raw = item.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"override {item!r} has an empty key path")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: cannot parse value: {exc}") from exc
        node = doc
        for k in keys[:-1]:
            nxt = node.get(k)
            if nxt is None:
                nxt = {}
                node[k] = nxt
            elif not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: '{k}' is not a mapping")
            node = nxt
        node[keys[-1]] = value
    return doc


def load_run_config(path, overrides: list[str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    if overrides:
        doc = apply_overrides(doc, overrides)
    return build_run_config(doc)


def make_run_dir(output_dir, command: str) -> Path:
    """Fresh timestamped directory under output_dir; never reuses a path."""
    base = Path(output_dir)
    base.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = base / f"{command}-{stamp}"
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = base / f"{command}-{stamp}-{suffix}"
    candidate.mkdir()
    return candidate
