"""Single JSON run configuration shared by all commands."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .controller import ControllerConfig
from .dataio import SynthConfig
from .dataio.synth import sub_seed
from .rot import RotConfig
from .svae import SvaeConfig
from .timing import TimingConfig

DEFAULT_HOME = "handover_runs"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    corpus: str | None = None  # existing corpus directory; default <output_dir>/corpus
    synth: SynthConfig = field(default_factory=SynthConfig)
    n_test_pairs: int = 2
    test_pairs: list | None = None


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    svae: SvaeConfig = field(default_factory=SvaeConfig)
    rot: RotConfig = field(default_factory=RotConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    output_dir: str | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def output_root(self, override: str | None = None) -> Path:
        """Flag, then config, then ``$HANDOVER_HOME``, then ``./handover_runs``."""
        return Path(override or self.output_dir or os.environ.get("HANDOVER_HOME") or DEFAULT_HOME)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k == "synth":
            v = _build(SynthConfig, v, f"{where}.synth")
        elif k in ("idle_range", "cue_lead", "rest_ee") and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SECTIONS = {"data": DataSection, "svae": SvaeConfig, "rot": RotConfig, "timing": TimingConfig,
             "controller": ControllerConfig}


def load_run_config(source=None) -> RunConfig:
    """Parse a config file path, JSON text or dict. Unknown keys are rejected.

    Model sections that do not set ``seed`` get ``sub_seed(root_seed, section)``.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    else:
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"data", "svae", "rot", "timing", "controller", "output_dir", "seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    kwargs = {"seed": seed, "output_dir": raw.get("output_dir")}
    for name, cls in _SECTIONS.items():
        section = dict(raw.get(name, {}))
        if name in ("svae", "rot", "timing") and "seed" not in section:
            section["seed"] = sub_seed(seed, name) % (2**31)
        kwargs[name] = _build(cls, section, name)
    cfg = RunConfig(**kwargs)
    for name in ("svae", "rot", "timing"):
        try:
            getattr(cfg, name).validate()
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    try:
        cfg.data.synth.validate()
        cfg.controller.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
