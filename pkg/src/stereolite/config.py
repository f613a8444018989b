"""Plain key=value run configuration.

A run file carries architecture fields (forwarded to :class:`ModelConfig`)
plus runtime fields: seed, thread count, and the learning-rate schedule.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .kernels import check
from .network import ModelConfig

# runtime keys and their defaults; everything else must be a ModelConfig field
RUNTIME_DEFAULTS = {
    "seed": 0,
    "threads": 0,            # 0 = library default
    "lr": 1e-3,
    "lr_halve_epochs": (10, 12, 14, 16),
}


@dataclass
class RunConfig:
    model: ModelConfig
    seed: int = 0
    threads: int = 0
    lr: float = 1e-3
    lr_halve_epochs: tuple = (10, 12, 14, 16)


def _parse_value(text, example):
    """Coerce a raw string to the type of the default/example value."""
    if isinstance(example, bool):
        check(text in ("true", "false"), f"expected true/false, got {text!r}")
        return text == "true"
    if isinstance(example, int):
        return int(text)
    if isinstance(example, float):
        return float(text)
    if isinstance(example, tuple):
        elems = [t for t in text.split(",") if t]
        kind = type(example[0]) if example else float
        return tuple(kind(t) for t in elems)
    return text


def parse_run_config(text, preset="micro") -> RunConfig:
    """Parse key=value lines (# comments allowed) on top of a preset."""
    model_fields = {f.name: f for f in fields(ModelConfig)}
    overrides = {}
    runtime = dict(RUNTIME_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        check("=" in line, f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            preset = value
        elif key in runtime:
            runtime[key] = _parse_value(value, RUNTIME_DEFAULTS[key])
        elif key in model_fields:
            overrides[key] = value
        else:
            raise KeyError(f"line {lineno}: unknown config key {key!r}")
    model = ModelConfig.preset(preset)
    for key, value in overrides.items():
        example = getattr(model, key)
        setattr(model, key, _parse_value(value, example))
    model.__post_init__()
    return RunConfig(model=model, **runtime)


def load_run_config(path, preset="micro") -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_run_config(f.read(), preset)
