"""Experiment configuration files: TOML with fixed sections, strictly
validated (unknown keys are rejected, with the offending line number when it
can be located).  Every run writes its fully-resolved configuration next to
its outputs so results stay reproducible.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_BOOL, _INT, _FLOAT, _STR = bool, int, float, str

# key -> (type, default).  A default of None means "no value unless given".
_SCHEMA: dict[str, dict[str, tuple]] = {
    "dataset": {
        "path": (_STR, None),
        "synth": (_BOOL, False),
        "snr": (_FLOAT, 2.0),
        "subjects": (_INT, 9),
        "classes": (_INT, 12),
        "channels": (_INT, 64),
        "samples": (_INT, 64),
        "blocks": (_INT, 5),
        "crop_samples": (_INT, None),
        "normalize": (_BOOL, False),
    },
    "pretrain": {
        "scheme": (_STR, "sce"),
        "filters": (_INT, 1),
        "width": (_INT, 1),
        "activation": (_STR, "tanh"),
        "loss": (_STR, None),
        "scope": (_STR, "within_subject"),
        "arity": (_INT, 3),
        "partition": (_STR, "train"),
        "epochs": (_INT, 200),
        "learning_rate": (_FLOAT, 0.05),
        "momentum": (_FLOAT, 0.9),
        "decay": (_FLOAT, 0.999),
        "l1": (_FLOAT, 0.0),
        "batch_size": (_INT, 128),
        "patience": (_INT, 40),
        "stage2": (_BOOL, True),
        "stage2_epochs": (_INT, None),
    },
    "train": {
        "layer1_filters": (_INT, 1),
        "layer1_width": (_INT, 1),
        "layer2_filters": (_INT, 4),
        "layer2_width": (_INT, 3),
        "layer2_stride": (_INT, 1),
        "epochs": (_INT, 50),
        "learning_rate": (_FLOAT, 0.01),
        "momentum": (_FLOAT, 0.9),
        "decay": (_FLOAT, 0.99),
        "l1": (_FLOAT, 1e-5),
        "batch_size": (_INT, 128),
        "dropout": (_FLOAT, 0.0),
    },
    "eval": {
        "aggregation": (_STR, "avg"),
    },
    "sweep": {
        "budget": (_INT, None),
        "grid": (dict, None),
    },
}

_CHOICES = {
    ("pretrain", "scheme"): {"cae", "cte", "sce"},
    ("pretrain", "activation"): {"tanh", "linear"},
    ("pretrain", "scope"): {"within_subject", "cross_subject"},
    ("pretrain", "partition"): {"train", "all"},
    ("eval", "aggregation"): {"avg", "maj"},
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        """The section with schema defaults filled in (None values omitted)."""
        merged = {k: d for k, (_, d) in _SCHEMA[name].items() if d is not None}
        merged.update(getattr(self, name))
        return merged


def _key_line(text: str, section: str, key: str) -> int | None:
    in_section = section == ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            in_section = m.group(1).split(".")[0] == section
            continue
        if in_section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return lineno
    return None


def _reject(text: str, section: str, key: str, message: str) -> ConfigError:
    line = _key_line(text, section, key)
    where = f"line {line}: " if line else ""
    return ConfigError(where + message)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc

    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise _reject(text, "", "seed", "'seed' must be an integer")
    sections: dict[str, dict] = {}
    for name, content in raw.items():
        if name not in _SCHEMA:
            raise _reject(text, name, name, f"unknown section [{name}]")
        if not isinstance(content, dict):
            raise _reject(text, "", name, f"{name!r} must be a section, not a value")
        schema = _SCHEMA[name]
        for key, value in content.items():
            if key not in schema:
                raise _reject(text, name, key,
                              f"unknown key {key!r} in section [{name}]")
            expected = schema[key][0]
            ok = isinstance(value, expected) and not (
                expected is not bool and isinstance(value, bool))
            if expected is float and isinstance(value, int) \
                    and not isinstance(value, bool):
                ok = True
            if not ok:
                raise _reject(text, name, key,
                              f"key {key!r} in [{name}] must be {expected.__name__}")
            choices = _CHOICES.get((name, key))
            if choices and value not in choices:
                raise _reject(text, name, key,
                              f"key {key!r} in [{name}] must be one of "
                              f"{sorted(choices)}, got {value!r}")
        sections[name] = dict(content)
    return ExperimentConfig(seed=seed, **sections)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def resolved_toml(config: ExperimentConfig) -> str:
    """The fully-resolved configuration as TOML text."""
    lines = [f"seed = {config.seed}"]
    for name in _SCHEMA:
        section = getattr(config, name)
        if not section:
            continue
        merged = config.section(name)
        tables = {k: v for k, v in merged.items() if isinstance(v, dict)}
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in merged.items():
            if key not in tables:
                lines.append(f"{key} = {_toml_value(value)}")
        for sub, table in tables.items():
            lines.append("")
            lines.append(f"[{name}.{sub}]")
            for key, value in table.items():
                lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"
