"""INI-style run configuration.

Three sections. ``[scenario]`` picks the trajectory and its geometry,
``[sensors]`` the rates and noise levels, ``[experiment]`` the Monte Carlo
settings. Grid axes (trajectory, density, freq_hz, qz) accept
comma-separated lists; ``simulate`` requires a single value for each.

Example::

    [scenario]
    trajectory = circle
    density = low

    [sensors]
    freq_hz = 10
    qz = 1e-4

    [experiment]
    realizations = 20
    base_seed = 0
"""

from __future__ import annotations

import configparser
import itertools
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .experiment import ExperimentConfig


class ConfigError(ValueError):
    """Configuration problem that the user must fix."""


REQUIRED = {
    "scenario": ("trajectory", "density"),
    "sensors": ("freq_hz", "qz"),
}

# optional scalar keys: section -> {key: parser}
OPTIONAL: dict[str, dict[str, Callable[[str], object]]] = {
    "scenario": {
        "line_length": float,
        "line_speed": float,
        "circle_radius": float,
        "circle_speed": float,
        "general_time": float,
        "corridor_halfwidth": float,
        "visible_target": float,
    },
    "sensors": {"qv": float, "qw": float},
    "experiment": {"realizations": int, "base_seed": int},
}

GRID_AXES = {
    ("scenario", "trajectory"): str,
    ("scenario", "density"): str,
    ("sensors", "freq_hz"): float,
    ("sensors", "qz"): float,
}


@dataclass(frozen=True)
class RunConfig:
    trajectories: tuple[str, ...]
    densities: tuple[str, ...]
    frequencies: tuple[float, ...]
    qz_levels: tuple[float, ...]
    overrides: dict
    echo: dict

    def cells(self) -> list[ExperimentConfig]:
        """Every grid cell, ordered by trajectory, density, frequency, then noise."""
        return [
            ExperimentConfig(trajectory=t, density=d, freq_hz=f, qz=q, **self.overrides)
            for t, d, f, q in itertools.product(self.trajectories, self.densities, self.frequencies, self.qz_levels)
        ]

    def single(self) -> ExperimentConfig:
        cells = self.cells()
        if len(cells) != 1:
            raise ConfigError(f"expected exactly one value per grid axis, got {len(cells)} cells")
        return cells[0]


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return lineno
    return None


def _where(path: str, text: str, section: str, key: str) -> str:
    lineno = _line_of(text, section, key)
    return f"{path}:{lineno}" if lineno else path


def load_config(path) -> RunConfig:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: expected a [section] header before {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc}") from None

    known_sections = set(REQUIRED) | set(OPTIONAL)
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"{path}: unknown section [{section}]")
        allowed = set(REQUIRED.get(section, ())) | set(OPTIONAL.get(section, {}))
        for key in parser[section]:
            if key not in allowed:
                raise ConfigError(f"{_where(path, text, section, key)}: unknown key {section}.{key}")

    for section, keys in REQUIRED.items():
        for key in keys:
            if not parser.has_option(section, key):
                raise ConfigError(f"{path}: missing required key {section}.{key}")

    axes = {}
    for (section, key), conv in GRID_AXES.items():
        raw = [v.strip() for v in parser[section][key].split(",")]
        try:
            axes[key] = tuple(conv(v) for v in raw if v)
        except ValueError:
            raise ConfigError(f"{_where(path, text, section, key)}: bad value for {section}.{key}: {parser[section][key]!r}") from None
        if not axes[key]:
            raise ConfigError(f"{_where(path, text, section, key)}: {section}.{key} is empty")

    overrides = {}
    for section, keys in OPTIONAL.items():
        if not parser.has_section(section):
            continue
        for key, conv in keys.items():
            if parser.has_option(section, key):
                raw = parser[section][key]
                try:
                    overrides[key] = conv(raw.strip())
                except ValueError:
                    raise ConfigError(f"{_where(path, text, section, key)}: bad value for {section}.{key}: {raw!r}") from None

    cfg = RunConfig(
        axes["trajectory"],
        axes["density"],
        axes["freq_hz"],
        axes["qz"],
        overrides,
        {s: dict(parser[s]) for s in parser.sections()},
    )
    try:
        cfg.cells()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg

