"""Run configuration as INI files.

A config file has up to four sections -- [run], [algo], [sim], [expert] --
whose keys are the fields of the matching dataclass.  Keys left out fall
back to the dataclass defaults, so an empty file is a valid config.  Values
are written with ``repr`` so a save/load cycle reproduces every float bit
for bit (round-trip identity is tested).
"""

import ast
import configparser
import dataclasses
import os
import typing

from .algo import AlgoConfig
from .errors import ConfigError
from .expert import ExpertConfig
from .sim import SimConfig
from .trainer import RunConfig

_SECTIONS = {
    "run": RunConfig,
    "algo": AlgoConfig,
    "sim": SimConfig,
    "expert": ExpertConfig,
}

_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


@dataclasses.dataclass
class ConfigBundle:
    """Everything a training run needs, one attribute per section."""

    run: RunConfig
    algo: AlgoConfig
    sim: SimConfig
    expert: ExpertConfig


def default_bundle() -> ConfigBundle:
    return ConfigBundle(RunConfig(), AlgoConfig(), SimConfig(), ExpertConfig())


def _parse_value(raw: str, ftype, where: str):
    try:
        if ftype is bool:
            word = raw.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is tuple:
            val = ast.literal_eval(raw)
            if not isinstance(val, (tuple, list)):
                raise ValueError(f"expected a tuple, got {raw!r}")
            return tuple(val)
        return raw
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, tuple):
        return repr(val)
    return str(val)


def load_config(path: str) -> ConfigBundle:
    """Read ``path`` and return defaults overlaid with its settings.

    Unknown sections or keys are hard errors that name the offending
    entry, so a typo never silently trains with defaults.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.RawConfigParser()
    # keep keys as written so error messages quote what the user typed
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if parser.defaults():
        raise ConfigError(f"{path}: [DEFAULT] section is not supported")

    kwargs = {name: {} for name in _SECTIONS}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        fields = typing.get_type_hints(_SECTIONS[section])
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(
                    f"{path}: unknown key '{key}' in [{section}]")
            kwargs[section][key] = _parse_value(
                raw, fields[key], f"{path}: [{section}] {key}")

    return ConfigBundle(**{name: cls(**kwargs[name])
                           for name, cls in _SECTIONS.items()})


def save_config(path: str, bundle: ConfigBundle, header: str = "") -> None:
    """Write every field of every section -- a full, self-describing
    snapshot rather than a diff against defaults.  ``header`` lines, if
    given, go in as leading comments (version stamps and the like)."""
    parser = configparser.RawConfigParser()
    parser.optionxform = str
    for name in _SECTIONS:
        parser.add_section(name)
        cfg = getattr(bundle, name)
        for f in dataclasses.fields(cfg):
            parser.set(name, f.name, _format_value(getattr(cfg, f.name)))
    with open(path, "w") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        parser.write(fh)
