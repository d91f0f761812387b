import json
import os
from pathlib import Path

import tomlkit
from tomlkit.exceptions import ParseError as TomlParseError

from .exceptions import ConfigError, ConfigParseError
from .pipeline import CONFIG_KEYS, PipelineConfig, profile_defaults


def merge_config(d1, d2):
    """d2 over d1; mappings present in both are merged one level deep"""
    result = dict(d1)
    for key, value in d2.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            merged = dict(result[key])
            merged.update(value)
            result[key] = merged
        else:
            result[key] = value
    return result


def replace_env_vars(s):
    for k, v in os.environ.items():
        s = s.replace("${%s}" % (k,), v)
    return s


def _load_file(path):
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            return tomlkit.loads(text).unwrap()
        except TomlParseError as e:
            raise ConfigParseError(path, e.line, e.col, str(e)) from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(path, e.lineno, e.colno, e.msg) from e


def parse_config_file(config_file, _seen=None):
    """Raw mapping from a JSON (or .toml) config, ``include`` resolved.

    ``include`` names a base config (relative to this file, ``${VAR}``
    expanded) whose keys the including file overrides.
    """
    path = Path(config_file)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    seen = set() if _seen is None else _seen
    key = str(path.resolve())
    if key in seen:
        raise ConfigError("include", f"include cycle through {path}")
    seen.add(key)
    raw = _load_file(path)
    if not isinstance(raw, dict):
        raise ConfigParseError(path, 1, 1, "top level must be an object")
    if "include" in raw:
        include = raw.pop("include")
        if not isinstance(include, str):
            raise ConfigError("include", "must be a file name")
        base_path = Path(replace_env_vars(include))
        if not base_path.is_absolute():
            base_path = path.parent / base_path
        raw = merge_config(parse_config_file(base_path, seen), raw)
    return raw


def parsed_to_config(parsed, profile="desk"):
    """Validate a raw mapping and fill in the profile's defaults"""
    unknown = sorted(set(parsed) - set(CONFIG_KEYS) - {"include"})
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    values = profile_defaults(profile)
    values.update({k: v for k, v in parsed.items() if k != "include"})
    return PipelineConfig.from_dict(values)


def parse_config(config_file=None, profile="desk", overrides=None):
    """Config file (or nothing: all defaults) plus command line overrides.

    ``overrides`` entries that are None are ignored.
    """
    parsed = parse_config_file(config_file) if config_file is not None else {}
    config = parsed_to_config(parsed, profile)
    changes = {k: v for k, v in (overrides or {}).items() if v is not None}
    if changes:
        unknown = sorted(set(changes) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        config = config.replace(**changes)
    return config


def default_config(profile="desk"):
    """The full default mapping of a profile, as a config file would hold it"""
    return parsed_to_config({}, profile).to_dict()


def config_to_json(config):
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
