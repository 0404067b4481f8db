"""Flat ``key = value`` configuration files and CLI overrides.

One assignment per line; ``#`` starts a comment. Values are Python literals:
ints, floats, quoted strings, ``true``/``false``, and bracketed
comma-separated vectors or matrices. No nesting beyond lists of lists.
"""

import ast
import re

from .errors import ConfigInvalid, IoFailure

_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")


def _parse_value(text, where):
    text = text.strip()
    if not text:
        raise ConfigInvalid(f"{where}: empty value")
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise ConfigInvalid(f"{where}: cannot parse value {text!r}") from None
    if not _valid_value(value):
        raise ConfigInvalid(f"{where}: unsupported value type for {text!r}")
    return value


def _valid_value(v):
    if isinstance(v, bool) or isinstance(v, (int, float, str)):
        return True
    if isinstance(v, list):
        return all(_valid_value(item) for item in v)
    return False


def parse_config_text(text, source="<config>"):
    """Parse config text into a raw key -> typed value map."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source} line {lineno}"
        if "=" not in line:
            raise ConfigInvalid(f"{where}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ConfigInvalid(f"{where}: bad key {key!r}")
        if key in raw:
            raise ConfigInvalid(f"{where}: duplicate key {key!r}")
        raw[key] = _parse_value(value, where)
    return raw


def parse_config_file(path):
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as e:
        raise IoFailure(f"cannot read config {path}: {e}") from e
    return parse_config_text(text, source=str(path))


def parse_override(arg):
    """Parse a command-line ``key=value`` override."""
    if "=" not in arg:
        raise ConfigInvalid(f"override {arg!r} is not of the form key=value")
    key, _, value = arg.partition("=")
    key = key.strip()
    if not _KEY_RE.match(key):
        raise ConfigInvalid(f"override: bad key {key!r}")
    return key, _parse_value(value, f"override {key}")


class ExperimentConfig:
    """A validated, fully-defaulted experiment description."""

    def __init__(self, experiment, values, seed=0, output_dir=None):
        self.experiment = experiment
        self.values = values
        self.seed = seed
        self.output_dir = output_dir

    def __getitem__(self, key):
        return self.values[key]
