"""Flat ``key = value`` experiment configuration.

A config file is plain text::

    # shared settings
    seed = 3

    [table1]
    T = 150
    thetas = 0.25, 0.5, 0.75
    resampler = det(0.5)

Keys inside ``[section]`` are stored as ``section.key``. Values are typed on
parsing: ``true``/``false`` become booleans, then int and float are tried,
a comma-separated value becomes a list, and anything else stays a string.
:func:`dumps` writes the canonical form, and ``loads(dumps(c)) == c``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

_SECTION = re.compile(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_value(text: str):
    text = text.strip()
    if "," in text and not re.search(r"\([^)]*,", text):
        return [_scalar(p) for p in text.split(",") if p.strip() != ""]
    return _scalar(text)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        items = [format_value(v) for v in value]
        # a one-element list keeps a trailing comma so it parses back as a list
        return ", ".join(items) + ("," if len(items) == 1 else "")
    return str(value)


def loads(text: str) -> dict:
    out: dict = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value', got %r" % (lineno, raw))
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError("line %d: invalid key %r" % (lineno, key))
        full = "%s.%s" % (section, key) if section else key
        if full in out:
            raise ConfigError("line %d: duplicate key %r" % (lineno, full))
        out[full] = parse_value(value)
    return out


def dumps(values: dict) -> str:
    plain = sorted(k for k in values if "." not in k)
    sections: dict = {}
    for k in sorted(values):
        if "." in k:
            sec, key = k.rsplit(".", 1)
            sections.setdefault(sec, []).append((key, values[k]))
    lines = ["%s = %s" % (k, format_value(values[k])) for k in plain]
    for sec in sorted(sections):
        if lines:
            lines.append("")
        lines.append("[%s]" % sec)
        lines.extend("%s = %s" % (k, format_value(v)) for k, v in sections[sec])
    return "\n".join(lines) + "\n"


def load(path) -> dict:
    try:
        with open(path) as fh:
            return loads(fh.read())
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path) from None
    except IsADirectoryError:
        raise ConfigError("config path is a directory: %s" % path) from None


@dataclass
class ExperimentConfig:
    """Resolved settings for one experiment: defaults, then file, then overrides."""

    experiment: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError("missing config key %r" % key) from None

    def get(self, key, default=None):
        return self.values.get(key, default)

    def list(self, key) -> list:
        v = self[key]
        return list(v) if isinstance(v, (list, tuple)) else [v]

    def text(self) -> str:
        return dumps({"%s.%s" % (self.experiment, k): v for k, v in self.values.items()})

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]


def resolve(experiment: str, defaults: dict, file_values: dict | None = None, overrides=()) -> ExperimentConfig:
    """Merge defaults with the file's top-level and ``[experiment]`` keys and overrides.

    Keys in other sections are ignored. Unknown keys raise :class:`ConfigError`.
    """
    values = dict(defaults)
    preset = {}
    scoped = {}
    for k, v in (file_values or {}).items():
        if "." not in k:
            scoped[k] = v
        elif k.startswith(experiment + "."):
            scoped[k[len(experiment) + 1 :]] = v
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override must look like key=value, got %r" % item)
        k, v = (s.strip() for s in item.split("=", 1))
        if k.startswith(experiment + "."):
            k = k[len(experiment) + 1 :]
        scoped[k] = parse_value(v)
    for k, v in scoped.items():
        if k not in values:
            raise ConfigError("unknown key %r for experiment %r" % (k, experiment))
    if "preset" in scoped:
        preset = defaults.get("_presets", {}).get(scoped["preset"])
        if preset is None:
            raise ConfigError("unknown preset %r" % scoped["preset"])
    values.update(preset)
    values.update(scoped)
    values.pop("_presets", None)
    return ExperimentConfig(experiment, values)
