"""Key-value run configuration files.

One ``key = value`` per line, ``#`` comments, no sections.  Keys use the
command-line spelling with either dashes or underscores.
"""

from __future__ import annotations

import configparser
import math
import re
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "read_config", "parse_config", "parse_alpha_grid", "parse_angle", "parse_range"]

_SECTION = "run"


class ConfigError(ValueError):
    """Bad configuration input; the CLI exits with status 2."""


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = lambda k: k.strip().replace("-", "_").lower()
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return dict(parser[_SECTION])


def read_config(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(p))


_ANGLE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi)?\s*(?:/\s*(\d+\.?\d*))?\s*$")


def parse_angle(text: str) -> float:
    """Numbers and simple multiples of pi: ``0.3``, ``pi``, ``2pi``, ``pi/4``, ``0.5*pi``."""
    text = text.strip().lower()
    sign = -1.0 if text.startswith("-") and text[1:].lstrip().startswith("pi") else 1.0
    if sign < 0:
        text = text[1:]
    m = _ANGLE.match(text)
    if m is None or (m.group(1) is None and m.group(2) is None):
        raise ConfigError(f"cannot parse angle {text!r}")
    coef = float(m.group(1)) if m.group(1) is not None else 1.0
    val = coef * (math.pi if m.group(2) else 1.0)
    if m.group(3):
        den = float(m.group(3))
        if den == 0:
            raise ConfigError(f"division by zero in {text!r}")
        val /= den
    return sign * val


def parse_alpha_grid(text: str) -> np.ndarray:
    """``start:stop:count`` (inclusive, evenly spaced) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"alpha grid {text!r} must be start:stop:count")
        try:
            count = int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"alpha grid count {parts[2]!r} is not an integer") from exc
        if count < 1:
            raise ConfigError("alpha grid needs at least one point")
        return np.linspace(parse_angle(parts[0]), parse_angle(parts[1]), count)
    vals = [parse_angle(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise ConfigError("alpha grid is empty")
    return np.array(vals)


def parse_range(text: str) -> tuple[float, float]:
    """``lo:hi`` or a single value meaning ``lo = hi``."""
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"cannot parse range {text!r}") from exc
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) != 2:
        raise ConfigError(f"range {text!r} must be lo:hi")
    return vals[0], vals[1]
