"""Minimal TOML-subset reader/writer for scenario files.

Supports exactly what scenario files need: ``[dotted.section]`` headers,
``key = value`` lines with integers, floats, booleans, quoted strings and
flat lists of numbers, plus ``#`` comments.  Floats are emitted at 17
significant digits so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import re

from .errors import ScenarioFormatError
from .jsonio import format_float

_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.]+)\]$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_]+)\s*=\s*(.+)$")


def _parse_scalar(token: str, lineno: int):
    token = token.strip()
    if token in ("true", "false"):
        return token == "true"
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    if re.fullmatch(r"[+-]?\d+", token):
        return int(token)
    try:
        return float(token)
    except ValueError:
        raise ScenarioFormatError(f"line {lineno}: cannot parse value {token!r}") from None


def parse(text: str) -> dict:
    """Parse to {section_path: {key: value}} with dotted paths as tuples."""
    out: dict = {}
    section = ()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = tuple(m.group(1).split("."))
            out.setdefault(section, {})
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ScenarioFormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = m.group(1), m.group(2).strip()
        if value.startswith("["):
            if not value.endswith("]"):
                raise ScenarioFormatError(f"line {lineno}: unterminated list")
            inner = value[1:-1].strip()
            parsed = [] if not inner else [_parse_scalar(v, lineno) for v in inner.split(",")]
        else:
            parsed = _parse_scalar(value, lineno)
        out.setdefault(section, {})[key] = parsed
    return out


def _emit_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_emit_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit value of type {type(v)!r}")


def emit(sections: dict) -> str:
    lines = []
    for path, kv in sections.items():
        if lines:
            lines.append("")
        lines.append(f"[{'.'.join(path)}]")
        for key, value in kv.items():
            lines.append(f"{key} = {_emit_value(value)}")
    return "\n".join(lines) + "\n"
