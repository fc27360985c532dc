"""Line-oriented ``key = value`` text format shared by scenarios and reports.

Grammar::

    # comment
    key = value
    [section]
    key = value

Values are numbers (``nan``/``inf`` allowed), double-quoted strings with
``\\"`` and ``\\\\`` escapes, or bracketed numeric arrays.  Keys start with a
letter or underscore and may contain letters, digits, ``_``, ``-`` and ``.``.
Section names follow the same rule.
"""
from __future__ import annotations

import math
import re

__all__ = ["KVError", "Diagnostic", "loads", "dumps", "format_value", "format_number"]

_KEY = r"[A-Za-z_][A-Za-z0-9_.\-]*"
_LINE = re.compile(rf"^\s*({_KEY})\s*=\s*(.*?)\s*$")
_SECTION = re.compile(rf"^\s*\[\s*({_KEY})\s*\]\s*$")
_NUMBER = re.compile(r"^[+-]?(?:(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf|nan)$")


class Diagnostic(tuple):
    """``(line, message)``; line numbers start at 1 (0 for file-level issues)."""

    def __new__(cls, line, message):
        return super().__new__(cls, (line, message))

    @property
    def line(self):
        return self[0]

    @property
    def message(self):
        return self[1]

    def __str__(self):
        return f"line {self.line}: {self.message}" if self.line else self.message


class KVError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = [d if isinstance(d, Diagnostic) else Diagnostic(*d) for d in diagnostics]
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def _parse_number(tok):
    if not _NUMBER.match(tok):
        raise ValueError(f"not a number: {tok!r}")
    if re.fullmatch(r"[+-]?\d+", tok):
        return int(tok)
    return float(tok)


def _parse_string(raw):
    out = []
    i = 1
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            if i + 1 >= len(raw) or raw[i + 1] not in '"\\':
                raise ValueError("bad escape in string")
            out.append(raw[i + 1])
            i += 2
            continue
        if ch == '"':
            if raw[i + 1:].strip():
                raise ValueError("trailing characters after string")
            return "".join(out)
        out.append(ch)
        i += 1
    raise ValueError("unterminated string")


def parse_value(raw):
    if not raw:
        raise ValueError("missing value")
    if raw.startswith('"'):
        return _parse_string(raw)
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ValueError("unterminated array")
        body = raw[1:-1].strip()
        if not body:
            return []
        return [_parse_number(tok.strip()) for tok in body.split(",")]
    return _parse_number(raw)


def loads(text):
    """Parse into ``{section: {key: (value, line)}}``; top-level keys use section ``""``."""
    sections = {"": {}}
    current = ""
    errors = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                errors.append(Diagnostic(lineno, f"duplicate section [{current}]"))
            sections.setdefault(current, {})
            continue
        m = _LINE.match(line)
        if not m:
            errors.append(Diagnostic(lineno, f"cannot parse line: {stripped!r}"))
            continue
        key, raw = m.group(1), m.group(2)
        if key in sections[current]:
            errors.append(Diagnostic(lineno, f"duplicate key {key!r}"))
            continue
        try:
            sections[current][key] = (parse_value(raw), lineno)
        except ValueError as exc:
            errors.append(Diagnostic(lineno, f"{key}: {exc}"))
    if errors:
        raise KVError(errors)
    return sections


def format_number(v):
    if isinstance(v, bool):
        raise TypeError("booleans are not part of the grammar")
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _escape(s):
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_value(v):
    if isinstance(v, str):
        return _escape(v)
    if hasattr(v, "tolist") and not isinstance(v, (int, float)):
        v = v.tolist()
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_number(x) for x in v) + "]"
    return format_number(v)


def dumps(sections):
    """Canonical text for ``{section: {key: value}}`` (insertion order kept)."""
    lines = []
    for key, value in sections.get("", {}).items():
        lines.append(f"{key} = {format_value(value)}")
    for name, body in sections.items():
        if name == "":
            continue
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key, value in body.items():
            lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"
