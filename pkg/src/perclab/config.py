"""Text configuration: named sections of ``key = value`` pairs.

::

    # comments run to end of line
    kernel { family = "long_range", d = 2, beta = 4.0, delta = 1.5 }
    model {
        process = "poisson"
        intensity = 1.0
    }
    truncate_sweep { ell = [1, 2, 4, 8, inf], n = 40 }

Values are Python literals (numbers, strings, lists, dicts, booleans);
the bare word ``inf`` stands for infinity.  Pairs are separated by commas
or newlines.
"""

from __future__ import annotations

import ast
import re

from .errors import ParameterError

__all__ = ["parse_config", "dump_config"]

_SECTION = re.compile(r"([A-Za-z_][\w-]*)\s*\{(.*?)\}\s*(?=[A-Za-z_][\w-]*\s*\{|\Z)", re.S)
_INF = re.compile(r"(?<![\w.\"'])(-?)inf(?![\w\"'])")


def _strip_comments(text):
    out = []
    for line in text.splitlines():
        quote = None
        for i, ch in enumerate(line):
            if ch in "\"'" and quote is None:
                quote = ch
            elif ch == quote:
                quote = None
            elif ch == "#" and quote is None:
                line = line[:i]
                break
        out.append(line)
    return "\n".join(out)


def _split_pairs(body):
    """Split on top-level commas/newlines (not inside brackets or quotes)."""
    parts, depth, quote, cur = [], 0, None, []
    for ch in body:
        if quote:
            cur.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
        elif ch in "[({":
            depth += 1
        elif ch in "])}":
            depth -= 1
        if ch in ",\n" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _value(raw):
    try:
        return ast.literal_eval(_INF.sub(lambda m: m.group(1) + "1e999", raw))
    except (ValueError, SyntaxError) as exc:
        raise ParameterError(f"cannot parse value {raw!r}") from exc


def parse_config(text):
    """Parse config text into ``{section: {key: value}}``."""
    text = _strip_comments(text).strip()
    out = {}
    pos = 0
    for m in _SECTION.finditer(text):
        if text[pos:m.start()].strip():
            raise ParameterError(f"unexpected text before section {m.group(1)!r}")
        pos = m.end()
        name = m.group(1).replace("-", "_")
        if name in out:
            raise ParameterError(f"duplicate section {name!r}")
        sec = {}
        for pair in _split_pairs(m.group(2)):
            key, eq, raw = pair.partition("=")
            if not eq:
                raise ParameterError(f"expected key = value in section {name!r}, got {pair!r}")
            key = key.strip()
            if key in sec:
                raise ParameterError(f"duplicate key {key!r} in section {name!r}")
            sec[key] = _value(raw.strip())
        out[name] = sec
    if text[pos:].strip():
        raise ParameterError("trailing text after the last section")
    return out


def _fmt(v):
    if isinstance(v, float) and v == float("inf"):
        return "inf"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return repr(v)


def dump_config(cfg):
    """Inverse of :func:`parse_config` (canonical layout)."""
    lines = []
    for name, sec in cfg.items():
        body = ", ".join(f"{k} = {_fmt(v)}" for k, v in sec.items())
        lines.append(f"{name} {{ {body} }}")
    return "\n".join(lines) + "\n"
