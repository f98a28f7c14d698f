"""Flat ``key = value`` parameter files with a versioned header line.

Example::

    # xmpc-params v1 kind=greenhouse
    a_loss = 0.1
    a_heat = 3.0

Values are floats unless they fail to parse, in which case the raw string is
kept.  Keys are written in sorted order so files diff cleanly.
"""

from __future__ import annotations

import math

HEADER = "# xmpc-params v1"


def dumps(values: dict, kind: str) -> str:
    lines = [f"{HEADER} kind={kind}"]
    for key in sorted(values):
        val = values[key]
        if isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def loads(text: str, kind: str | None = None) -> dict:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(HEADER):
        raise ValueError(f"missing parameter header {HEADER!r}")
    head = dict(tok.split("=", 1) for tok in lines[0][len(HEADER):].split() if "=" in tok)
    if kind is not None and head.get("kind") != kind:
        raise ValueError(f"expected parameter kind {kind!r}, got {head.get('kind')!r}")
    out = {}
    for num, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {num}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {num}: empty key")
        if key in out:
            raise ValueError(f"line {num}: duplicate key {key!r}")
        try:
            num_val = float(val)
        except ValueError:
            out[key] = val
        else:
            if math.isnan(num_val):
                raise ValueError(f"line {num}: {key} is NaN")
            out[key] = num_val
    return out


def read(path, kind: str | None = None) -> dict:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), kind)


def write(path, values: dict, kind: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(values, kind))
