"""Versioned plain-text model files.

Layout::

    <HEADER> v<version>
    key=value          (config, one per line)
    [section]
    line               (section payload, free-form lines)
    ...

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import ModelFormatError


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def fmt_row(values) -> str:
    return " ".join(fmt_float(v) for v in np.ravel(values))


def parse_row(line) -> np.ndarray:
    try:
        return np.array([float(v) for v in line.split()], dtype=np.float64)
    except ValueError as exc:
        raise ModelFormatError(f"bad numeric row: {line!r}") from exc


def write_model_file(path, header, version, config, sections):
    lines = [f"{header} v{version}"]
    lines += [f"{k}={v}" for k, v in config.items()]
    for name, payload in sections.items():
        lines.append(f"[{name}]")
        lines.extend(payload)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_header(path) -> str:
    with open(path) as fh:
        return fh.readline().strip()


def read_model_file(path, header, version):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ModelFormatError(f"{path}: empty model file")
    first = lines[0].split()
    if len(first) != 2 or first[0] != header:
        raise ModelFormatError(f"{path}: expected a {header} model, found {lines[0]!r}")
    if first[1] != f"v{version}":
        raise ModelFormatError(f"{path}: unsupported {header} version {first[1]!r}")
    config, sections, current = {}, {}, None
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            key, sep, value = line.partition("=")
            if not sep:
                raise ModelFormatError(f"{path}: bad config line {line!r}")
            config[key.strip()] = value.strip()
        else:
            sections[current].append(line)
    return config, sections


def require(mapping, key, path):
    try:
        return mapping[key]
    except KeyError:
        raise ModelFormatError(f"{path}: missing {key!r}") from None
