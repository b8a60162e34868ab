"""Theory files: a flat ``key = value`` text format.

::

    # 0d quartic theory
    N = 1
    A = 1.0                      # row-major, N*N reals
    kernel = local arity=4 g=1.0
    kernel = dense arity=3 tensor=0.1 0 0 ...   # N**arity reals, row-major
    externals = 0 0

``kernel`` may repeat (one line per interaction, distinct arities).
Blank lines and ``#`` comments are ignored; keys are case-sensitive.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError, SQVError
from .feynman import Theory, VertexKernel
from .operator import spd_build

_KEYS = {"N", "A", "kernel", "externals"}


def _floats(text: str, line: int, field: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected real numbers: {exc}", line, field) from None


def _ints(text: str, line: int, field: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected integers: {exc}", line, field) from None


def _parse_kernel(text: str, n: int, line: int) -> VertexKernel:
    words = text.split()
    if not words or words[0] not in ("local", "dense"):
        raise ConfigError("kernel kind must be 'local' or 'dense'", line, "kernel")
    kind = words[0]
    opts: dict[str, str] = {}
    current = None
    for w in words[1:]:
        if "=" in w:
            current, _, val = w.partition("=")
            opts[current] = val
        elif current is not None:
            opts[current] += " " + w
        else:
            raise ConfigError(f"unexpected token {w!r}", line, "kernel")
    if "arity" not in opts:
        raise ConfigError("missing arity", line, "kernel")
    (arity,) = _ints(opts["arity"], line, "kernel.arity") or [0]
    try:
        if kind == "local":
            if "g" not in opts:
                raise ConfigError("local kernel needs g", line, "kernel.g")
            (g,) = _floats(opts["g"], line, "kernel.g")
            return VertexKernel.local(arity, g, name=opts.get("name", ""))
        vals = _floats(opts.get("tensor", ""), line, "kernel.tensor")
        if len(vals) != n**arity:
            raise ConfigError(f"tensor needs {n}**{arity} = {n**arity} values, got {len(vals)}", line, "kernel.tensor")
        return VertexKernel.dense(np.array(vals).reshape((n,) * arity), name=opts.get("name", ""))
    except ConfigError:
        raise
    except (SQVError, ValueError) as exc:
        raise ConfigError(str(exc), line, "kernel") from None


def parse_theory(text: str) -> Theory:
    seen: dict[str, tuple[int, str]] = {}
    kernel_lines: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError("expected 'key = value'", lineno)
        if key not in _KEYS:
            raise ConfigError(f"unknown key (known: {', '.join(sorted(_KEYS))})", lineno, key)
        if key == "kernel":
            kernel_lines.append((lineno, value.strip()))
        elif key in seen:
            raise ConfigError(f"duplicate key, first set on line {seen[key][0]}", lineno, key)
        else:
            seen[key] = (lineno, value.strip())
    for key in ("N", "A"):
        if key not in seen:
            raise ConfigError("missing required key", None, key)

    line, val = seen["N"]
    ns = _ints(val, line, "N")
    if len(ns) != 1 or ns[0] < 1:
        raise ConfigError("N must be one positive integer", line, "N")
    n = ns[0]
    line, val = seen["A"]
    entries = _floats(val, line, "A")
    if len(entries) != n * n:
        raise ConfigError(f"A needs N*N = {n * n} values, got {len(entries)}", line, "A")
    try:
        op = spd_build(np.array(entries).reshape(n, n))
    except SQVError as exc:
        raise ConfigError(str(exc), line, "A") from None

    kernels = [_parse_kernel(v, n, ln) for ln, v in kernel_lines]
    externals: list[int] = []
    if "externals" in seen:
        line, val = seen["externals"]
        externals = _ints(val, line, "externals")
    try:
        return Theory(op, kernels, externals)
    except (SQVError, ValueError) as exc:
        where = seen.get("externals", (None, ""))[0]
        raise ConfigError(str(exc), where, "externals" if "site" in str(exc) else "kernel") from None


def load_theory(path: str | Path) -> Theory:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_theory(text)


def format_theory(theory: Theory) -> str:
    n = theory.op.dim
    lines = [f"N = {n}", "A = " + " ".join(f"{x:.17g}" for x in theory.op.matrix.ravel())]
    for k in theory.kernels:
        if k.kind == "local":
            lines.append(f"kernel = local arity={k.arity} g={k.g:.17g}")
        else:
            vals = " ".join(f"{x:.17g}" for x in k.tensor.ravel())
            lines.append(f"kernel = dense arity={k.arity} tensor={vals}")
    if theory.external_sites:
        lines.append("externals = " + " ".join(str(x) for x in theory.external_sites))
    return "\n".join(lines) + "\n"
