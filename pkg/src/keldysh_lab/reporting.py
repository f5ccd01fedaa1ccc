"""Deterministic report emission.

Identical inputs must give byte-identical files: keys are sorted, floats are
rendered with 17 significant digits, complex values as [re, im] pairs, and
every report carries `schema` and (when randomness is involved) the seed.
"""
from __future__ import annotations

import os
from typing import Iterable, Sequence

import numpy as np

SCHEMA = "keldysh-lab/1"
CSV_HEADER_LINE = "# schema=keldysh-lab/1"


def fmt_float(x: float) -> str:
    if isinstance(x, float) and (np.isnan(x) or np.isinf(x)):
        return '"%s"' % repr(x)
    return format(float(x), ".17g")


def _render(obj, indent: int) -> str:
    pad = "  " * indent
    pad2 = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        z = complex(obj)
        return f"[{fmt_float(z.real)}, {fmt_float(z.imag)}]"
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{out}"'
    if isinstance(obj, np.ndarray):
        return _render(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj.keys(), key=str):
            items.append(f'{pad2}"{k}": {_render(obj[k], indent + 1)}')
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad2}{_render(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def to_json_text(obj: dict) -> str:
    payload = dict(obj)
    payload.setdefault("schema", SCHEMA)
    return _render(payload, 0) + "\n"


def write_json(path: str, obj: dict) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(to_json_text(obj))
    return path


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Delimited output with the schema comment line; floats at 17 digits."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt_float(float(v)).strip('"')
        if isinstance(v, (complex, np.complexfloating)):
            raise TypeError("split complex values into re/im columns")
        return str(v)

    with open(path, "w") as fh:
        fh.write(CSV_HEADER_LINE + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")
    return path


def cumulant_rows(table) -> list:
    """Flat (m, mbar, indices..., re, im) rows for a cumulant table."""
    rows = []
    for (m, mbar) in table.degrees():
        tensor = table.gammaT[(m, mbar)]
        for flat in np.ndindex(*tensor.shape):
            z = tensor[flat]
            if z == 0:
                continue
            rows.append((m, mbar, "|".join(str(i) for i in flat),
                         float(z.real), float(z.imag)))
    return rows


def tensor_to_json(tensor: np.ndarray) -> dict:
    t = np.asarray(tensor, dtype=complex)
    return {
        "shape": list(t.shape),
        "re": t.real.tolist(),
        "im": t.imag.tolist(),
    }
