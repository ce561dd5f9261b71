"""
Run files and report serialization.

Run file layout (UTF-8, comma separated, '.' decimal point)::

    # spcalib run file
    # schema_version: 1
    # run_id: "synth-7"
    # created: "1970-01-01T00:00:00+00:00"
    # apparatus: {"R": 0.0309, ...}
    # plan: {...}                      (optional)
    # provenance: {...}                (optional, synthetic runs)
    v_pzt,v_applied,nu_m,sigma_nu
    0.59,0.1,893.99,0.0012
    ...

Header values are JSON. Floats are written with ``repr`` so a write/read
cycle is exact. Rows of one sweep must be contiguous.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .data import MeasurementRun, SweepPlan, VoltageSweep
from .errors import EmptyRun, ParseError, SchemaVersionMismatch
from .physics import ApparatusConfig

SCHEMA_VERSION = 1
COLUMNS = ("v_pzt", "v_applied", "nu_m", "sigma_nu")
_MAGIC = "spcalib run file"


def _num(x: float) -> str:
    return repr(float(x))


def format_run(run: MeasurementRun) -> str:
    header: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "run_id": run.run_id,
        "created": run.created,
    }
    if run.apparatus is not None:
        header["apparatus"] = run.apparatus.to_dict()
    if run.plan is not None:
        header["plan"] = run.plan.to_dict()
    if run.provenance is not None:
        header["provenance"] = run.provenance
    lines = [f"# {_MAGIC}"]
    for key, value in header.items():
        lines.append(f"# {key}: {json.dumps(value, sort_keys=True, allow_nan=False)}")
    lines.append(",".join(COLUMNS))
    for sweep in run.sweeps:
        for v, nu, s in zip(sweep.v_applied, sweep.nu_m, sweep.sigma_nu):
            lines.append(",".join((_num(sweep.v_pzt), _num(v), _num(nu), _num(s))))
    return "\n".join(lines) + "\n"


def write_run(run: MeasurementRun, path) -> None:
    Path(path).write_text(format_run(run), encoding="utf-8")


def parse_run(text: str) -> MeasurementRun:
    """Parse run-file text; see the module docstring for the layout.

    Raises
    ------
    ParseError
        Malformed header, unknown columns, non-numeric or non-finite values,
        non-positive frequency or uncertainty, or a split sweep.
    SchemaVersionMismatch
        ``schema_version`` missing or unsupported.
    EmptyRun
        No data rows.
    """
    header: dict[str, Any] = {}
    rows: list[tuple[int, float, float, float, float]] = []
    saw_columns = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if saw_columns:
                continue
            body = line[1:].strip()
            if body == _MAGIC or ":" not in body:
                continue
            key, _, value = body.partition(":")
            try:
                header[key.strip()] = json.loads(value)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, None, f"header {key.strip()!r}: {exc.msg}") from None
            continue
        if not saw_columns:
            cols = tuple(c.strip() for c in line.split(","))
            if cols != COLUMNS:
                raise ParseError(lineno, None, f"expected columns {','.join(COLUMNS)}, got {line!r}")
            saw_columns = True
            _check_schema(header, lineno)
            continue
        fields = line.split(",")
        if len(fields) != len(COLUMNS):
            raise ParseError(lineno, None, f"expected {len(COLUMNS)} fields, got {len(fields)}")
        values = []
        for col, (name, field) in enumerate(zip(COLUMNS, fields), start=1):
            try:
                x = float(field)
            except ValueError:
                raise ParseError(lineno, col, f"{name}: not a number: {field.strip()!r}") from None
            if not math.isfinite(x):
                raise ParseError(lineno, col, f"{name}: non-finite value {field.strip()!r}")
            values.append(x)
        if values[2] <= 0:
            raise ParseError(lineno, 3, "nu_m must be > 0")
        if values[3] <= 0:
            raise ParseError(lineno, 4, "sigma_nu must be > 0")
        rows.append((lineno, *values))

    if not saw_columns:
        _check_schema(header, 0)
    if not rows:
        raise EmptyRun(f"run {header.get('run_id', '?')!r} has no data rows")

    sweeps: list[VoltageSweep] = []
    seen: set[float] = set()
    start = 0
    for i in range(1, len(rows) + 1):
        if i < len(rows) and rows[i][1] == rows[start][1]:
            continue
        v_pzt = rows[start][1]
        if v_pzt in seen:
            raise ParseError(rows[start][0], 1, f"sweep V_pzt={v_pzt!r} is not contiguous")
        seen.add(v_pzt)
        block = np.array([r[2:] for r in rows[start:i]])
        sweeps.append(VoltageSweep(v_pzt, block[:, 0], block[:, 1], block[:, 2]))
        start = i

    apparatus = ApparatusConfig.from_dict(header["apparatus"]) if "apparatus" in header else None
    plan = SweepPlan.from_dict(header["plan"]) if header.get("plan") else None
    return MeasurementRun(
        run_id=str(header.get("run_id", "")),
        created=str(header.get("created", "")),
        sweeps=tuple(sweeps),
        plan=plan,
        apparatus=apparatus,
        provenance=header.get("provenance"),
    )


def _check_schema(header: dict, lineno: int) -> None:
    version = header.get("schema_version")
    if version is None:
        raise SchemaVersionMismatch("run file has no schema_version header")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema_version {version!r} unsupported (expected {SCHEMA_VERSION})")


def read_run(path) -> MeasurementRun:
    return parse_run(Path(path).read_text(encoding="utf-8"))


# -- reports ------------------------------------------------------------------------------

def jsonable(obj):
    """Recursively convert numpy values to plain Python; NaN/inf become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_report(doc: dict) -> str:
    return json.dumps(jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def format_table(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(x) for x in row])
    return buf.getvalue()


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else "nan"
    if x is None:
        return "nan"
    return str(x)


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        return columns, [row for row in reader]
