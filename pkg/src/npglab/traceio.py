"""CSV trace format.

A trace file starts with ``#``-prefixed metadata lines (``# key = <json value>``), then a
header row ``algorithm,iter,eta,value,error,scaled_error,subopt_mass[,bound_*]`` and one
row per (algorithm, iteration). Floats carry 17 significant digits; empty cells are nulls.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict

import numpy as np

from .algorithms import (
    AdaptiveL,
    ConstantEta,
    ConstantL,
    GeometricL,
    IncreasingEta,
    LinearL,
    RunTrace,
    SoftmaxPGStep,
    TraceRecord,
)
from .errors import ParseError
from .mdp import fmt_float

FORMAT_ID = "npglab-trace/1"
BASE_COLUMNS = ("algorithm", "iter", "eta", "value", "error", "scaled_error", "subopt_mass")


def schedule_to_dict(schedule) -> dict:
    if isinstance(schedule, AdaptiveL):
        inner = schedule.l_schedule
        return {"type": "AdaptiveL", "l_type": type(inner).__name__, **asdict(inner)}
    return {"type": type(schedule).__name__, **asdict(schedule)}


def schedule_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", None)
    simple = {"ConstantEta": ConstantEta, "IncreasingEta": IncreasingEta, "SoftmaxPGStep": SoftmaxPGStep}
    try:
        if kind in simple:
            return simple[kind](**d)
        if kind == "AdaptiveL":
            l_type = d.pop("l_type")
            cls = {"ConstantL": ConstantL, "LinearL": LinearL, "GeometricL": GeometricL}[l_type]
            return AdaptiveL(cls(**d))
    except (KeyError, TypeError) as e:
        raise ParseError(f"bad schedule description: {e}", field="schedule") from None
    raise ParseError(f"unknown schedule type {kind!r}", field="schedule")


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return fmt_float(x)


def write_traces(traces, metadata: dict, bounds: dict | None = None) -> str:
    """Render traces (ordered) as one CSV document.

    ``bounds`` maps algorithm id to ``{name: [value per iter]}``; the union of names
    becomes ``bound_<name>`` columns.
    """
    bounds = bounds or {}
    names = sorted({n for b in bounds.values() for n in b})
    meta = dict(metadata)
    meta.setdefault("format", FORMAT_ID)
    for t in traces:
        meta[f"schedule.{t.algorithm}"] = schedule_to_dict(t.schedule) if t.schedule is not None else None
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key} = {json.dumps(meta[key], sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(BASE_COLUMNS) + [f"bound_{n}" for n in names])
    for t in traces:
        tb = bounds.get(t.algorithm, {})
        for r in t.records:
            row = [t.algorithm, r.k, _cell(r.eta_used), _cell(r.value_rho), _cell(r.error),
                   _cell(r.scaled_error), _cell(r.subopt_mass)]
            row += [_cell(tb[n][r.k]) if n in tb and tb[n][r.k] is not None else "" for n in names]
            w.writerow(row)
    return buf.getvalue()


def _num(cell, line, col):
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", line=line, field=col) from None


def read_traces(text: str):
    """Parse a trace CSV into ``(metadata, {algorithm: [row dict, ...]})``."""
    meta, rows = {}, {}
    lines = text.splitlines()
    body_start = 0
    for i, line in enumerate(lines, start=1):
        if not line.startswith("#"):
            body_start = i - 1
            break
        key, sep, value = line[1:].partition("=")
        if not sep:
            raise ParseError("metadata line must read '# key = value'", line=i)
        try:
            meta[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            raise ParseError("metadata value is not valid JSON", line=i, field=key.strip()) from None
    else:
        raise ParseError("trace has no header row", line=len(lines) + 1)
    reader = csv.reader(lines[body_start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("trace has no header row", line=body_start + 1) from None
    if tuple(header[:len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise ParseError(f"unexpected columns {header}", line=body_start + 1)
    for offset, cells in enumerate(reader, start=body_start + 2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", line=offset)
        row = {"algorithm": cells[0]}
        try:
            row["iter"] = int(cells[1])
        except ValueError:
            raise ParseError(f"bad iteration {cells[1]!r}", line=offset, field="iter") from None
        for col, cell in zip(header[2:], cells[2:]):
            row[col] = _num(cell, offset, col)
        rows.setdefault(cells[0], []).append(row)
    return meta, rows


def trace_from_rows(algorithm: str, rows, meta: dict) -> RunTrace:
    """Rebuild a policy-free :class:`RunTrace` from parsed CSV rows."""
    rows = sorted(rows, key=lambda r: r["iter"])
    if [r["iter"] for r in rows] != list(range(len(rows))):
        raise ParseError(f"iterations of {algorithm} are not contiguous from 0", field="iter")
    sched = meta.get(f"schedule.{algorithm}")
    schedule = schedule_from_dict(sched) if sched else None
    recs = tuple(
        TraceRecord(k=r["iter"], eta_used=r["eta"], value_rho=r["value"], error=r["error"],
                    scaled_error=r["scaled_error"], subopt_mass=r["subopt_mass"])
        for r in rows)
    mdp_meta = {k: meta[k] for k in ("n_states", "n_actions", "gamma", "mdp_digest", "reward_mode",
                                     "seed", "generator") if k in meta}
    return RunTrace(algorithm, schedule, recs, None, mdp_meta, rho_from_meta(meta))


def rho_from_meta(meta: dict) -> np.ndarray:
    S = int(meta["n_states"])
    rho = meta.get("rho", "uniform")
    if rho == "uniform":
        return np.full(S, 1.0 / S)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (S,):
        raise ParseError(f"rho must have {S} entries", field="rho")
    return rho
