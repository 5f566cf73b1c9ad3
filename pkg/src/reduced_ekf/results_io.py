"""CSV traces, result tables and run manifests."""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .experiment import METHODS, ErrorTrace, ResultRow

TRACE_COLUMNS = ["t", "ekf_dp", "ekf_dth", "fej_dp", "fej_dth", "red_dp", "red_dth"]
RESULT_COLUMNS = ["trajectory", "density", "freq_hz", "qz", "method", "mean_dp_m", "mean_dth_rad", "n_ok", "n_diverged"]
_TRACE_PREFIX = {"ekf": "ekf", "fej": "fej", "reduced": "red"}


def fmt(x: float) -> str:
    """Fixed 6-significant-digit rendering used by every CSV."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


class MalformedResultsError(ValueError):
    pass


def write_trace_csv(traces: Mapping[str, ErrorTrace], path) -> None:
    t = next(iter(traces.values())).t
    cols = [t]
    for method in METHODS:
        tr = traces[method]
        cols += [tr.dp, tr.dth]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in np.column_stack(cols):
            writer.writerow([fmt(x) for x in row])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader]).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def write_results_csv(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.trajectory, r.density, f"{r.freq_hz:g}", f"{r.qz:g}", r.method, fmt(r.mean_dp_m), fmt(r.mean_dth_rad), r.n_ok, r.n_diverged]
            )


def read_results_csv(path) -> list[dict[str, str]]:
    """Rows as raw strings, validated against the results schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if header != RESULT_COLUMNS:
            raise MalformedResultsError(f"{path}: header {header} does not match {RESULT_COLUMNS}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RESULT_COLUMNS):
                raise MalformedResultsError(f"{path}:{lineno}: expected {len(RESULT_COLUMNS)} fields, got {len(row)}")
            rec = dict(zip(RESULT_COLUMNS, row))
            try:
                for key in ("freq_hz", "qz", "mean_dp_m", "mean_dth_rad"):
                    float(rec[key])
                for key in ("n_ok", "n_diverged"):
                    int(rec[key])
            except ValueError:
                raise MalformedResultsError(f"{path}:{lineno}: non-numeric value in {row}") from None
            rows.append(rec)
    return rows


def format_table(rows: Sequence[Mapping[str, str]]) -> str:
    """Text tables: one block per (trajectory, density), columns per (frequency, method), rows per Q_z.

    Cell values are the CSV strings, unchanged.
    """
    blocks: "OrderedDict[tuple, list]" = OrderedDict()
    for r in rows:
        blocks.setdefault((r["trajectory"], r["density"]), []).append(r)
    out = []
    for (traj, dens), recs in blocks.items():
        freqs = sorted({r["freq_hz"] for r in recs}, key=float)
        methods = [m for m in METHODS if any(r["method"] == m for r in recs)]
        methods += sorted({r["method"] for r in recs} - set(methods))
        qzs = sorted({r["qz"] for r in recs}, key=float)
        cell = {(r["freq_hz"], r["method"], r["qz"]): r for r in recs}
        cols = [(f, m) for f in freqs for m in methods]

        head1 = ["", *[f"{f} Hz {m}" for f, m in cols for _ in (0, 1)]]
        head2 = ["Q_z", *["dp [m]", "dth [rad]"] * len(cols)]
        body = []
        for q in qzs:
            line = [q]
            for f, m in cols:
                r = cell.get((f, m, q))
                line += [r["mean_dp_m"], r["mean_dth_rad"]] if r else ["-", "-"]
            body.append(line)
        width = max(len(s) for s in head1 + head2 + [x for b in body for x in b]) + 2
        out.append(f"{traj}, {dens} density")
        for line in [head1, head2, *body]:
            out.append("".join(s.rjust(width) for s in line).rstrip())
        out.append("")
    return "\n".join(out)


@dataclass
class RunManifest:
    command: str
    config: dict
    base_seed: int
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    finished: str = ""
    tool_version: str = __version__
    cells: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def add_cell(self, key: str, status: str, **extra) -> None:
        self.cells.append({"cell": key, "status": status, **extra})

    def write(self, path) -> None:
        self.finished = datetime.now(timezone.utc).isoformat(timespec="seconds")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
