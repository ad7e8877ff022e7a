"""CSV input and output for surveillance frames and detector results."""

from __future__ import annotations

import csv
import datetime as _dt
import math
from pathlib import Path

import numpy as np

from .sts import StsFrame, SurveillanceResult, new_sts

RESULT_HEADER = ("date", "unit", "observed", "upperbound", "alarm", "score")
CALIBRATION_HEADER = ("h", "prob_markov", "prob_mc", "mc_se")


class InputError(ValueError):
    """Malformed input file; the message names the file and line."""


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    # newline="" lets csv handle both LF and CRLF
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            rows = [(reader.line_num, r) for r in reader if any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, rows


def _parse_table(path, header, rows, first_data_col: int):
    """Return (row labels, integer matrix) checking every cell."""
    width = len(header)
    labels, data = [], []
    for line, r in rows:
        if len(r) != width:
            raise InputError(f"{path}:{line}: expected {width} fields, found {len(r)}")
        labels.append(r[0].strip())
        vals = []
        for j, cell in enumerate(r[first_data_col:], start=first_data_col):
            cell = cell.strip()
            if cell == "" or cell.upper() in ("NA", "NAN"):
                raise InputError(f"{path}:{line}: missing value in column '{header[j]}'")
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}:{line}: column '{header[j]}': not a number: {cell!r}") from None
            if not math.isfinite(v) or v != round(v):
                raise InputError(f"{path}:{line}: column '{header[j]}': not an integer count: {cell!r}")
            if v < 0:
                raise InputError(f"{path}:{line}: column '{header[j]}': negative count {cell}")
            vals.append(int(v))
        data.append(vals)
    return labels, np.array(data, dtype=np.int64).reshape(len(rows), width - first_data_col)


def _parse_epochs(path, header, rows, labels):
    kind = header[0].lower()
    if kind == "date":
        out = []
        for (line, _), lab in zip(rows, labels):
            try:
                out.append(_dt.date.fromisoformat(lab))
            except ValueError:
                raise InputError(f"{path}:{line}: invalid ISO date {lab!r}") from None
        return out
    if kind == "index":
        out = []
        for (line, _), lab in zip(rows, labels):
            try:
                out.append(int(lab))
            except ValueError:
                raise InputError(f"{path}:{line}: invalid index {lab!r}") from None
        return out
    raise InputError(f"{path}:1: first column must be named 'date' or 'index', found {header[0]!r}")


def read_sts_csv(path, freq: int = 52, start=(2000, 1), population=None, multinomial: bool = False) -> StsFrame:
    """Read a frame from ``path``.

    Univariate/multivariate files have the header ``date,<unit1>,...``
    (or ``index,...``); multinomial files ``date,total,<cat1>,...``.
    ``population`` is an optional sidecar file of the same shape.
    """
    header, rows = _read_rows(path)
    if multinomial:
        if len(header) < 4 or header[1].lower() != "total":
            raise InputError(f"{path}:1: multinomial header must be date,total,<cat1>,<cat2>,...")
        labels, mat = _parse_table(path, header, rows, 1)
        totals, obs = mat[:, 0], mat[:, 1:]
        for (line, _), tot, row in zip(rows, totals, obs):
            if row.sum() != tot:
                raise InputError(f"{path}:{line}: categories sum to {row.sum()}, total is {tot}")
        units = header[2:]
    else:
        if len(header) < 2:
            raise InputError(f"{path}:1: need a time column and at least one unit")
        labels, obs = _parse_table(path, header, rows, 1)
        totals = None
        units = header[1:]
    epochs = _parse_epochs(path, header, rows, labels)

    pop = totals
    if population is not None:
        if multinomial:
            raise InputError(f"{population}: multinomial input carries its totals; no population file")
        ph, prows = _read_rows(population)
        if ph != header:
            raise InputError(f"{population}:1: header {ph} does not match {header}")
        if len(prows) != len(rows):
            raise InputError(f"{population}: {len(prows)} rows, data file has {len(rows)}")
        plabels, pop = _parse_table(population, ph, prows, 1)
        for (line, _), a, b in zip(prows, plabels, labels):
            if a != b:
                raise InputError(f"{population}:{line}: time label {a!r} does not match data file ({b!r})")
    try:
        return new_sts(
            obs,
            epoch=epochs if header[0].lower() == "date" else None,
            freq=freq,
            start=start,
            population=pop,
            multinomial_mode=multinomial,
            unit_names=units,
        )
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def fmt_num(x) -> str:
    """Up to six significant digits; empty for undefined values."""
    if x is None or (isinstance(x, float) and math.isnan(x)) or (isinstance(x, np.floating) and np.isnan(x)):
        return ""
    return format(float(x), ".6g")


def result_rows(results: list[SurveillanceResult]) -> list[tuple[str, ...]]:
    """Rows of the output table, units in the order given."""
    out = []
    for res in results:
        s = res.sts
        labels = s.epoch_labels()
        for j, unit in enumerate(s.unit_names):
            for i in range(s.n):
                out.append(
                    (
                        labels[i],
                        unit,
                        str(int(s.observed[i, j])),
                        fmt_num(s.upperbound[i, j]),
                        "1" if s.alarm[i, j] else "0",
                        fmt_num(res.score[i]),
                    )
                )
    return out


def write_csv(target, header, rows) -> None:
    """Write to a path or an open text stream."""
    if hasattr(target, "write"):
        w = csv.writer(target, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    Path(target).parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="", encoding="utf-8") as fh:
        write_csv(fh, header, rows)


def write_results_csv(path, results: list[SurveillanceResult]) -> None:
    write_csv(path, RESULT_HEADER, result_rows(results))


def read_results_csv(path) -> list[dict]:
    header, rows = _read_rows(path)
    if tuple(header) != RESULT_HEADER:
        raise InputError(f"{path}:1: expected header {','.join(RESULT_HEADER)}")
    out = []
    for line, r in rows:
        if len(r) != len(header):
            raise InputError(f"{path}:{line}: expected {len(header)} fields, found {len(r)}")
        rec = dict(zip(header, r))
        try:
            rec["observed"] = int(rec["observed"])
            rec["upperbound"] = float(rec["upperbound"]) if rec["upperbound"] else None
            rec["alarm"] = rec["alarm"] == "1"
            rec["score"] = float(rec["score"]) if rec["score"] else None
        except ValueError as exc:
            raise InputError(f"{path}:{line}: {exc}") from None
        out.append(rec)
    return out
