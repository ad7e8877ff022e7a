"""Alarm tables in plain text and LaTeX.

One row per timepoint with ``year`` and ``week`` (epoch within the year)
followed by the observed count and threshold of every unit.  Thresholds of
alarming timepoints are bold (LaTeX) or carry a trailing ``*`` (text);
undefined thresholds are shown as an en dash.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

from .csvio import fmt_num
from .sts import SurveillanceResult, iso_week_year

UNDEFINED = "–"


@dataclass
class ReportTable:
    units: list[str]
    # (year, week, [(observed, threshold or None, alarm) per unit])
    rows: list[tuple[str, str, list[tuple[int, float | None, bool]]]]


def table_from_results(results: list[SurveillanceResult]) -> ReportTable:
    units: list[str] = []
    by_time: dict[tuple[str, str], list] = {}
    order: list[tuple[str, str]] = []
    for res in results:
        s = res.sts
        ye = s.year_and_epoch()
        for j, unit in enumerate(s.unit_names):
            units.append(unit)
            for i in range(s.n):
                key = (str(ye[i][0]), str(ye[i][1]))
                if key not in by_time:
                    by_time[key] = {}
                    order.append(key)
                ub = float(s.upperbound[i, j])
                by_time[key][unit] = (int(s.observed[i, j]), None if ub != ub else ub, bool(s.alarm[i, j]))
    return _assemble(units, order, by_time)


def _year_week(label: str, spacing: int | None) -> tuple[str, str]:
    try:
        d = _dt.date.fromisoformat(label)
    except ValueError:
        return "", label
    if spacing == 7:
        y, w = iso_week_year(d)
        return str(y), str(w)
    if spacing is not None and 28 <= spacing <= 31:
        return str(d.year), str(d.month)
    return str(d.year), str(d.timetuple().tm_yday)


def table_from_records(records: list[dict]) -> ReportTable:
    """Table from rows read back from a results CSV."""
    units: list[str] = []
    labels: list[str] = []
    for r in records:
        if r["unit"] not in units:
            units.append(r["unit"])
        if r["date"] not in labels:
            labels.append(r["date"])
    spacing = None
    try:
        ds = sorted(_dt.date.fromisoformat(x) for x in labels)
        if len(ds) > 1:
            spacing = (ds[1] - ds[0]).days
    except ValueError:
        pass
    key_of = {lab: _year_week(lab, spacing) for lab in labels}
    order = list(dict.fromkeys(key_of[lab] for lab in labels))
    by_time: dict = {k: {} for k in order}
    for r in records:
        by_time[key_of[r["date"]]][r["unit"]] = (r["observed"], r["upperbound"], r["alarm"])
    return _assemble(units, order, by_time)


def _assemble(units, order, by_time) -> ReportTable:
    rows = []
    for key in order:
        cells = [by_time[key].get(u, (None, None, False)) for u in units]
        rows.append((key[0], key[1], cells))
    return ReportTable(units, rows)


def _threshold(ub, alarm: bool, bold) -> str:
    if ub is None:
        return UNDEFINED
    s = fmt_num(ub)
    return bold(s) if alarm else s


def _obs(v) -> str:
    return UNDEFINED if v is None else str(v)


def render_text(table: ReportTable) -> str:
    header = ["Year", "Week"]
    for u in table.units:
        header += [u, "Threshold"]
    body = []
    for year, week, cells in table.rows:
        line = [year or UNDEFINED, week]
        for obs, ub, alarm in cells:
            line += [_obs(obs), _threshold(ub, alarm, lambda s: s + "*")]
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def _tex_escape(s: str) -> str:
    for a, b in (("\\", r"\textbackslash{}"), ("&", r"\&"), ("%", r"\%"), ("_", r"\_"), ("#", r"\#"), ("$", r"\$")):
        s = s.replace(a, b)
    return s


def render_latex(table: ReportTable, caption: str | None = None) -> str:
    ncol = 2 + 2 * len(table.units)
    head = ["Year", "Week"]
    for u in table.units:
        head += [_tex_escape(u), "Threshold"]
    out = ["\\begin{table}[h]", "\\centering", "\\begin{tabular}{" + "r" * ncol + "}", "  \\hline", " & ".join(head) + " \\\\", "  \\hline"]
    for year, week, cells in table.rows:
        line = [year or "--", week]
        for obs, ub, alarm in cells:
            line += [_obs(obs).replace(UNDEFINED, "--"), _threshold(ub, alarm, lambda s: f"\\textbf{{{s}}}").replace(UNDEFINED, "--")]
        out.append("  " + " & ".join(line) + " \\\\")
    out += ["  \\hline", "\\end{tabular}"]
    if caption:
        out.append(f"\\caption{{{_tex_escape(caption)}}}")
    out.append("\\end{table}")
    return "\n".join(out) + "\n"


def render_report(results, format: str = "text", caption: str | None = None) -> str:
    """Render results (detector results or records from a results CSV)."""
    if not results:
        raise ValueError("nothing to report")
    table = table_from_records(results) if isinstance(results[0], dict) else table_from_results(results)
    if format == "text":
        return render_text(table)
    if format == "latex":
        return render_latex(table, caption or "Bold thresholds indicate timepoints with alarms.")
    raise ValueError("format must be 'text' or 'latex'")
