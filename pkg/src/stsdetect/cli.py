"""Batch front end: ``detect``, ``calibrate`` and ``report`` subcommands.

Exit codes: 0 success, 1 alarms present under ``--fail-on-alarm``,
2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import csvio
from .catcusum import CatControl, categorical_cusum, shift_logit, shift_multinomial_intercept
from .csvio import InputError
from .ears import ears_c1
from .farrington import FarringtonControl, farrington_flexible
from .glr import GlrControl, glr_run, harmonic_design
from .regress import fit_betabin_logit, fit_dirichlet_multinomial, fit_multinomial_logit, predict_categorical
from .report import render_report
from .runlength import CusumScheme, calibrate_threshold
from .sts import MonitoringRange, StsFrame, aggregate, date_to_days

log = logging.getLogger("stsdetect")

EXIT_OK, EXIT_ALARM, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
ALGORITHMS = ("earsC1", "farringtonFlexible", "glrnb", "glrpois", "categoricalCUSUM")
DETECT_KEYS = {"input", "population", "freq", "start", "algorithm", "params", "range", "aggregate", "output", "report", "multinomial"}
CALIBRATE_KEYS = {"scheme", "h_grid", "target", "horizon", "method", "M_states", "n_sims", "output"}


class ConfigError(ValueError):
    pass


def load_config(path) -> tuple[dict, Path]:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg, Path(path).resolve().parent


def _path(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def resolve_range(spec, sts: StsFrame) -> MonitoringRange:
    """``{"last": K}``, ``{"indices": [...]}`` (0-based) or ``{"from": date, "to": date}``."""
    if spec is None:
        raise ConfigError("config needs a 'range'")
    if not isinstance(spec, dict) or len(spec.keys() - {"last", "indices", "from", "to"}) or not spec:
        raise ConfigError(f"invalid range specification {spec!r}")
    try:
        if "last" in spec:
            return MonitoringRange.last(int(spec["last"]), sts.n)
        if "indices" in spec:
            return MonitoringRange.of(spec["indices"], sts.n)
        if not sts.epoch_as_date:
            raise ConfigError("a date range needs a dated input file")
        lo = date_to_days(_dt.date.fromisoformat(spec["from"])) if "from" in spec else -np.inf
        hi = date_to_days(_dt.date.fromisoformat(spec["to"])) if "to" in spec else np.inf
        idx = np.flatnonzero((sts.epoch >= lo) & (sts.epoch <= hi))
        return MonitoringRange.of(idx, sts.n)
    except (ValueError, IndexError, TypeError) as exc:
        raise ConfigError(f"range: {exc}") from None


def _glr_control(params: dict, rng, family: str) -> GlrControl:
    p = dict(params)
    mu0 = p.pop("mu0", None)
    model = {k: p.pop(k) for k in ("S", "trend", "refit") if k in p}
    if model:
        if mu0 is not None and not isinstance(mu0, dict):
            raise ConfigError("give either an explicit mu0 or S/trend/refit, not both")
        mu0 = {**(mu0 or {}), **model}
    if mu0 is not None:
        p["mu0"] = mu0
    return GlrControl.from_dict({**p, "range": rng.indices}, family=family)


def _matrix_param(value, base: Path, k: int, T: int, name: str) -> np.ndarray:
    """Scalar, k-vector (constant over time), k x T nested list or a CSV file (T rows x k columns)."""
    if isinstance(value, str):
        rows = np.loadtxt(_path(base, value), delimiter=",", skiprows=1, ndmin=2)
        return rows.T
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = np.array([a, 1 - a]) if k == 2 else np.full(k, a)
    if a.ndim == 1:
        if a.size != k:
            raise ConfigError(f"{name} has {a.size} entries for {k} categories")
        return a.reshape(k, 1)
    if a.shape != (k, T):
        raise ConfigError(f"{name} must be {k} x {T}")
    return a


def _cat_control(params: dict, rng: MonitoringRange, sts: StsFrame, base: Path) -> CatControl:
    p = dict(params)
    family = p.pop("family", "multinomial")
    h = p.pop("h", None)
    if h is None:
        raise ConfigError("categoricalCUSUM needs 'h'")
    ret = p.pop("ret", "value")
    sigma = float(p.pop("sigma", 0.0))
    R = p.pop("R", None)
    delta = p.pop("delta", None)
    fit_spec = p.pop("fit", None)
    pi0 = p.pop("pi0", None)
    pi1 = p.pop("pi1", None)
    if p:
        raise ConfigError(f"unknown categoricalCUSUM parameters: {sorted(p)}")
    k, T = sts.m, len(rng)
    idx = rng.array

    if fit_spec is not None:
        S = int(fit_spec.get("S", 0)) if isinstance(fit_spec, dict) else 0
        phase1 = np.arange(idx[0])
        if phase1.size == 0:
            raise ConfigError("fitting the in-control model needs rows before the range")
        X1, _ = harmonic_design(phase1 + 1, S, sts.freq, False)
        X2, _ = harmonic_design(idx + 1, S, sts.freq, False)
        Y1 = sts.observed[phase1]
        if family == "betabinomial":
            fit = fit_betabin_logit(Y1[:, 0], Y1.sum(axis=1), X1)
            sigma = fit.sigma
        elif family == "binomial":
            fit = fit_multinomial_logit(Y1, X1, reference=1)
        elif family == "multinomial":
            fit = fit_multinomial_logit(Y1, X1)
        else:
            fit = fit_dirichlet_multinomial(Y1, X1)
        pred = predict_categorical(fit, X2)
        pi0 = np.vstack([pred, 1 - pred]) if pred.ndim == 1 else pred.T
        if R is not None:
            if family not in ("binomial", "betabinomial"):
                raise ConfigError("R (odds multiplier) applies to the binomial families")
            p1 = shift_logit(pi0[0], float(R))
            pi1 = np.vstack([p1, 1 - p1])
        elif delta is not None:
            shifted = shift_multinomial_intercept(fit, delta, X2)
            pi1 = np.vstack([shifted, 1 - shifted]) if shifted.ndim == 1 else shifted
        elif pi1 is None:
            raise ConfigError("with 'fit' give R or delta")
    else:
        if pi0 is None:
            raise ConfigError("categoricalCUSUM needs pi0 (or 'fit')")
        pi0 = _matrix_param(pi0, base, k, T, "pi0")
        if R is not None:
            if family not in ("binomial", "betabinomial"):
                raise ConfigError("R (odds multiplier) applies to the binomial families")
            p1 = shift_logit(pi0[0], float(R))
            pi1 = np.vstack([p1, 1 - p1])
        elif pi1 is None:
            raise ConfigError("categoricalCUSUM needs pi1 or R")
    if not isinstance(pi1, np.ndarray):
        pi1 = _matrix_param(pi1, base, k, T, "pi1")
    return CatControl(rng.indices, float(h), pi0, pi1, family=family, sigma=sigma, ret=ret)


def build_job(cfg: dict, base: Path):
    """Validate a detect config; return ``(frame, [(unit, callable)])``."""
    unknown = set(cfg) - DETECT_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    alg = cfg.get("algorithm")
    if alg not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {alg!r}; choose one of {', '.join(ALGORITHMS)}")
    if "input" not in cfg:
        raise ConfigError("config needs 'input'")
    multinomial = bool(cfg.get("multinomial", alg == "categoricalCUSUM"))
    try:
        with open(_path(base, cfg["input"]), encoding="utf-8-sig") as fh:
            header = fh.readline().strip().lower()
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    if header.startswith("index") and ("freq" not in cfg or "start" not in cfg):
        raise ConfigError("index-based input needs 'freq' and 'start' in the config")
    sts = csvio.read_sts_csv(
        _path(base, cfg["input"]),
        freq=int(cfg.get("freq", 52)),
        start=tuple(cfg.get("start", (2000, 1))),
        population=_path(base, cfg["population"]) if cfg.get("population") else None,
        multinomial=multinomial,
    )
    if cfg.get("aggregate"):
        if alg == "categoricalCUSUM":
            raise ConfigError("categoricalCUSUM consumes the multinomial frame whole; no aggregation")
        try:
            sts = aggregate(sts, by=cfg["aggregate"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    rng = resolve_range(cfg.get("range"), sts)
    params = dict(cfg.get("params", {}))

    try:
        if alg == "earsC1":
            if set(params) - {"alpha"}:
                raise ConfigError(f"unknown earsC1 parameters: {sorted(set(params) - {'alpha'})}")
            alpha = float(params.get("alpha", 0.001))
            if not 0 < alpha < 1:
                raise ConfigError("alpha must lie in (0, 1)")
            run = lambda u: ears_c1(sts, rng, alpha, unit=u)
        elif alg == "farringtonFlexible":
            ctrl = FarringtonControl.from_dict({**params, "range": rng.indices})
            run = lambda u: farrington_flexible(sts, ctrl, unit=u)
        elif alg in ("glrnb", "glrpois"):
            ctrl = _glr_control(params, rng, "poisson" if alg == "glrpois" else "nb")
            run = lambda u: glr_run(sts, ctrl, unit=u)
        else:
            ctrl = _cat_control(params, rng, sts, base)
            return sts, [("all", lambda: categorical_cusum(sts, ctrl))]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{alg} parameters: {exc}") from None
    return sts, [(u, (lambda u=u: run(u))) for u in sts.unit_names]


def run_detect(cfg: dict, base: Path, jobs: int = 1):
    """Run all series; returns ``(results in unit order, failures)``."""
    _, tasks = build_job(cfg, base)

    def attempt(task):
        unit, fn = task
        try:
            return unit, fn(), None
        except (ValueError, IndexError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.error("series %s failed: %s", unit, exc)
            return unit, None, str(exc)

    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(attempt, tasks))
    else:
        outcomes = [attempt(t) for t in tasks]
    results = [r for _, r, _ in outcomes if r is not None]
    failures = {u: e for u, _, e in outcomes if e is not None}
    return results, failures


def _write_report(spec, base: Path, results) -> None:
    if not spec:
        return
    if isinstance(spec, str):
        spec = {"format": spec}
    fmt = spec.get("format", "text")
    if fmt == "csv":
        return
    if fmt not in ("text", "latex"):
        raise ConfigError("report format must be csv, latex or text")
    doc = render_report(results, fmt, spec.get("caption"))
    if spec.get("path"):
        target = _path(base, spec["path"])
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(doc, encoding="utf-8")
    else:
        sys.stdout.write(doc)


def cmd_detect(args) -> int:
    cfg, base = load_config(args.config)
    results, failures = run_detect(cfg, base, args.jobs)
    if not results:
        log.error("all series failed")
        return EXIT_RUNTIME
    out = cfg.get("output")
    if out:
        csvio.write_results_csv(_path(base, out), results)
    else:
        csvio.write_csv(sys.stdout, csvio.RESULT_HEADER, csvio.result_rows(results))
    _write_report(cfg.get("report"), base, results)
    for unit, err in failures.items():
        log.warning("no result for %s: %s", unit, err)
    n_alarm = sum(int(r.sts.alarm.any()) for r in results)
    log.info("%d series processed, %d with alarms, %d failed", len(results), n_alarm, len(failures))
    if args.fail_on_alarm and n_alarm:
        return EXIT_ALARM
    return EXIT_OK


def _grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        lo, hi, by = float(spec["from"]), float(spec["to"]), float(spec["by"])
        if by <= 0:
            raise ConfigError("h_grid step must be positive")
        n = int(np.floor((hi - lo) / by + 1e-9)) + 1
        return lo + by * np.arange(n)
    return np.asarray(spec, dtype=float)


def build_scheme(spec: dict) -> CusumScheme:
    """Scheme from config: count families take ``mu0`` and ``theta`` (log
    shift) or ``mu1``; binomial families ``pi0`` with ``R`` or ``pi1``."""
    s = dict(spec)
    family = s.pop("family", None)
    if family is None:
        raise ConfigError("scheme needs a family")
    totals = s.pop("totals", None)
    sigma = float(s.pop("sigma", 0.0))
    size = s.pop("size", None)
    strict = s.pop("strict", None)
    true = s.pop("true", None)
    if family in ("poisson", "nb"):
        mu0 = np.asarray(s.pop("mu0"), dtype=float)
        if "theta" in s:
            mu1 = mu0 * np.exp(float(s.pop("theta")))
        elif "mu1" in s:
            mu1 = np.asarray(s.pop("mu1"), dtype=float)
        else:
            raise ConfigError("count scheme needs theta or mu1")
        th0, th1 = mu0.reshape(1, -1), mu1.reshape(1, -1)
    else:
        pi0 = np.asarray(s.pop("pi0"), dtype=float)
        if "R" in s:
            if family not in ("binomial", "betabinomial"):
                raise ConfigError("R applies to the binomial families")
            pi1 = shift_logit(pi0, float(s.pop("R")))
        else:
            pi1 = np.asarray(s.pop("pi1"), dtype=float)
        if family in ("binomial", "betabinomial"):
            th0, th1 = np.atleast_1d(pi0).reshape(1, -1), np.atleast_1d(pi1).reshape(1, -1)
        else:
            th0 = pi0.reshape(-1, 1) if pi0.ndim == 1 else pi0
            th1 = pi1.reshape(-1, 1) if pi1.ndim == 1 else pi1
    if s:
        raise ConfigError(f"unknown scheme keys: {sorted(s)}")
    return CusumScheme(
        family,
        th0,
        th1,
        theta_true=None if true is None else np.asarray(true, dtype=float),
        totals=totals,
        sigma=sigma,
        size=np.inf if size is None else size,
        strict=strict,
    )


def cmd_calibrate(args) -> int:
    cfg, base = load_config(args.config)
    unknown = set(cfg) - CALIBRATE_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        scheme = build_scheme(cfg.get("scheme") or {})
        cal = calibrate_threshold(
            _grid(cfg.get("h_grid", {"from": 1, "to": 10, "by": 0.5})),
            float(cfg.get("target", 0.1)),
            int(cfg["horizon"]),
            cfg.get("method", "markov"),
            scheme,
            M_states=int(cfg.get("M_states", 128)),
            n_sims=int(cfg.get("n_sims", 10_000)),
            seed=args.seed,
            jobs=args.jobs,
        )
    except KeyError as exc:
        raise ConfigError(f"missing calibration setting {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    rows = []
    for i, h in enumerate(cal.h_grid):
        rows.append(
            (
                csvio.fmt_num(h),
                "" if cal.prob_markov is None else csvio.fmt_num(cal.prob_markov[i]),
                "" if cal.prob_mc is None else csvio.fmt_num(cal.prob_mc[i]),
                "" if cal.mc_se is None else csvio.fmt_num(cal.mc_se[i]),
            )
        )
    csvio.write_csv(_path(base, cfg.get("output", "calibration.csv")), csvio.CALIBRATION_HEADER, rows)
    if not cal.met:
        log.warning("no threshold in the grid meets target %g; largest h reported", cal.target_prob)
    print(f"h*={csvio.fmt_num(cal.h_star)}{'' if cal.met else ' (target not met)'}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = csvio.read_results_csv(args.results)
    sys.stdout.write(render_report(records, args.format))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stsdetect", description="Outbreak detection for count time series.")
    p.add_argument("--seed", type=int, default=0, help="seed for Monte Carlo calibration (default 0)")
    p.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="run a detector over the series in a config")
    d.add_argument("--config", required=True)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--fail-on-alarm", action="store_true")
    d.set_defaults(func=cmd_detect)

    c = sub.add_parser("calibrate", help="false-alarm probability over a threshold grid")
    c.add_argument("--config", required=True)
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("report", help="render a results CSV as an alarm table")
    r.add_argument("--results", required=True)
    r.add_argument("--format", choices=("latex", "text"), default="text")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    if args.seed < 0 or args.seed >= 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as runtime failure
        log.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
