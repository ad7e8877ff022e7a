"""Surveillance time series data model.

An :class:`StsFrame` holds an ``n x m`` matrix of counts (``n`` timepoints,
``m`` units) together with the time axis and the parallel matrices filled
in by the detectors (``alarm`` and ``upperbound``).  Frames are immutable;
every operation returns a new frame.

Row indices are 0-based throughout the library.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

EPOCH_ORIGIN = _dt.date(1970, 1, 1)


def date_to_days(d: _dt.date) -> int:
    return (d - EPOCH_ORIGIN).days


def days_to_date(days: int) -> _dt.date:
    return EPOCH_ORIGIN + _dt.timedelta(days=int(days))


def iso_week_year(d) -> tuple[int, int]:
    """ISO-8601 week-numbering (year, week) of a date.

    Accepts a ``datetime.date``, an ISO string or an integer number of
    days since 1970-01-01.
    """
    if isinstance(d, str):
        d = _dt.date.fromisoformat(d)
    elif isinstance(d, (int, np.integer)):
        d = days_to_date(int(d))
    iso = d.isocalendar()
    return int(iso[0]), int(iso[1])


def _weeks_in_iso_year(year: int) -> int:
    return _dt.date(year, 12, 28).isocalendar()[1]


def _as_matrix(x, n: int, m: int, name: str, dtype) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.shape != (n, m):
        raise ValueError(f"{name} has shape {a.shape}, expected {(n, m)}")
    return a


@dataclass(frozen=True, eq=False)
class StsFrame:
    """Multivariate surveillance time series.

    ``epoch`` holds integer day numbers (days since 1970-01-01) when
    ``epoch_as_date`` is true, otherwise 1-based time indices.
    """

    observed: np.ndarray
    epoch: np.ndarray
    freq: int
    start: tuple[int, int]
    population: np.ndarray
    state: np.ndarray
    epoch_as_date: bool = False
    alarm: np.ndarray | None = None
    upperbound: np.ndarray | None = None
    multinomial_mode: bool = False
    unit_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.observed.shape[0]

    @property
    def m(self) -> int:
        return self.observed.shape[1]

    def dates(self) -> list[_dt.date]:
        if not self.epoch_as_date:
            raise ValueError("series is indexed by time index, not by date")
        return [days_to_date(e) for e in self.epoch]

    def epoch_labels(self) -> list[str]:
        """Row labels: ISO dates for dated series, indices otherwise."""
        if self.epoch_as_date:
            return [d.isoformat() for d in self.dates()]
        return [str(int(e)) for e in self.epoch]

    def year_and_epoch(self) -> list[tuple[int, int]]:
        """(year, epoch-within-year) of every row."""
        if self.epoch_as_date and self.freq == 52:
            return [iso_week_year(int(e)) for e in self.epoch]
        if self.epoch_as_date and self.freq == 12:
            return [(d.year, d.month) for d in self.dates()]
        if self.epoch_as_date and self.freq == 365:
            return [(d.year, d.timetuple().tm_yday) for d in self.dates()]
        y0, e0 = self.start
        out = []
        for i in range(self.n):
            k = e0 - 1 + i
            out.append((y0 + k // self.freq, k % self.freq + 1))
        return out

    def epoch_in_period(self) -> np.ndarray:
        """Fractional position of each row within its year, in (0, 1].

        Weekly dated series divide by the number of weeks of the ISO year,
        so week 53 maps to 1.
        """
        ye = self.year_and_epoch()
        if self.epoch_as_date and self.freq == 52:
            return np.array([w / _weeks_in_iso_year(y) for y, w in ye])
        return np.array([e / self.freq for _, e in ye])

    def unit_index(self, unit) -> int:
        if isinstance(unit, (int, np.integer)):
            if not 0 <= unit < self.m:
                raise IndexError(f"unit index {unit} out of range 0..{self.m - 1}")
            return int(unit)
        try:
            return self.unit_names.index(unit)
        except ValueError:
            raise KeyError(f"unknown unit {unit!r}") from None

    def univariate(self, unit) -> "StsFrame":
        return subset(self, units=[unit])

    def with_results(self, alarm: np.ndarray, upperbound: np.ndarray) -> "StsFrame":
        return replace(
            self,
            alarm=_as_matrix(alarm, self.n, self.m, "alarm", bool),
            upperbound=_as_matrix(upperbound, self.n, self.m, "upperbound", float),
        )


def _check_epochs(epoch: np.ndarray, freq: int, as_date: bool) -> None:
    if epoch.size > 1 and np.any(np.diff(epoch) <= 0):
        raise ValueError("epochs must be strictly increasing")
    if not as_date or epoch.size < 2:
        return
    gaps = np.diff(epoch)
    if freq == 52:
        bad = np.flatnonzero(gaps != 7)
    elif freq == 365:
        bad = np.flatnonzero(gaps != 1)
    elif freq == 12:
        dates = [days_to_date(e) for e in epoch]
        months = np.array([d.year * 12 + d.month for d in dates])
        bad = np.flatnonzero(np.diff(months) != 1)
    else:
        step = 365.25 / freq
        bad = np.flatnonzero(np.abs(gaps - step) > 1.0)
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"dates {days_to_date(epoch[i])} and {days_to_date(epoch[i + 1])} "
            f"are not consecutive at freq={freq}"
        )


def new_sts(
    observed,
    epoch=None,
    freq: int = 52,
    start: tuple[int, int] = (2000, 1),
    population=None,
    state=None,
    multinomial_mode: bool = False,
    unit_names: Sequence[str] | None = None,
) -> StsFrame:
    """Build and validate an :class:`StsFrame`.

    ``epoch`` may be a sequence of dates (``datetime.date`` or ISO strings),
    or ``None`` for an index-based series ``1..n``.  In multinomial mode
    ``population`` carries the per-row totals and every row of ``observed``
    must sum to its total.
    """
    obs = np.asarray(observed)
    if obs.ndim == 1:
        obs = obs.reshape(-1, 1)
    if obs.ndim != 2:
        raise ValueError("observed must be a vector or a matrix")
    if not np.all(np.isfinite(obs.astype(float))):
        raise ValueError("observed contains missing or non-finite values")
    if np.any(obs != np.round(obs)):
        raise ValueError("observed must contain integer counts")
    obs = obs.astype(np.int64)
    if np.any(obs < 0):
        r, c = np.argwhere(obs < 0)[0]
        raise ValueError(f"negative count at row {r}, column {c}")
    n, m = obs.shape

    if epoch is None:
        ep = np.arange(1, n + 1, dtype=np.int64)
        as_date = False
    else:
        ep_list = list(epoch)
        if len(ep_list) != n:
            raise ValueError(f"epoch has length {len(ep_list)}, expected {n}")
        if ep_list and isinstance(ep_list[0], (str, _dt.date)):
            ep = np.array(
                [date_to_days(_dt.date.fromisoformat(e) if isinstance(e, str) else e) for e in ep_list],
                dtype=np.int64,
            )
            as_date = True
        else:
            ep = np.asarray(ep_list, dtype=np.int64)
            as_date = False
    _check_epochs(ep, freq, as_date)

    if population is None:
        if multinomial_mode:
            pop = np.repeat(obs.sum(axis=1, keepdims=True).astype(float), m, axis=1)
        else:
            pop = np.ones((n, m))
    else:
        pop = np.asarray(population, dtype=float)
        if multinomial_mode and pop.ndim == 1:
            pop = np.repeat(pop.reshape(-1, 1), m, axis=1)
        pop = _as_matrix(pop, n, m, "population", float)
    if not np.all(np.isfinite(pop)) or np.any(pop < 0):
        raise ValueError("population must be finite and nonnegative")
    if multinomial_mode:
        totals = pop[:, 0]
        if np.any(pop != totals[:, None]):
            raise ValueError("multinomial totals must be identical across columns")
        bad = np.flatnonzero(obs.sum(axis=1) != totals)
        if bad.size:
            i = int(bad[0])
            raise ValueError(
                f"row {i}: category counts sum to {obs[i].sum()}, total is {totals[i]:g}"
            )
    elif np.any(pop == 0):
        r, c = np.argwhere(pop == 0)[0]
        raise ValueError(f"zero population at row {r}, column {c}")

    st = np.zeros((n, m), dtype=bool) if state is None else _as_matrix(state, n, m, "state", bool)

    if unit_names is None:
        names = tuple(f"unit{j + 1}" for j in range(m))
    else:
        names = tuple(str(u) for u in unit_names)
        if len(names) != m:
            raise ValueError(f"{len(names)} unit names for {m} columns")
        if len(set(names)) != m:
            raise ValueError("unit names must be unique")

    return StsFrame(
        observed=obs,
        epoch=ep,
        freq=int(freq),
        start=(int(start[0]), int(start[1])),
        population=pop,
        state=st,
        epoch_as_date=as_date,
        multinomial_mode=bool(multinomial_mode),
        unit_names=names,
    )


def _row_selection(sts: StsFrame, rows) -> np.ndarray:
    if rows is None:
        return np.arange(sts.n)
    if isinstance(rows, slice):
        return np.arange(sts.n)[rows]
    idx = np.asarray(rows)
    if idx.dtype == bool:
        if idx.shape != (sts.n,):
            raise IndexError("boolean row mask has wrong length")
        return np.flatnonzero(idx)
    idx = idx.astype(np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= sts.n):
        raise IndexError(f"row selection out of range 0..{sts.n - 1}")
    return idx


def subset(sts: StsFrame, rows=None, units=None) -> StsFrame:
    """Slice rows (indices, slice or boolean mask) and units (indices or names)."""
    ri = _row_selection(sts, rows)
    if units is None:
        ci = np.arange(sts.m)
    else:
        if isinstance(units, (str, int, np.integer)):
            units = [units]
        ci = np.array([sts.unit_index(u) for u in units], dtype=np.int64)
    if ri.size and np.any(np.diff(ri) <= 0):
        raise IndexError("row selection must be strictly increasing")

    def take(a):
        return None if a is None else a[np.ix_(ri, ci)]

    start = sts.start
    if ri.size:
        start = sts.year_and_epoch()[int(ri[0])]
    return replace(
        sts,
        observed=take(sts.observed),
        epoch=sts.epoch[ri],
        start=start,
        population=take(sts.population),
        state=take(sts.state),
        alarm=take(sts.alarm),
        upperbound=take(sts.upperbound),
        unit_names=tuple(sts.unit_names[j] for j in ci),
    )


def aggregate(sts: StsFrame, by: str = "unit") -> StsFrame:
    """Sum over units (``by="unit"``, n x 1) or over time (``by="time"``, 1 x m)."""
    if by == "unit":
        any_alarm = None if sts.alarm is None else sts.alarm.any(axis=1, keepdims=True)
        return replace(
            sts,
            observed=sts.observed.sum(axis=1, keepdims=True),
            population=sts.population.sum(axis=1, keepdims=True),
            state=sts.state.any(axis=1, keepdims=True),
            alarm=any_alarm,
            upperbound=None,
            multinomial_mode=False,
            unit_names=("overall",),
        )
    if by == "time":
        any_alarm = None if sts.alarm is None else sts.alarm.any(axis=0, keepdims=True)
        return replace(
            sts,
            observed=sts.observed.sum(axis=0, keepdims=True),
            epoch=sts.epoch[:1],
            population=sts.population.sum(axis=0, keepdims=True),
            state=sts.state.any(axis=0, keepdims=True),
            alarm=any_alarm,
            upperbound=None,
        )
    raise ValueError(f"by must be 'unit' or 'time', got {by!r}")


@dataclass(frozen=True)
class MonitoringRange:
    """Ordered, 0-based row indices to monitor."""

    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValueError("monitoring range is empty")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("monitoring range must be strictly increasing")
        if self.indices[0] < 0:
            raise ValueError("monitoring range has negative indices")

    @classmethod
    def of(cls, indices, n: int | None = None) -> "MonitoringRange":
        if isinstance(indices, MonitoringRange):
            r = indices
        else:
            r = cls(tuple(int(i) for i in np.asarray(indices).ravel()))
        if n is not None and r.indices[-1] >= n:
            raise IndexError(f"monitoring range exceeds series length {n}")
        return r

    @classmethod
    def last(cls, k: int, n: int) -> "MonitoringRange":
        if not 0 < k <= n:
            raise ValueError(f"cannot monitor the last {k} of {n} timepoints")
        return cls(tuple(range(n - k, n)))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


def phase_split(sts: StsFrame, rng: MonitoringRange) -> tuple[np.ndarray, np.ndarray]:
    """Phase 1 (all rows before the range) and phase 2 (the range)."""
    first = rng.indices[0]
    return np.arange(first), rng.array


@dataclass
class SurveillanceResult:
    """Output of a detector on one series.

    ``sts`` is restricted to the monitored rows with ``alarm`` and
    ``upperbound`` filled; ``score`` is the detector statistic per row.
    """

    sts: StsFrame
    score: np.ndarray
    control: dict[str, Any]
    notes: dict[int, str] = field(default_factory=dict)
    trace: Any = None

    @property
    def alarm(self) -> np.ndarray:
        return self.sts.alarm[:, 0]

    @property
    def upperbound(self) -> np.ndarray:
        return self.sts.upperbound[:, 0]
