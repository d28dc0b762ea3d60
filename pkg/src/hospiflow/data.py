"""Case and occupancy file ingestion, scenario assembly, synthetic scenarios.

File formats (UTF-8 CSV, ISO-8601 dates, exact headers, ``#`` lines ignored):

* cases: ``date,age,gender,region``. ``date`` is the day a case enters the
  simulation as an infection. ``gender`` is ``male``/``female`` (``m``/``f``
  accepted). Ages must lie in [0, 120].
* field: ``date,bed,icu,vent`` with nonnegative integer counts, one row per
  day and no gaps.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .des import ArrivalSchedule, OccupancyTrace, simulate
from .errors import ConfigError, DataError
from .params import StateGraph, as_vector, canonical_graph
from .stochastic import SeedSpec, stream

log = logging.getLogger(__name__)

CASE_HEADER = ["date", "age", "gender", "region"]
FIELD_HEADER = ["date", "bed", "icu", "vent"]
DEFAULT_WARMUP_DAYS = 28
_GENDERS = {"male": "male", "m": "male", "female": "female", "f": "female"}


@dataclass(frozen=True)
class CaseRecord:
    date: date
    age: float
    gender: str
    region: str


@dataclass(frozen=True)
class FieldRecord:
    date: date
    bed: int
    icu: int
    vent: int


@dataclass(frozen=True)
class RowIssue:
    line: int | None
    field: str | None
    reason: str
    severity: str = "error"

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "series"
        col = f" [{self.field}]" if self.field else ""
        return f"{self.severity}: {where}{col}: {self.reason}"


@dataclass
class Parsed:
    """Parsed records plus everything that was wrong with the input."""

    records: list
    issues: list[RowIssue] = field(default_factory=list)
    rows: int = 0

    @property
    def errors(self) -> list[RowIssue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[RowIssue]:
        return [i for i in self.issues if i.severity == "warning"]


def _read_rows(source, header: list[str]) -> list[tuple[int, list[str]]]:
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {source}: {exc.strerror}") from None
    else:
        text = source.read()
    rows = []
    for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or (row[0].startswith("#")):
            continue
        rows.append((line_no, [c.strip() for c in row]))
    if not rows or rows[0][1] != header:
        raise DataError(f"missing header: expected {','.join(header)}")
    return rows[1:]


def _parse_date(s: str) -> date:
    return date.fromisoformat(s)


def parse_cases(source: str | Path | IO[str], strict: bool = True) -> Parsed:
    """Parse a case file.

    In strict mode any bad row raises :class:`DataError` listing every problem.
    In lenient mode bad rows are dropped and reported as warnings.
    """
    rows = _read_rows(source, CASE_HEADER)
    out = Parsed([], rows=len(rows))
    severity = "error" if strict else "warning"
    for line, row in rows:
        if len(row) != len(CASE_HEADER):
            out.issues.append(RowIssue(line, None, f"expected 4 fields, got {len(row)}", severity))
            continue
        d, age, gender, region = row
        problems = []
        try:
            day = _parse_date(d)
        except ValueError:
            problems.append(RowIssue(line, "date", "unparsable date", severity))
        try:
            years = float(age)
            if not 0 <= years <= 120:
                problems.append(RowIssue(line, "age", f"age {age} out of range [0, 120]", severity))
        except ValueError:
            problems.append(RowIssue(line, "age", "unparsable age", severity))
        g = _GENDERS.get(gender.lower())
        if g is None:
            problems.append(RowIssue(line, "gender", f"unknown gender token {gender!r}", severity))
        if problems:
            out.issues.extend(problems)
            continue
        out.records.append(CaseRecord(day, years, g, region))
    if strict and out.errors:
        raise DataError(f"{len(out.errors)} bad case row(s)", out.errors)
    for w in out.warnings:
        log.warning("cases: %s", w)
    return out


def parse_field(source: str | Path | IO[str], strict: bool = True) -> Parsed:
    """Parse an occupancy file into a date-sorted contiguous series."""
    rows = _read_rows(source, FIELD_HEADER)
    out = Parsed([], rows=len(rows))
    severity = "error" if strict else "warning"
    seen: dict[date, int] = {}
    for line, row in rows:
        if len(row) != len(FIELD_HEADER):
            out.issues.append(RowIssue(line, None, f"expected 4 fields, got {len(row)}", severity))
            continue
        try:
            day = _parse_date(row[0])
        except ValueError:
            out.issues.append(RowIssue(line, "date", "unparsable date", severity))
            continue
        counts, bad = [], False
        for name, value in zip(FIELD_HEADER[1:], row[1:]):
            try:
                v = int(value)
            except ValueError:
                out.issues.append(RowIssue(line, name, f"not an integer: {value!r}", severity))
                bad = True
                continue
            if v < 0:
                out.issues.append(RowIssue(line, name, f"negative count {v}", severity))
                bad = True
            counts.append(v)
        if bad:
            continue
        if day in seen:
            out.issues.append(RowIssue(line, "date", f"duplicate date {day} (first at line {seen[day]})", severity))
            continue
        seen[day] = line
        out.records.append(FieldRecord(day, *counts))

    dates = [r.date for r in out.records]
    if dates != sorted(dates):
        out.issues.append(RowIssue(None, "date", "input not sorted by date; sorted on read", "warning"))
        out.records.sort(key=lambda r: r.date)
    for prev, nxt in zip(out.records, out.records[1:]):
        missing = prev.date + timedelta(days=1)
        while missing < nxt.date:
            out.issues.append(RowIssue(None, "date", f"gap at {missing.isoformat()}", severity))
            missing += timedelta(days=1)
    if strict and out.errors:
        raise DataError(f"{len(out.errors)} field data error(s)", out.errors)
    for w in out.warnings:
        log.warning("field: %s", w)
    return out


def cases_to_csv(records: Sequence[CaseRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CASE_HEADER)
    for r in records:
        age = int(r.age) if float(r.age).is_integer() else repr(float(r.age))
        w.writerow([r.date.isoformat(), age, r.gender, r.region])
    return buf.getvalue()


def field_to_csv(records: Sequence[FieldRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_HEADER)
    for r in records:
        w.writerow([r.date.isoformat(), r.bed, r.icu, r.vent])
    return buf.getvalue()


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Arrivals indexed from ``start_date`` (day 0) plus field data for the evaluation window."""

    arrivals: ArrivalSchedule
    field: tuple[FieldRecord, ...]
    warmup_days: int
    eval_window: tuple[date, date]
    start_date: date
    x_true: np.ndarray | None = None

    @property
    def eval_days(self) -> tuple[int, int]:
        """Evaluation window as inclusive simulation day indices."""
        a, b = self.eval_window
        return (a - self.start_date).days, (b - self.start_date).days

    @property
    def horizon(self) -> int:
        return self.arrivals.horizon

    def field_trace(self) -> OccupancyTrace:
        counts = np.array([[r.bed, r.icu, r.vent] for r in self.field], dtype=np.int64).reshape(-1, 3)
        return OccupancyTrace(counts, self.eval_days[0])


def build_scenario(
    cases: Sequence[CaseRecord],
    field: Sequence[FieldRecord],
    region: str | None,
    case_start: date,
    case_end: date,
    field_start: date,
    field_end: date,
    warmup_days: int = DEFAULT_WARMUP_DAYS,
) -> Scenario:
    if case_start > case_end or field_start > field_end:
        raise ConfigError("inverted window")
    if field_start < case_start + timedelta(days=warmup_days):
        raise ConfigError(f"field window must start at least {warmup_days} days after the case window")
    if field_end > case_end:
        raise ConfigError("evaluation window extends beyond the simulated horizon")

    def wanted(c: CaseRecord) -> bool:
        return region in (None, "", "*") or c.region.lower() == region.lower()

    selected = [c for c in cases if wanted(c)]
    if not selected:
        raise DataError("empty region selection")
    selected = [c for c in selected if case_start <= c.date <= case_end]
    selected.sort(key=lambda c: c.date)  # stable: ties keep file order

    horizon = (case_end - case_start).days + 1
    arrivals = ArrivalSchedule(
        horizon,
        np.array([(c.date - case_start).days for c in selected], dtype=np.int64),
        np.array([c.age for c in selected], dtype=float),
        np.array([c.gender == "male" for c in selected], dtype=bool),
    )
    by_date = {r.date: r for r in field}
    window, missing = [], []
    d = field_start
    while d <= field_end:
        if d in by_date:
            window.append(by_date[d])
        else:
            missing.append(d.isoformat())
        d += timedelta(days=1)
    if missing:
        raise DataError(f"field data missing for {len(missing)} day(s): {', '.join(missing[:5])}")
    return Scenario(arrivals, tuple(window), (field_start - case_start).days, (field_start, field_end), case_start)


@dataclass(frozen=True)
class ArrivalSpec:
    """Recipe for synthetic arrivals: cases per day and the demographic mix."""

    per_day: tuple[int, ...]
    age_range: tuple[int, int] = (20, 90)
    male_fraction: float = 0.5
    warmup_days: int = DEFAULT_WARMUP_DAYS
    start_date: date = date(2020, 10, 12)
    region: str = "synthetic"

    @classmethod
    def constant(cls, cases_per_day: int, days: int, **kw) -> "ArrivalSpec":
        return cls(tuple([cases_per_day] * days), **kw)


def synthetic_arrivals(spec: ArrivalSpec, seed: int) -> ArrivalSchedule:
    rng = stream(seed, "synthetic-arrivals")
    day = np.repeat(np.arange(len(spec.per_day)), spec.per_day).astype(np.int64)
    lo, hi = spec.age_range
    age = rng.integers(lo, hi + 1, size=len(day)).astype(float)
    male = rng.random(len(day)) < spec.male_fraction
    return ArrivalSchedule(len(spec.per_day), day, age, male)


def generate_synthetic(
    x_true,
    spec: ArrivalSpec,
    seed: int,
    graph: StateGraph | None = None,
) -> Scenario:
    """A scenario whose field data is one simulator run under ``x_true``."""
    x_true = as_vector(x_true).copy()
    graph = graph or canonical_graph()
    if spec.warmup_days >= len(spec.per_day):
        raise ConfigError("warm-up must be shorter than the simulated horizon")
    arrivals = synthetic_arrivals(spec, seed)
    trace = simulate(arrivals, x_true, graph, SeedSpec(seed, "synthetic-field"))
    t0, t1 = spec.warmup_days, len(spec.per_day) - 1
    field = tuple(
        FieldRecord(spec.start_date + timedelta(days=t), *(int(v) for v in trace.counts[t]))
        for t in range(t0, t1 + 1)
    )
    window = (spec.start_date + timedelta(days=t0), spec.start_date + timedelta(days=t1))
    return Scenario(arrivals, field, spec.warmup_days, window, spec.start_date, x_true)


def scenario_cases(scenario: Scenario, region: str = "synthetic") -> list[CaseRecord]:
    """Case records reproducing a scenario's arrivals (for writing fixtures)."""
    a = scenario.arrivals
    return [
        CaseRecord(scenario.start_date + timedelta(days=int(d)), float(age), "male" if m else "female", region)
        for d, age, m in zip(a.day, a.age, a.male)
    ]
