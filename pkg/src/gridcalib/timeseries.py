"""In-memory metric store for counter and gauge series.

Counters hold cumulative joules and never decrease; gauges hold
instantaneous watts. A rate over a window is the endpoint difference
quotient in watts, with the boundary values obtained by linear
interpolation between the two nearest samples.

Concurrency: one writer per series, any number of readers. Values are
appended before timestamps and readers snapshot the timestamp count
first, so a concurrent append is never half-visible.
"""

from __future__ import annotations

import csv
import math
import re
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, NamedTuple

from .errors import (
    BadInterval,
    CounterRegression,
    EmptyWindow,
    KindMismatch,
    NonMonotonicTimestamp,
    ParseError,
    UnknownMetric,
)

COUNTER = "counter"
GAUGE = "gauge"

# Canonical smoothing window for monitoring-style rates.
DEFAULT_WINDOW_MS = 2000


class Sample(NamedTuple):
    timestamp_ms: int
    value: float


def _check_sample(timestamp_ms: int, value: float) -> tuple[int, float]:
    ts = int(timestamp_ms)
    val = float(value)
    if ts < 0:
        raise ValueError(f"timestamp must be >= 0, got {ts}")
    if not math.isfinite(val):
        raise ValueError(f"sample value must be finite, got {val!r}")
    return ts, val


class Series:
    """One metric stream with a fixed name, label set, and kind.

    max_samples turns the series into a ring buffer (oldest samples are
    evicted). Eviction shifts indices, so the cap should only be used
    when no reader races the writer.
    """

    def __init__(
        self,
        name: str,
        labels: Mapping[str, str] | None = None,
        kind: str = GAUGE,
        max_samples: int | None = None,
    ):
        if kind not in (COUNTER, GAUGE):
            raise KindMismatch(f"unknown series kind {kind!r}")
        if max_samples is not None and max_samples < 1:
            raise ValueError("max_samples must be >= 1")
        self.name = str(name)
        self.labels = dict(labels or {})
        self.kind = kind
        self._max_samples = max_samples
        self._ts: list[int] = []
        self._values: list[float] = []

    def __len__(self) -> int:
        return len(self._ts)

    def __repr__(self) -> str:
        return f"Series({self.name!r}, {self.labels!r}, {self.kind}, n={len(self)})"

    def append(self, sample: Sample | tuple[int, float]) -> None:
        ts, val = _check_sample(*sample)
        n = len(self._ts)
        if n and ts <= self._ts[n - 1]:
            raise NonMonotonicTimestamp(
                f"{self.name}: timestamp {ts} does not advance past {self._ts[n - 1]}"
            )
        if self.kind == COUNTER and n and val < self._values[n - 1]:
            raise CounterRegression(
                f"{self.name}: counter fell from {self._values[n - 1]} to {val}"
            )
        # Value first, timestamp last: readers key off len(_ts).
        self._values.append(val)
        self._ts.append(ts)
        if self._max_samples is not None and len(self._ts) > self._max_samples:
            del self._ts[0]
            del self._values[0]

    def samples(self) -> list[Sample]:
        n = len(self._ts)
        return [Sample(self._ts[i], self._values[i]) for i in range(n)]

    def last(self) -> Sample | None:
        n = len(self._ts)
        if n == 0:
            return None
        return Sample(self._ts[n - 1], self._values[n - 1])

    def first_timestamp(self) -> int | None:
        return self._ts[0] if self._ts else None

    def last_timestamp(self) -> int | None:
        n = len(self._ts)
        return self._ts[n - 1] if n else None

    def value_at(self, t_ms: int) -> float:
        """Series value at t_ms, linearly interpolated between neighbors.

        Defined only inside the sampled range; raises EmptyWindow outside.
        """
        n = len(self._ts)
        if n == 0 or t_ms < self._ts[0] or t_ms > self._ts[n - 1]:
            raise EmptyWindow(f"{self.name}: no samples cover t={t_ms}")
        i = bisect_left(self._ts, t_ms, 0, n)
        if self._ts[i] == t_ms:
            return self._values[i]
        t0, t1 = self._ts[i - 1], self._ts[i]
        v0, v1 = self._values[i - 1], self._values[i]
        return v0 + (v1 - v0) * (t_ms - t0) / (t1 - t0)


def rate(series: Series, t1_ms: int, t2_ms: int) -> float:
    """Average power in watts over [t1, t2] from a joules counter.

    Both endpoints must lie inside the sampled range (values at the
    boundaries are interpolated between the two nearest samples).
    """
    if t2_ms <= t1_ms:
        raise BadInterval(f"rate window [{t1_ms}, {t2_ms}] is empty or inverted")
    if series.kind != COUNTER:
        raise KindMismatch(f"{series.name}: rate() needs a counter, got {series.kind}")
    v1 = series.value_at(t1_ms)
    v2 = series.value_at(t2_ms)
    return (v2 - v1) / ((t2_ms - t1_ms) / 1000.0)


def moving_average_rate(series: Series, window_ms: int, now_ms: int) -> float:
    """rate() over the window ending at now_ms."""
    if window_ms <= 0:
        raise BadInterval(f"window must be positive, got {window_ms}")
    return rate(series, now_ms - window_ms, now_ms)


_NAME_RE = r"[A-Za-z_][A-Za-z0-9_]*"
_QUERY_RE = re.compile(
    rf"""^\s*
    (?P<sum>sum\s*\(\s*)?
    rate\s*\(\s*
    (?P<name>{_NAME_RE})\s*
    (?:\{{(?P<labels>[^{{}}]*)\}}\s*)?
    \[\s*(?P<window>\d+)\s*s\s*\]\s*
    \)\s*
    (?P<close>\)\s*)?
    $""",
    re.VERBOSE,
)
_MATCHER_RE = re.compile(rf'\s*({_NAME_RE})\s*=\s*"([^"]*)"\s*')


@dataclass(frozen=True)
class QueryExpr:
    metric: str
    labels: tuple[tuple[str, str], ...]
    window_ms: int
    summed: bool

    def label_map(self) -> dict[str, str]:
        return dict(self.labels)


def _parse_labels(body: str) -> tuple[tuple[str, str], ...]:
    out: dict[str, str] = {}
    pos = 0
    first = True
    while pos < len(body):
        if not first:
            if body[pos] != ",":
                raise ParseError(f"expected ',' in label matchers at offset {pos}")
            pos += 1
        m = _MATCHER_RE.match(body, pos)
        if m is None or m.start() != pos:
            raise ParseError(f"bad label matcher near {body[pos:pos + 20]!r}")
        key = m.group(1)
        if key in out:
            raise ParseError(f"duplicate label key {key!r}")
        out[key] = m.group(2)
        pos = m.end()
        first = False
    return tuple(out.items())


def parse_query(text: str) -> QueryExpr:
    """Parse ``sum(rate(NAME{K="V",...}[Ns]))``; the outer sum is optional."""
    if not isinstance(text, str):
        raise ParseError(f"query must be a string, got {type(text).__name__}")
    m = _QUERY_RE.match(text)
    if m is None:
        raise ParseError(f"malformed query: {text!r}")
    if (m.group("sum") is None) != (m.group("close") is None):
        raise ParseError(f"unbalanced parentheses in query: {text!r}")
    window_s = int(m.group("window"))
    if window_s <= 0:
        raise ParseError("rate window must be a positive number of seconds")
    labels = _parse_labels(m.group("labels") or "")
    return QueryExpr(
        metric=m.group("name"),
        labels=labels,
        window_ms=window_s * 1000,
        summed=m.group("sum") is not None,
    )


class MetricStore:
    """Keyed collection of series; the key is (name, full label set)."""

    def __init__(self, max_samples_per_series: int | None = None):
        self._series: dict[tuple[str, tuple[tuple[str, str], ...]], Series] = {}
        self._max_samples = max_samples_per_series
        self._lock = threading.Lock()

    @staticmethod
    def _key(name: str, labels: Mapping[str, str] | None):
        return (name, tuple(sorted((labels or {}).items())))

    def get_or_create(
        self, name: str, labels: Mapping[str, str] | None = None, kind: str = GAUGE
    ) -> Series:
        key = self._key(name, labels)
        series = self._series.get(key)
        if series is None:
            with self._lock:
                series = self._series.get(key)
                if series is None:
                    series = Series(name, labels, kind, self._max_samples)
                    self._series[key] = series
        if series.kind != kind:
            raise KindMismatch(
                f"{name}: series is a {series.kind}, appended as {kind}"
            )
        return series

    def append(
        self,
        name: str,
        labels: Mapping[str, str] | None,
        kind: str,
        sample: Sample | tuple[int, float],
    ) -> None:
        self.get_or_create(name, labels, kind).append(sample)

    def get(self, name: str, labels: Mapping[str, str] | None = None) -> Series | None:
        return self._series.get(self._key(name, labels))

    def series(self) -> list[Series]:
        return [self._series[k] for k in sorted(self._series)]

    def has_metric(self, name: str) -> bool:
        return any(k[0] == name for k in self._series)

    def match(self, name: str, labels: Mapping[str, str] | None = None) -> list[Series]:
        """All series with this name whose labels contain every filter pair."""
        filters = (labels or {}).items()
        return [
            self._series[k]
            for k in sorted(self._series)
            if k[0] == name
            and all(self._series[k].labels.get(fk) == fv for fk, fv in filters)
        ]

    def latest(self, name: str, labels: Mapping[str, str] | None = None) -> float | None:
        series = self.get(name, labels)
        if series is None:
            return None
        last = series.last()
        return None if last is None else last.value

    def current_time_ms(self) -> int:
        """Largest sample timestamp seen across all series (0 when empty)."""
        latest = 0
        for series in self._series.values():
            ts = series.last_timestamp()
            if ts is not None and ts > latest:
                latest = ts
        return latest


def query(
    store: MetricStore,
    expr: QueryExpr | str,
    at_ms: int | None = None,
    strict: bool = False,
) -> float:
    """Evaluate a rate query as of at_ms (default: the store's current time).

    Matching series whose samples do not cover the window contribute 0.0,
    and a selector matching nothing sums to 0.0. In strict mode an unknown
    metric name raises UnknownMetric instead.
    """
    if isinstance(expr, str):
        expr = parse_query(expr)
    if strict and not store.has_metric(expr.metric):
        raise UnknownMetric(f"no series named {expr.metric!r}")
    now = store.current_time_ms() if at_ms is None else int(at_ms)
    total = 0.0
    for series in store.match(expr.metric, expr.label_map()):
        try:
            total += rate(series, now - expr.window_ms, now)
        except EmptyWindow:
            continue
    return total


def export_csv(series: Series, out: IO[str]) -> None:
    """Write one series as RFC 4180 CSV with header ``timestamp_ms,value``."""
    writer = csv.writer(out)
    writer.writerow(["timestamp_ms", "value"])
    for ts, val in series.samples():
        writer.writerow([ts, repr(val)])


def merge_label_sets(series_list: Iterable[Series]) -> list[str]:
    """Sorted union of label keys, handy for table-style exports."""
    keys: set[str] = set()
    for s in series_list:
        keys.update(s.labels)
    return sorted(keys)
