"""Meter-anchored calibration of approximated per-process power.

The approximation layer splits node power into per-process dynamic and
idle estimates; a socket meter measures what the node actually draws.
Calibration rescales the estimates so they sum to the measurement:
idle estimates are scaled by the measured idle draw, and dynamic
estimates by an approximation factor that also reassigns dynamic power
wrongly attributed to system processes back to the workloads that
caused it.

All math lives in pure functions; NamespacePowerActor composes them
over live query signals so a microgrid can treat one namespace's
calibrated draw as a consumer actor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import fmean
from typing import Mapping

from .errors import DegenerateDenominator, StaleSignal, ZeroNodeIdle
from .signals import Clock, Signal, make_query_signal
from .timeseries import MetricStore
from .wire import (
    METER_GAUGE_METRIC,
    MODE_DYNAMIC,
    MODE_LABEL,
    NAMESPACE_LABEL,
    POWER_COUNTER_METRIC,
    SYSTEM_NAMESPACE,
)

# denominator guard: approximated system power this close to the node total
# means calibration is undefined, not merely large
DENOMINATOR_GUARD_W = 1e-6

# relative slack for the p_dyn <= n_dyn and s_dyn <= n_dyn input checks
CONSISTENCY_TOLERANCE = 1e-6

DEFAULT_QUERY_WINDOW_MS = 2000
DEFAULT_M_IDLE_WINDOW_MS = 30_000


def _checked(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{what} must be finite and non-negative, got {value!r}")
    return value


@dataclass(frozen=True)
class CalibrationInputs:
    """One coherent snapshot of every quantity calibration consumes.

    p_* refer to the observed process or namespace, n_* to the whole
    node, s_dyn to system processes, and m/m_idle to the meter.
    """

    p_dyn: float
    n_dyn: float
    s_dyn: float
    m: float
    m_idle: float
    p_idle: float = 0.0
    n_idle: float = 0.0

    def __post_init__(self):
        for name in ("p_dyn", "n_dyn", "s_dyn", "m", "m_idle", "p_idle", "n_idle"):
            object.__setattr__(self, name, _checked(getattr(self, name), name))
        slack = CONSISTENCY_TOLERANCE * self.n_dyn
        if self.p_dyn > self.n_dyn + slack:
            raise ValueError(
                f"p_dyn {self.p_dyn} exceeds n_dyn {self.n_dyn}: inconsistent inputs"
            )
        if self.s_dyn > self.n_dyn + slack:
            raise ValueError(
                f"s_dyn {self.s_dyn} exceeds n_dyn {self.n_dyn}: inconsistent inputs"
            )


@dataclass(frozen=True)
class CalibrationFactor:
    """Dimensionless scale applied to the measured dynamic budget."""

    a: float


def calibrate_idle(p_idle: float, n_idle: float, m_idle: float) -> float:
    """Scale a process's idle estimate by the measured idle draw."""
    if n_idle <= 0:
        raise ZeroNodeIdle(f"node idle estimate must be positive, got {n_idle}")
    return (p_idle / n_idle) * m_idle


def dynamic_factor(p_dyn: float, n_dyn: float, s_dyn: float) -> CalibrationFactor:
    """Fraction of the node's non-system dynamic power owned by the process.

    Equivalent to first handing each workload its proportional share of
    the system-process dynamic power and then dividing by the node total;
    the algebra collapses to p_dyn / (n_dyn - s_dyn).
    """
    denominator = n_dyn - s_dyn
    if denominator <= DENOMINATOR_GUARD_W:
        raise DegenerateDenominator(
            f"node dynamic {n_dyn} W minus system dynamic {s_dyn} W leaves "
            f"{denominator} W; calibration undefined"
        )
    return CalibrationFactor(p_dyn / denominator)


def calibrate_dynamic(
    a: CalibrationFactor | float, m: float, m_idle: float
) -> float:
    """Apply the factor to the measured dynamic budget, clamped at zero."""
    factor = a.a if isinstance(a, CalibrationFactor) else float(a)
    return factor * max(0.0, m - m_idle)


def _window_seconds(window_ms: int) -> int:
    seconds = window_ms // 1000
    if seconds < 1 or seconds * 1000 != window_ms:
        raise ValueError(f"query window must be a positive whole number of seconds, got {window_ms} ms")
    return seconds


def capture_idle_baseline(
    store: MetricStore,
    now_ms: int,
    mode: str = "averaged",
    window_ms: int = DEFAULT_M_IDLE_WINDOW_MS,
    metric: str = METER_GAUGE_METRIC,
    labels: Mapping[str, str] | None = None,
) -> float:
    """Read the meter's idle level from the store at construction time.

    "averaged" takes the mean of the gauge samples in the trailing
    window; "single" takes the latest sample. Returns 0.0 when the gauge
    has no samples yet.
    """
    if mode not in ("averaged", "single"):
        raise ValueError(f"unknown m_idle capture mode {mode!r}")
    series = store.get(metric, labels)
    if series is None:
        return 0.0
    samples = series.samples()
    if not samples:
        return 0.0
    if mode == "single":
        return samples[-1].value
    window = [s.value for s in samples if now_ms - window_ms <= s.timestamp_ms <= now_ms]
    if not window:
        return samples[-1].value
    return fmean(window)


class NamespacePowerActor:
    """Microgrid consumer reporting one namespace's calibrated dynamic draw.

    Three query signals feed the calibration inputs: the namespace's own
    dynamic rate, the node-wide dynamic rate, and the system-namespace
    dynamic rate, each over a trailing window of the power counter. The
    meter signal supplies the live measurement; the idle baseline is
    captured once, at construction, before workloads start.
    """

    def __init__(
        self,
        store: MetricStore,
        namespace: str,
        clock: Clock,
        meter_signal: Signal,
        *,
        actor_id: str | None = None,
        window_ms: int = DEFAULT_QUERY_WINDOW_MS,
        interval_ms: int | None = None,
        m_idle_capture: str = "averaged",
        m_idle_window_ms: int = DEFAULT_M_IDLE_WINDOW_MS,
        meter_metric: str = METER_GAUGE_METRIC,
        meter_labels: Mapping[str, str] | None = None,
        strict: bool = False,
    ):
        self.actor_id = actor_id if actor_id is not None else f"ns.{namespace}"
        self.namespace = namespace
        self.strict = strict
        self._meter = meter_signal
        window_s = _window_seconds(window_ms)

        def dynamic_query(extra: str = "") -> str:
            selector = f'{MODE_LABEL}="{MODE_DYNAMIC}"'
            if extra:
                selector = f"{extra}, {selector}"
            return f"sum(rate({POWER_COUNTER_METRIC}{{{selector}}}[{window_s}s]))"

        self._sig_p = make_query_signal(
            store, dynamic_query(f'{NAMESPACE_LABEL}="{namespace}"'), interval_ms, clock
        )
        self._sig_n = make_query_signal(store, dynamic_query(), interval_ms, clock)
        self._sig_s = make_query_signal(
            store,
            dynamic_query(f'{NAMESPACE_LABEL}="{SYSTEM_NAMESPACE}"'),
            interval_ms,
            clock,
        )
        self.m_idle_w = capture_idle_baseline(
            store,
            clock.now_ms(),
            mode=m_idle_capture,
            window_ms=m_idle_window_ms,
            metric=meter_metric,
            labels=meter_labels,
        )
        self._last_info: dict[str, float] = {
            "p_dyn_w": 0.0,
            "n_dyn_w": 0.0,
            "s_dyn_w": 0.0,
            "m_w": 0.0,
            "m_idle_w": self.m_idle_w,
            "factor_a": 0.0,
            "calibrated_w": 0.0,
        }

    def calibrated_dynamic_w(self) -> float:
        """Calibrated namespace dynamic power from the current signal snapshot."""
        # read every signal before any arithmetic so the snapshot is coherent
        p = self._sig_p.now()
        n = self._sig_n.now()
        s = self._sig_s.now()
        m = self._meter.now()
        if self.strict:
            for label, sig in (
                ("namespace dynamic", self._sig_p),
                ("node dynamic", self._sig_n),
                ("system dynamic", self._sig_s),
                ("meter", self._meter),
            ):
                if sig.last_collection_ms == 0:
                    raise StaleSignal(f"{label} signal has never collected")
        if p <= 0:
            # an idle namespace draws nothing; also sidesteps a degenerate
            # denominator while counters have not moved yet
            calibrated, factor = 0.0, 0.0
        else:
            factor = dynamic_factor(p, n, s).a
            calibrated = calibrate_dynamic(factor, m, self.m_idle_w)
        self._last_info = {
            "p_dyn_w": p,
            "n_dyn_w": n,
            "s_dyn_w": s,
            "m_w": m,
            "m_idle_w": self.m_idle_w,
            "factor_a": factor,
            "calibrated_w": calibrated,
        }
        return calibrated

    def power(self, time_ms: int | None = None) -> float:
        """Signed actor power: a consumer, so the calibrated draw negated."""
        return -self.calibrated_dynamic_w()

    def info(self) -> dict[str, float]:
        """Snapshot of the inputs behind the most recent power evaluation."""
        return dict(self._last_info)

    def close(self) -> None:
        self._sig_p.close()
        self._sig_n.close()
        self._sig_s.close()
