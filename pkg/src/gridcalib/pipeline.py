"""End-to-end scenario execution and artifact emission.

run() wires the full stack under one clock: workload emulation feeds the
metric store, calibration actors consume it as microgrid consumers, the
benchmark controller walks the load schedule, and a post-pass turns the
collected series into CSV/JSON artifacts. Everything is deterministic
under virtual time: the same config and seed produce byte-identical
files.
"""

from __future__ import annotations

import io
import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import (
    DEFAULT_M_IDLE_WINDOW_MS,
    NamespacePowerActor,
    calibrate_dynamic,
    calibrate_idle,
    capture_idle_baseline,
    dynamic_factor,
)
from .config import (
    NamespaceActorSpec,
    ScenarioConfig,
    StaticActorSpec,
    TraceActorSpec,
    config_to_dict,
)
from .emulation import (
    SYSTEM_PROCESS_ID,
    LoadBank,
    MeterEmitter,
    MeterListener,
    MeterPublisher,
    PowerModelEmitter,
)
from .errors import (
    ConfigError,
    DegenerateDenominator,
    DegenerateX,
    EmptyWindow,
    GridCalibError,
    MissingArtifact,
    NoOverlap,
    TooFewPoints,
    ZeroNodeIdle,
)
from .microgrid import BenchmarkController, Microgrid, Monitor, StaticActor, TraceActor
from .signals import Signal, VirtualClock, WallClock, make_latest_value_signal
from .timeseries import MetricStore, rate
from .validation import (
    PairedObservation,
    RegressionReport,
    compare_to_ideal,
    fit_ols,
    pair,
    report_to_json,
    write_plot_csv,
)
from .wire import (
    METER_GAUGE_METRIC,
    MODE_DYNAMIC,
    MODE_IDLE,
    MODE_LABEL,
    NAMESPACE_LABEL,
    POWER_COUNTER_METRIC,
    PROCESS_LABEL,
    SYSTEM_NAMESPACE,
)

MONITOR_CSV = "monitor.csv"
CALIBRATED_CSV = "calibrated_power.csv"
ENERGY_CSV = "energy_summary.csv"
REGRESSION_JSON = "regression_report.json"
REGRESSION_CSV = "regression_points.csv"
TRUTH_CSV = "ground_truth.csv"
EVENTS_CSV = "events.csv"
CONFIG_JSON = "config.json"

ARTIFACT_NAMES = [
    MONITOR_CSV,
    CALIBRATED_CSV,
    ENERGY_CSV,
    REGRESSION_JSON,
    REGRESSION_CSV,
    TRUTH_CSV,
    EVENTS_CSV,
    CONFIG_JSON,
]

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class RunArtifacts:
    """Paths of everything run() wrote, plus live handles for callers
    that want to inspect the run without re-reading the files."""

    out_dir: Path
    monitor_csv: Path
    calibrated_csv: Path
    energy_csv: Path
    regression_json: Path
    regression_csv: Path
    truth_csv: Path
    events_csv: Path
    config_json: Path
    store: MetricStore
    monitor: Monitor
    events: list[tuple[str, float, int]]
    truth_log: list
    approx_log: list
    regression: RegressionReport | None
    regression_skipped: str | None
    pairs: list[PairedObservation]
    m_idle_w: float
    calibrated_header: list[str]
    calibrated_rows: list[list[float]]
    energy_wh: dict[str, float] = field(default_factory=dict)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [cell if isinstance(cell, (int, str)) else repr(cell) for cell in row]
        )
    return buf.getvalue().encode()


def _safe_rate(series, t1_ms: int, t2_ms: int) -> float:
    if series is None:
        return 0.0
    try:
        return rate(series, t1_ms, t2_ms)
    except EmptyWindow:
        return 0.0


class _Runtime:
    """Everything run() builds before stepping the engine."""

    def __init__(self, config: ScenarioConfig, clock, store: MetricStore):
        self.config = config
        self.clock = clock
        self.store = store
        self.bank = LoadBank()
        self.emitter: PowerModelEmitter | None = None
        self.meter: MeterEmitter | None = None
        self.listener: MeterListener | None = None
        self.publisher: MeterPublisher | None = None
        self.benchmark: BenchmarkController | None = None
        self.ns_actors: list[NamespacePowerActor] = []
        self.meter_signals: list[Signal] = []
        self.m_idle_w = 0.0
        self.engine: Microgrid | None = None

    def build(self, wall_clock: bool) -> None:
        config, clock, store = self.config, self.clock, self.store
        if config.workloads:
            self.emitter = PowerModelEmitter(
                store,
                config.workloads,
                self.bank,
                clock,
                params=config.approximation,
                system_baseline_w=config.system_baseline_w,
                emission_interval_ms=config.emission_interval_ms,
                idle_split=config.idle_split,
                seed=config.seed,
            )
            emitter = self.emitter

            def truth() -> float:
                return emitter.latest_truth.node_total_w

            if wall_clock:
                # live mode pushes meter readings over the TCP line
                # protocol; the listener feeds the store's gauge
                self.listener = MeterListener(("127.0.0.1", 0), store)
                self.listener.serve_in_background()
                host, port = self.listener.server_address[:2]
                self.publisher = MeterPublisher(host, port)
                self.meter = MeterEmitter(
                    None, config.meter, truth, clock, publish=self.publisher.send
                )
            else:
                self.meter = MeterEmitter(store, config.meter, truth, clock)
        if config.warmup_ms:
            clock.advance(config.warmup_ms)
        self.m_idle_w = capture_idle_baseline(
            store,
            clock.now_ms(),
            mode=config.m_idle_capture,
            window_ms=config.warmup_ms or DEFAULT_M_IDLE_WINDOW_MS,
        )
        self.engine = Microgrid(
            clock=clock,
            dt_ms=config.dt_ms,
            storage=config.storage.build() if config.storage is not None else None,
        )
        for spec in config.actors:
            if isinstance(spec, NamespaceActorSpec):
                meter_signal = make_latest_value_signal(
                    store, METER_GAUGE_METRIC, None, config.signal_interval_ms, clock
                )
                self.meter_signals.append(meter_signal)
                actor = NamespacePowerActor(
                    store,
                    spec.namespace,
                    clock,
                    meter_signal,
                    actor_id=spec.actor_id,
                    window_ms=config.query_window_ms,
                    interval_ms=config.signal_interval_ms,
                    m_idle_capture=config.m_idle_capture,
                    m_idle_window_ms=config.warmup_ms or DEFAULT_M_IDLE_WINDOW_MS,
                    strict=config.strict_signals,
                )
                self.ns_actors.append(actor)
                self.engine.add_actor(actor)
            elif isinstance(spec, StaticActorSpec):
                self.engine.add_actor(StaticActor(spec.actor_id, spec.power_w))
            elif isinstance(spec, TraceActorSpec):
                self.engine.add_actor(TraceActor(spec.actor_id, spec.points))
        if config.schedule is not None and config.workloads:
            knob = config.schedule_knob
            self.benchmark = BenchmarkController(
                config.schedule.values,
                config.schedule.runtime_ms,
                on_start=lambda value: self.bank.set_level(knob, value),
                on_stop=lambda value: self.bank.clear(knob),
            )
            self.engine.add_controller(self.benchmark)

    def close(self) -> None:
        for actor in self.ns_actors:
            actor.close()
        for signal in self.meter_signals:
            signal.close()
        if self.meter is not None:
            self.meter.close()
        if self.emitter is not None:
            self.emitter.close()
        if self.publisher is not None:
            self.publisher.close()
        if self.listener is not None:
            self.listener.shutdown()
            self.listener.server_close()


def run(
    config: ScenarioConfig,
    out_dir: str | Path | None = None,
    wall_clock: bool = False,
    store: MetricStore | None = None,
) -> RunArtifacts:
    """Execute a scenario and write its artifacts.

    out_dir overrides config.outputs. Callers may inject a store to
    observe the run live (the serve command does); by default each run
    gets a fresh one.
    """
    target = out_dir if out_dir is not None else config.outputs
    if target is None:
        raise ConfigError("outputs: no output directory (set outputs or pass --out)")
    out = Path(target)
    out.mkdir(parents=True, exist_ok=True)

    clock = WallClock() if wall_clock else VirtualClock()
    runtime = _Runtime(config, clock, store if store is not None else MetricStore())
    runtime.build(wall_clock)
    try:
        runtime.engine.run(config.duration_ms)
    finally:
        runtime.close()
    return _write_artifacts(runtime, out)


def _write_artifacts(runtime: _Runtime, out: Path) -> RunArtifacts:
    config, store = runtime.config, runtime.store
    monitor = runtime.engine.monitor

    calibrated_header, calibrated_rows = _calibrated_table(
        config, store, monitor, runtime.m_idle_w
    )
    energy_header, energy_rows, energy_wh = _energy_summary(
        config, calibrated_header, calibrated_rows
    )
    report, skipped, pairs = _node_regression(config, store)
    events = list(runtime.benchmark.events) if runtime.benchmark is not None else []

    paths = {name: out / name for name in ARTIFACT_NAMES}
    _atomic_write(paths[MONITOR_CSV], monitor.csv_bytes())
    _atomic_write(paths[CALIBRATED_CSV], _csv_bytes(calibrated_header, calibrated_rows))
    _atomic_write(paths[ENERGY_CSV], _csv_bytes(energy_header, energy_rows))
    if report is not None:
        _atomic_write(paths[REGRESSION_JSON], (report_to_json(report) + "\n").encode())
        buf = io.StringIO(newline="")
        write_plot_csv(pairs, report, buf)
        _atomic_write(paths[REGRESSION_CSV], buf.getvalue().encode())
    else:
        payload = json.dumps({"skipped": skipped}, sort_keys=True) + "\n"
        _atomic_write(paths[REGRESSION_JSON], payload.encode())
        _atomic_write(
            paths[REGRESSION_CSV], _csv_bytes(["x_w", "y_w", "fitted_w", "residual_w"], [])
        )
    _atomic_write(paths[TRUTH_CSV], _truth_csv(config, runtime))
    _atomic_write(
        paths[EVENTS_CSV],
        _csv_bytes(["action", "value", "time_ms"], [[a, v, t] for a, v, t in events]),
    )
    config_payload = json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"
    _atomic_write(paths[CONFIG_JSON], config_payload.encode())

    return RunArtifacts(
        out_dir=out,
        monitor_csv=paths[MONITOR_CSV],
        calibrated_csv=paths[CALIBRATED_CSV],
        energy_csv=paths[ENERGY_CSV],
        regression_json=paths[REGRESSION_JSON],
        regression_csv=paths[REGRESSION_CSV],
        truth_csv=paths[TRUTH_CSV],
        events_csv=paths[EVENTS_CSV],
        config_json=paths[CONFIG_JSON],
        store=store,
        monitor=monitor,
        events=events,
        truth_log=list(runtime.emitter.truth_log) if runtime.emitter else [],
        approx_log=list(runtime.emitter.approx_log) if runtime.emitter else [],
        regression=report,
        regression_skipped=skipped,
        pairs=pairs,
        m_idle_w=runtime.m_idle_w,
        calibrated_header=calibrated_header,
        calibrated_rows=calibrated_rows,
        energy_wh=energy_wh,
    )


def _process_table(config: ScenarioConfig) -> list[tuple[str, str]]:
    """(process_id, namespace) rows, config order, system last."""
    if not config.workloads:
        return []
    rows = [(w.process_id, w.namespace) for w in config.workloads]
    rows.append((SYSTEM_PROCESS_ID, SYSTEM_NAMESPACE))
    return rows


def _calibrated_table(
    config: ScenarioConfig,
    store: MetricStore,
    monitor: Monitor,
    m_idle_w: float,
) -> tuple[list[str], list[list[float]]]:
    """Recompute per-process calibrated power at every engine tick.

    Uses the same trailing-window rates the live calibration actors saw.
    The system pseudo-process keeps only its idle share: its dynamic
    power is exactly what calibration redistributes to the workloads.
    """
    processes = _process_table(config)
    namespaces: list[str] = []
    for _, ns in processes:
        if ns not in namespaces:
            namespaces.append(ns)
    header = ["time_ms"]
    for pid, _ in processes:
        header += [f"{pid}_dyn_w", f"{pid}_idle_w"]
    for ns in namespaces:
        header += [f"ns.{ns}_dyn_w", f"ns.{ns}_idle_w"]

    rows: list[list[float]] = []
    if not processes:
        return header, rows
    dyn_series = {}
    idle_series = {}
    for pid, ns in processes:
        labels = {NAMESPACE_LABEL: ns, PROCESS_LABEL: pid}
        dyn_series[pid] = store.get(
            POWER_COUNTER_METRIC, {**labels, MODE_LABEL: MODE_DYNAMIC}
        )
        idle_series[pid] = store.get(
            POWER_COUNTER_METRIC, {**labels, MODE_LABEL: MODE_IDLE}
        )
    gauge = store.get(METER_GAUGE_METRIC, None)
    window = config.query_window_ms
    for tick in monitor.ticks:
        t = tick.time_ms
        p_dyn = {pid: _safe_rate(dyn_series[pid], t - window, t) for pid, _ in processes}
        p_idle = {pid: _safe_rate(idle_series[pid], t - window, t) for pid, _ in processes}
        n_dyn = sum(p_dyn.values())
        s_dyn = p_dyn[SYSTEM_PROCESS_ID]
        n_idle = sum(p_idle.values())
        try:
            m = gauge.value_at(t) if gauge is not None else 0.0
        except EmptyWindow:
            m = 0.0
        cal_dyn: dict[str, float] = {}
        cal_idle: dict[str, float] = {}
        for pid, _ in processes:
            if pid == SYSTEM_PROCESS_ID or p_dyn[pid] <= 0:
                cal_dyn[pid] = 0.0
            else:
                try:
                    factor = dynamic_factor(p_dyn[pid], n_dyn, s_dyn)
                    cal_dyn[pid] = calibrate_dynamic(factor, m, m_idle_w)
                except DegenerateDenominator:
                    cal_dyn[pid] = 0.0
            try:
                cal_idle[pid] = calibrate_idle(p_idle[pid], n_idle, m_idle_w)
            except ZeroNodeIdle:
                cal_idle[pid] = 0.0
        row: list[float] = [t]
        for pid, _ in processes:
            row += [cal_dyn[pid], cal_idle[pid]]
        for ns in namespaces:
            row.append(sum(cal_dyn[pid] for pid, pns in processes if pns == ns))
            row.append(sum(cal_idle[pid] for pid, pns in processes if pns == ns))
        rows.append(row)
    return header, rows


def _energy_summary(
    config: ScenarioConfig,
    calibrated_header: list[str],
    calibrated_rows: list[list[float]],
) -> tuple[list[str], list[list], dict[str, float]]:
    """Trapezoidal integration of each process's calibrated power."""
    header = ["process", "namespace", "energy_wh", "share_pct"]
    processes = _process_table(config)
    if not processes or len(calibrated_rows) == 0:
        return header, [], {}
    times_s = np.array([row[0] for row in calibrated_rows], dtype=float) / 1000.0
    column = {name: i for i, name in enumerate(calibrated_header)}
    energy: dict[str, float] = {}
    for pid, _ in processes:
        dyn = np.array([row[column[f"{pid}_dyn_w"]] for row in calibrated_rows])
        idle = np.array([row[column[f"{pid}_idle_w"]] for row in calibrated_rows])
        joules = float(_trapezoid(dyn + idle, times_s))
        energy[pid] = joules / 3600.0
    total = sum(energy.values())
    ns_of = dict(processes)
    ordered = sorted(processes, key=lambda item: (-energy[item[0]], item[0]))
    rows = []
    for pid, _ in ordered:
        share = 100.0 * energy[pid] / total if total > 0 else 0.0
        rows.append([pid, ns_of[pid], energy[pid], share])
    return header, rows, energy


def _node_regression(
    config: ScenarioConfig, store: MetricStore
) -> tuple[RegressionReport | None, str | None, list[PairedObservation]]:
    """Fit measured node power against the approximated node total.

    The x series is reconstructed at each meter timestamp as the summed
    counter rate over one emission interval, which recovers exactly the
    watts the emitter integrated.
    """
    if not config.workloads:
        return None, "no workloads", []
    gauge = store.get(METER_GAUGE_METRIC, None)
    if gauge is None or len(gauge) == 0:
        return None, "no meter samples", []
    counters = store.match(POWER_COUNTER_METRIC, None)
    interval = config.emission_interval_ms
    xs: list[tuple[int, float]] = []
    for ts, _ in ((s.timestamp_ms, s.value) for s in gauge.samples()):
        total = 0.0
        covered = True
        for series in counters:
            try:
                total += rate(series, ts - interval, ts)
            except EmptyWindow:
                covered = False
                break
        if covered:
            xs.append((ts, total))
    if len(xs) < 2:
        return None, "not enough aligned samples", []
    try:
        pairs = pair(xs, gauge)
        report = fit_ols(pairs)
    except (NoOverlap, TooFewPoints, DegenerateX) as exc:
        return None, str(exc), []
    return report, None, pairs


def _truth_csv(config: ScenarioConfig, runtime: _Runtime) -> bytes:
    header = ["time_ms"]
    for w in config.workloads:
        header += [f"{w.process_id}_true_dyn_w", f"{w.process_id}_true_idle_w"]
    header += ["system_true_dyn_w", "node_true_total_w"]
    rows = []
    if runtime.emitter is not None:
        for truth in runtime.emitter.truth_log:
            row: list[float] = [truth.time_ms]
            for w in config.workloads:
                row.append(truth.process_dynamic_w[w.process_id])
                row.append(truth.process_idle_w[w.process_id])
            row.append(truth.system_dynamic_w)
            row.append(truth.node_total_w)
            rows.append(row)
    return _csv_bytes(header, rows)


# --- artifact consumers --------------------------------------------------------


def _read_energy_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _load_regression_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def report(artifacts_dir: str | Path, floor_wh: float = 1.0) -> str:
    """Human-readable run summary: energy table plus regression verdicts.

    Processes under floor_wh are grouped into an "other" bucket, the way
    long tails usually are in per-service energy reports.
    """
    out = Path(artifacts_dir)
    energy_path = out / ENERGY_CSV
    regression_path = out / REGRESSION_JSON
    for path in (energy_path, regression_path):
        if not path.exists():
            raise MissingArtifact(f"missing artifact: {path}")
    rows = _read_energy_rows(energy_path)
    entries = [
        (row["process"], row["namespace"], float(row["energy_wh"])) for row in rows
    ]
    total = sum(e for _, _, e in entries)
    major = [item for item in entries if item[2] >= floor_wh]
    minor = [item for item in entries if item[2] < floor_wh]
    lines = [f"{'process':<24} {'namespace':<12} {'energy_wh':>12} {'share':>8}"]

    def pct(wh: float) -> float:
        return 100.0 * wh / total if total > 0 else 0.0

    for pid, ns, wh in major:
        lines.append(f"{pid:<24} {ns:<12} {wh:>12.3f} {pct(wh):>7.1f}%")
    if minor:
        other = sum(e for _, _, e in minor)
        label = f"other ({len(minor)} under {floor_wh:g} Wh)"
        lines.append(f"{label:<24} {'-':<12} {other:>12.3f} {pct(other):>7.1f}%")
    if not entries:
        lines.append("(no processes)")
    lines.append(f"{'total':<24} {'':<12} {total:>12.3f} {100.0 if total > 0 else 0.0:>7.1f}%")

    data = _load_regression_json(regression_path)
    if "skipped" in data:
        lines.append(f"regression: skipped ({data['skipped']})")
    else:
        fitted = RegressionReport(**data)
        verdict = compare_to_ideal(fitted)

        def mark(ok: bool) -> str:
            return "ok" if ok else "FAIL"

        lines.append(
            f"regression: slope {fitted.slope:.4f} ({mark(verdict.slope_ok)}), "
            f"intercept {fitted.intercept_w:.2f} W ({mark(verdict.intercept_ok)}), "
            f"r2 {fitted.r2:.4f} ({mark(verdict.r2_ok)}), n={fitted.n}"
        )
    return "\n".join(lines) + "\n"


def validate(artifacts_dir: str | Path) -> RegressionReport | None:
    """Re-fit the stored regression points and check them against the
    stored report. Returns the recomputed report, or None when the run
    skipped regression."""
    out = Path(artifacts_dir)
    points_path = out / REGRESSION_CSV
    report_path = out / REGRESSION_JSON
    for path in (points_path, report_path):
        if not path.exists():
            raise MissingArtifact(f"missing artifact: {path}")
    data = _load_regression_json(report_path)
    if "skipped" in data:
        return None
    stored = RegressionReport(**data)
    with open(points_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    points = [
        PairedObservation(time_ms=i, x_w=float(r["x_w"]), y_w=float(r["y_w"]))
        for i, r in enumerate(rows)
    ]
    recomputed = fit_ols(points)
    checks = [
        ("slope", stored.slope, recomputed.slope),
        ("intercept_w", stored.intercept_w, recomputed.intercept_w),
        ("r2", stored.r2, recomputed.r2),
        ("residual_median_w", stored.residual_median_w, recomputed.residual_median_w),
        ("residual_max_w", stored.residual_max_w, recomputed.residual_max_w),
    ]
    for name, want, got in checks:
        if abs(got - want) > 1e-9 * max(1.0, abs(want)):
            raise GridCalibError(
                f"stored regression does not match its points: "
                f"{name} {want} vs recomputed {got}"
            )
    if stored.n != recomputed.n:
        raise GridCalibError(
            f"stored regression does not match its points: "
            f"n {stored.n} vs recomputed {recomputed.n}"
        )
    return recomputed
