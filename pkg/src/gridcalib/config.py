"""Scenario configuration: a strict JSON schema, file loading, and presets.

The parser rejects unknown fields at every nesting level and reports
problems with the full field path ("workloads[0].kind: ..."), so typos
in a scenario sweep fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .emulation import (
    DEFAULT_SYSTEM_BASELINE_W,
    LOAD_KNOBS,
    SCHEDULE_KNOBS,
    ApproximationParams,
    LoadSchedule,
    MeterSpec,
    WorkloadSpec,
    builtin_schedule,
)
from .errors import ConfigError
from .microgrid import SimpleBattery

PRESET_SCHEME = "preset:"

M_IDLE_CAPTURE_MODES = ("averaged", "single")
IDLE_SPLIT_MODES = ("even", "requested")
SCHEDULE_KINDS = ("rps", "batch", "threads", "custom")


@dataclass(frozen=True)
class NamespaceActorSpec:
    """A calibrated-power consumer for one namespace."""

    namespace: str
    actor_id: str | None = None

    def __post_init__(self):
        if not self.namespace:
            raise ValueError("namespace must be non-empty")

    @property
    def resolved_id(self) -> str:
        return self.actor_id if self.actor_id is not None else f"ns.{self.namespace}"


@dataclass(frozen=True)
class StaticActorSpec:
    actor_id: str
    power_w: float

    def __post_init__(self):
        if not self.actor_id:
            raise ValueError("actor_id must be non-empty")
        if not math.isfinite(self.power_w):
            raise ValueError(f"power_w must be finite, got {self.power_w!r}")

    @property
    def resolved_id(self) -> str:
        return self.actor_id


@dataclass(frozen=True)
class TraceActorSpec:
    actor_id: str
    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.actor_id:
            raise ValueError("actor_id must be non-empty")
        if not self.points:
            raise ValueError("trace needs at least one point")
        for point in self.points:
            if len(point) != 2:
                raise ValueError(f"trace point must be [time_ms, power_w], got {point!r}")
            if not math.isfinite(point[1]):
                raise ValueError(f"trace power must be finite, got {point[1]!r}")

    @property
    def resolved_id(self) -> str:
        return self.actor_id


ActorSpec = NamespaceActorSpec | StaticActorSpec | TraceActorSpec


@dataclass(frozen=True)
class StorageSpec:
    """Battery parameters as written in config; None rate = unlimited."""

    capacity_j: float
    charge_j: float = 0.0
    max_charge_rate_w: float | None = None
    max_discharge_rate_w: float | None = None
    efficiency: float = 1.0

    def build(self) -> SimpleBattery:
        return SimpleBattery(
            capacity_j=self.capacity_j,
            charge_j=self.charge_j,
            max_charge_rate_w=(
                math.inf if self.max_charge_rate_w is None else self.max_charge_rate_w
            ),
            max_discharge_rate_w=(
                math.inf
                if self.max_discharge_rate_w is None
                else self.max_discharge_rate_w
            ),
            efficiency=self.efficiency,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs; immutable so presets can be shared.

    schedule_knob names the load-bank knob the benchmark drives. For the
    builtin schedule kinds it is inferred; a custom schedule must name
    one explicitly.
    """

    duration_ms: int
    seed: int
    dt_ms: int = 1000
    warmup_ms: int = 30_000
    emission_interval_ms: int = 1000
    signal_interval_ms: int = 1000
    query_window_ms: int = 2000
    m_idle_capture: str = "averaged"
    strict_signals: bool = False
    idle_split: str = "even"
    system_baseline_w: float = DEFAULT_SYSTEM_BASELINE_W
    workloads: tuple[WorkloadSpec, ...] = ()
    schedule: LoadSchedule | None = None
    schedule_knob: str | None = None
    meter: MeterSpec | None = None
    approximation: ApproximationParams = field(default_factory=ApproximationParams)
    actors: tuple[ActorSpec, ...] = ()
    storage: StorageSpec | None = None
    outputs: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "workloads", tuple(self.workloads))
        object.__setattr__(self, "actors", tuple(self.actors))
        if self.dt_ms <= 0:
            raise ConfigError(f"dt_ms: must be positive, got {self.dt_ms}")
        if self.duration_ms <= 0 or self.duration_ms % self.dt_ms != 0:
            raise ConfigError(
                f"duration_ms: must be a positive multiple of dt_ms "
                f"({self.dt_ms}), got {self.duration_ms}"
            )
        if self.warmup_ms < 0:
            raise ConfigError(f"warmup_ms: must be non-negative, got {self.warmup_ms}")
        if self.emission_interval_ms <= 0:
            raise ConfigError(
                f"emission_interval_ms: must be positive, got {self.emission_interval_ms}"
            )
        if self.signal_interval_ms <= 0:
            raise ConfigError(
                f"signal_interval_ms: must be positive, got {self.signal_interval_ms}"
            )
        if self.query_window_ms < 1000 or self.query_window_ms % 1000 != 0:
            raise ConfigError(
                f"query_window_ms: must be a positive whole number of seconds, "
                f"got {self.query_window_ms}"
            )
        if self.m_idle_capture not in M_IDLE_CAPTURE_MODES:
            raise ConfigError(
                f"m_idle_capture: must be one of {M_IDLE_CAPTURE_MODES}, "
                f"got {self.m_idle_capture!r}"
            )
        if self.idle_split not in IDLE_SPLIT_MODES:
            raise ConfigError(
                f"idle_split: must be one of {IDLE_SPLIT_MODES}, got {self.idle_split!r}"
            )
        if not math.isfinite(self.system_baseline_w) or self.system_baseline_w < 0:
            raise ConfigError(
                f"system_baseline_w: must be finite and non-negative, "
                f"got {self.system_baseline_w!r}"
            )
        seen_pids: set[str] = set()
        for w in self.workloads:
            if w.process_id in seen_pids:
                raise ConfigError(f"workloads: duplicate process_id {w.process_id!r}")
            seen_pids.add(w.process_id)
        if self.schedule is not None:
            if not self.workloads:
                raise ConfigError("schedule: requires at least one workload")
            if self.schedule_knob is None:
                inferred = SCHEDULE_KNOBS.get(self.schedule.kind)
                if inferred is None:
                    raise ConfigError(
                        "schedule.knob: required for custom schedules"
                    )
                object.__setattr__(self, "schedule_knob", inferred)
            if self.schedule_knob not in LOAD_KNOBS:
                raise ConfigError(
                    f"schedule.knob: must be one of {LOAD_KNOBS}, "
                    f"got {self.schedule_knob!r}"
                )
        if self.meter is None:
            object.__setattr__(self, "meter", MeterSpec(seed=self.seed))
        seen_ids: set[str] = set()
        for spec in self.actors:
            if isinstance(spec, NamespaceActorSpec) and not self.workloads:
                raise ConfigError(
                    f"actors: namespace actor {spec.resolved_id!r} needs at "
                    "least one workload to observe"
                )
            if spec.resolved_id in seen_ids:
                raise ConfigError(f"actors: duplicate actor id {spec.resolved_id!r}")
            seen_ids.add(spec.resolved_id)


# --- strict walker helpers ---------------------------------------------------

def _where(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return dict(value)


def _reject_unknown(leftover: Mapping[str, Any], path: str) -> None:
    if leftover:
        key = sorted(leftover)[0]
        raise ConfigError(f"{_where(path, key)}: unknown field")


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _as_num(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _as_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true or false, got {value!r}")
    return value


def _as_list(value: Any, where: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
    return value


def _parse_workload(data: Any, path: str) -> WorkloadSpec:
    d = _mapping(data, path)
    if "process_id" not in d:
        raise ConfigError(f"{_where(path, 'process_id')}: required")
    kwargs: dict[str, Any] = {
        "process_id": _as_str(d.pop("process_id"), _where(path, "process_id"))
    }
    for key in ("kind", "namespace", "load_knob"):
        if key in d:
            kwargs[key] = _as_str(d.pop(key), _where(path, key))
    for key in ("idle_share_w", "dyn_coeff_w", "noise_sigma_w", "leakage_lambda"):
        if key in d:
            kwargs[key] = _as_num(d.pop(key), _where(path, key))
    _reject_unknown(d, path)
    try:
        return WorkloadSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_schedule(data: Any, path: str) -> tuple[LoadSchedule, str | None]:
    d = _mapping(data, path)
    if "kind" not in d:
        raise ConfigError(f"{_where(path, 'kind')}: required")
    kind = _as_str(d.pop("kind"), _where(path, "kind"))
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(
            f"{_where(path, 'kind')}: must be one of {SCHEDULE_KINDS}, got {kind!r}"
        )
    runtime_ms = None
    if "runtime_ms" in d:
        runtime_ms = _as_int(d.pop("runtime_ms"), _where(path, "runtime_ms"))
        if runtime_ms <= 0:
            raise ConfigError(
                f"{_where(path, 'runtime_ms')}: must be positive, got {runtime_ms}"
            )
    knob = None
    if "knob" in d:
        knob = _as_str(d.pop("knob"), _where(path, "knob"))
        if knob not in LOAD_KNOBS:
            raise ConfigError(
                f"{_where(path, 'knob')}: must be one of {LOAD_KNOBS}, got {knob!r}"
            )
    if kind == "custom":
        if "values" not in d:
            raise ConfigError(f"{_where(path, 'values')}: required for kind custom")
        raw = _as_list(d.pop("values"), _where(path, "values"))
        values = tuple(
            _as_num(v, f"{_where(path, 'values')}[{i}]") for i, v in enumerate(raw)
        )
        if knob is None:
            raise ConfigError(f"{_where(path, 'knob')}: required for kind custom")
        _reject_unknown(d, path)
        try:
            schedule = LoadSchedule("custom", values, runtime_ms or 600_000)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return schedule, knob
    if "values" in d:
        raise ConfigError(
            f"{_where(path, 'values')}: only allowed with kind custom "
            f"(the {kind} sequence is fixed)"
        )
    _reject_unknown(d, path)
    schedule = builtin_schedule(kind)
    if runtime_ms is not None:
        schedule = replace(schedule, runtime_ms=runtime_ms)
    return schedule, knob


def _parse_meter(data: Any, path: str, default_seed: int) -> MeterSpec:
    d = _mapping(data, path)
    kwargs: dict[str, Any] = {"seed": default_seed}
    for key in ("voltage_v", "relative_error_v", "relative_error_i", "relative_error_phi"):
        if key in d:
            kwargs[key] = _as_num(d.pop(key), _where(path, key))
    if "sample_interval_ms" in d:
        kwargs["sample_interval_ms"] = _as_int(
            d.pop("sample_interval_ms"), _where(path, "sample_interval_ms")
        )
    if "seed" in d:
        kwargs["seed"] = _as_int(d.pop("seed"), _where(path, "seed"))
    _reject_unknown(d, path)
    try:
        return MeterSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_approximation(data: Any, path: str) -> ApproximationParams:
    d = _mapping(data, path)
    kwargs: dict[str, Any] = {}
    for key in ("gain", "bias_w", "sigma_w"):
        if key in d:
            kwargs[key] = _as_num(d.pop(key), _where(path, key))
    _reject_unknown(d, path)
    try:
        return ApproximationParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_actor(data: Any, path: str) -> ActorSpec:
    d = _mapping(data, path)
    if "type" not in d:
        raise ConfigError(f"{_where(path, 'type')}: required")
    kind = _as_str(d.pop("type"), _where(path, "type"))
    try:
        if kind == "namespace":
            if "namespace" not in d:
                raise ConfigError(f"{_where(path, 'namespace')}: required")
            namespace = _as_str(d.pop("namespace"), _where(path, "namespace"))
            actor_id = None
            if "actor_id" in d:
                actor_id = _as_str(d.pop("actor_id"), _where(path, "actor_id"))
            _reject_unknown(d, path)
            return NamespaceActorSpec(namespace, actor_id)
        if kind == "static":
            for key in ("actor_id", "power_w"):
                if key not in d:
                    raise ConfigError(f"{_where(path, key)}: required")
            actor_id = _as_str(d.pop("actor_id"), _where(path, "actor_id"))
            power_w = _as_num(d.pop("power_w"), _where(path, "power_w"))
            _reject_unknown(d, path)
            return StaticActorSpec(actor_id, power_w)
        if kind == "trace":
            for key in ("actor_id", "points"):
                if key not in d:
                    raise ConfigError(f"{_where(path, key)}: required")
            actor_id = _as_str(d.pop("actor_id"), _where(path, "actor_id"))
            raw = _as_list(d.pop("points"), _where(path, "points"))
            points = []
            for i, entry in enumerate(raw):
                spot = f"{_where(path, 'points')}[{i}]"
                if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                    raise ConfigError(f"{spot}: expected [time_ms, power_w]")
                points.append((_as_int(entry[0], spot), _as_num(entry[1], spot)))
            _reject_unknown(d, path)
            return TraceActorSpec(actor_id, tuple(points))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(
        f"{_where(path, 'type')}: must be namespace, static, or trace, got {kind!r}"
    )


def _parse_storage(data: Any, path: str) -> StorageSpec:
    d = _mapping(data, path)
    if "capacity_j" not in d:
        raise ConfigError(f"{_where(path, 'capacity_j')}: required")
    kwargs: dict[str, Any] = {
        "capacity_j": _as_num(d.pop("capacity_j"), _where(path, "capacity_j"))
    }
    for key in ("charge_j", "efficiency"):
        if key in d:
            kwargs[key] = _as_num(d.pop(key), _where(path, key))
    for key in ("max_charge_rate_w", "max_discharge_rate_w"):
        if key in d:
            value = d.pop(key)
            if value is not None:
                value = _as_num(value, _where(path, key))
            kwargs[key] = value
    _reject_unknown(d, path)
    spec = StorageSpec(**kwargs)
    try:
        spec.build()  # surface battery invariant violations at parse time
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return spec


def parse_config(data: Any, source: str = "") -> ScenarioConfig:
    """Validate a decoded JSON object into a ScenarioConfig."""
    d = _mapping(data, source or "config")
    for key in ("duration_ms", "seed"):
        if key not in d:
            raise ConfigError(f"{key}: required")
    kwargs: dict[str, Any] = {
        "duration_ms": _as_int(d.pop("duration_ms"), "duration_ms"),
        "seed": _as_int(d.pop("seed"), "seed"),
    }
    for key in (
        "dt_ms",
        "warmup_ms",
        "emission_interval_ms",
        "signal_interval_ms",
        "query_window_ms",
    ):
        if key in d:
            kwargs[key] = _as_int(d.pop(key), key)
    for key in ("m_idle_capture", "idle_split"):
        if key in d:
            kwargs[key] = _as_str(d.pop(key), key)
    if "strict_signals" in d:
        kwargs["strict_signals"] = _as_bool(d.pop("strict_signals"), "strict_signals")
    if "system_baseline_w" in d:
        kwargs["system_baseline_w"] = _as_num(
            d.pop("system_baseline_w"), "system_baseline_w"
        )
    if "workloads" in d:
        raw = _as_list(d.pop("workloads"), "workloads")
        kwargs["workloads"] = tuple(
            _parse_workload(w, f"workloads[{i}]") for i, w in enumerate(raw)
        )
    if "schedule" in d:
        raw = d.pop("schedule")
        if raw is not None:
            kwargs["schedule"], kwargs["schedule_knob"] = _parse_schedule(
                raw, "schedule"
            )
    if "meter" in d:
        raw = d.pop("meter")
        if raw is not None:
            kwargs["meter"] = _parse_meter(raw, "meter", kwargs["seed"])
    if "approximation" in d:
        raw = d.pop("approximation")
        if raw is not None:
            kwargs["approximation"] = _parse_approximation(raw, "approximation")
    if "actors" in d:
        raw = _as_list(d.pop("actors"), "actors")
        kwargs["actors"] = tuple(
            _parse_actor(a, f"actors[{i}]") for i, a in enumerate(raw)
        )
    if "storage" in d:
        raw = d.pop("storage")
        if raw is not None:
            kwargs["storage"] = _parse_storage(raw, "storage")
    if "outputs" in d:
        raw = d.pop("outputs")
        if raw is not None:
            raw = _as_str(raw, "outputs")
        kwargs["outputs"] = raw
    _reject_unknown(d, "")
    return ScenarioConfig(**kwargs)


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a scenario from a JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(data, str(path))


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    """Canonical JSON-ready form; parse_config round-trips it."""
    schedule = None
    if cfg.schedule is not None:
        schedule = {
            "kind": cfg.schedule.kind,
            "runtime_ms": cfg.schedule.runtime_ms,
            "knob": cfg.schedule_knob,
        }
        if cfg.schedule.kind == "custom":
            schedule["values"] = list(cfg.schedule.values)
    actors = []
    for spec in cfg.actors:
        if isinstance(spec, NamespaceActorSpec):
            entry: dict[str, Any] = {"type": "namespace", "namespace": spec.namespace}
            if spec.actor_id is not None:
                entry["actor_id"] = spec.actor_id
        elif isinstance(spec, StaticActorSpec):
            entry = {"type": "static", "actor_id": spec.actor_id, "power_w": spec.power_w}
        else:
            entry = {
                "type": "trace",
                "actor_id": spec.actor_id,
                "points": [[t, w] for t, w in spec.points],
            }
        actors.append(entry)
    storage = None
    if cfg.storage is not None:
        storage = {
            "capacity_j": cfg.storage.capacity_j,
            "charge_j": cfg.storage.charge_j,
            "max_charge_rate_w": cfg.storage.max_charge_rate_w,
            "max_discharge_rate_w": cfg.storage.max_discharge_rate_w,
            "efficiency": cfg.storage.efficiency,
        }
    return {
        "duration_ms": cfg.duration_ms,
        "dt_ms": cfg.dt_ms,
        "seed": cfg.seed,
        "warmup_ms": cfg.warmup_ms,
        "emission_interval_ms": cfg.emission_interval_ms,
        "signal_interval_ms": cfg.signal_interval_ms,
        "query_window_ms": cfg.query_window_ms,
        "m_idle_capture": cfg.m_idle_capture,
        "strict_signals": cfg.strict_signals,
        "idle_split": cfg.idle_split,
        "system_baseline_w": cfg.system_baseline_w,
        "workloads": [
            {
                "process_id": w.process_id,
                "kind": w.kind,
                "namespace": w.namespace,
                "idle_share_w": w.idle_share_w,
                "dyn_coeff_w": w.dyn_coeff_w,
                "load_knob": w.load_knob,
                "noise_sigma_w": w.noise_sigma_w,
                "leakage_lambda": w.leakage_lambda,
            }
            for w in cfg.workloads
        ],
        "schedule": schedule,
        "meter": {
            "voltage_v": cfg.meter.voltage_v,
            "relative_error_v": cfg.meter.relative_error_v,
            "relative_error_i": cfg.meter.relative_error_i,
            "relative_error_phi": cfg.meter.relative_error_phi,
            "sample_interval_ms": cfg.meter.sample_interval_ms,
            "seed": cfg.meter.seed,
        },
        "approximation": {
            "gain": cfg.approximation.gain,
            "bias_w": cfg.approximation.bias_w,
            "sigma_w": cfg.approximation.sigma_w,
        },
        "actors": actors,
        "storage": storage,
        "outputs": cfg.outputs,
    }


# --- presets -----------------------------------------------------------------
#
# Durations are warmup (30 s) + the full benchmark span + 2 s of slack:
# the benchmark starts on the first engine tick after warmup, so a k-step
# schedule at runtime R finishes (k*R + 1) s in, and one more tick records
# the settled tail.

def _preset_gpu_leakage() -> ScenarioConfig:
    return ScenarioConfig(
        duration_ms=4_802_000,
        seed=11,
        workloads=(
            WorkloadSpec(
                process_id="gpu-job",
                kind="batch",
                namespace="bench",
                idle_share_w=40.0,
                dyn_coeff_w=6.0,
                load_knob="batch_size",
                leakage_lambda=1.0 / 3.0,
            ),
        ),
        schedule=replace(builtin_schedule("batch"), runtime_ms=960_000),
        actors=(NamespaceActorSpec("bench"),),
    )


def _preset_cpu_offset() -> ScenarioConfig:
    return ScenarioConfig(
        duration_ms=4_802_000,
        seed=12,
        system_baseline_w=0.0,
        workloads=(
            WorkloadSpec(
                process_id="svc",
                kind="service",
                namespace="bench",
                idle_share_w=30.0,
                dyn_coeff_w=0.04,
                load_knob="rps",
            ),
        ),
        schedule=builtin_schedule("rps"),
        approximation=ApproximationParams(gain=1.035),
        actors=(NamespaceActorSpec("bench"),),
    )


def _preset_regression() -> ScenarioConfig:
    return ScenarioConfig(
        duration_ms=600_000,
        seed=13,
        system_baseline_w=2.0,
        workloads=(
            WorkloadSpec(
                process_id="svc",
                kind="service",
                namespace="bench",
                idle_share_w=30.0,
                dyn_coeff_w=0.04,
                load_knob="rps",
            ),
        ),
        schedule=replace(builtin_schedule("rps"), runtime_ms=75_000),
        approximation=ApproximationParams(gain=1.01, bias_w=5.23, sigma_w=1.0),
        actors=(NamespaceActorSpec("bench"),),
    )


def _preset_minimal() -> ScenarioConfig:
    return ScenarioConfig(
        duration_ms=10_000,
        seed=14,
        warmup_ms=0,
        actors=(StaticActorSpec("house", -260.0),),
    )


PRESETS: dict[str, ScenarioConfig] = {
    "gpu-leakage": _preset_gpu_leakage(),
    "cpu-offset": _preset_cpu_offset(),
    "regression": _preset_regression(),
    "minimal": _preset_minimal(),
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset_config(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None


def resolve_config(ref: str | Path) -> ScenarioConfig:
    """A config reference is either preset:NAME or a JSON file path."""
    ref = str(ref)
    if ref.startswith(PRESET_SCHEME):
        return preset_config(ref[len(PRESET_SCHEME):])
    return load_config(ref)
