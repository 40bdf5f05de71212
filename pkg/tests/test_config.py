"""Config schema: strict parsing, field paths, presets, round trips."""

import json

import pytest

from gridcalib.config import (
    PRESETS,
    NamespaceActorSpec,
    ScenarioConfig,
    StaticActorSpec,
    StorageSpec,
    TraceActorSpec,
    config_to_dict,
    load_config,
    parse_config,
    preset_config,
    preset_names,
    resolve_config,
)
from gridcalib.emulation import ApproximationParams, WorkloadSpec, builtin_schedule
from gridcalib.errors import ConfigError


def minimal_dict(**overrides):
    data = {"duration_ms": 10_000, "seed": 7}
    data.update(overrides)
    return data


class TestTopLevel:
    def test_defaults(self):
        cfg = parse_config(minimal_dict())
        assert cfg.duration_ms == 10_000
        assert cfg.seed == 7
        assert cfg.dt_ms == 1000
        assert cfg.warmup_ms == 30_000
        assert cfg.query_window_ms == 2000
        assert cfg.idle_split == "even"
        assert cfg.workloads == ()
        assert cfg.schedule is None
        assert cfg.storage is None

    def test_meter_seed_defaults_to_scenario_seed(self):
        cfg = parse_config(minimal_dict())
        assert cfg.meter.seed == 7

    def test_explicit_meter_seed_wins(self):
        cfg = parse_config(minimal_dict(meter={"seed": 99}))
        assert cfg.meter.seed == 99

    @pytest.mark.parametrize("key", ["duration_ms", "seed"])
    def test_required_fields(self, key):
        data = minimal_dict()
        del data[key]
        with pytest.raises(ConfigError, match=f"{key}: required"):
            parse_config(data)

    def test_unknown_top_level_field(self):
        with pytest.raises(ConfigError, match="durration_ms: unknown field"):
            parse_config(minimal_dict(durration_ms=5))

    def test_type_errors_name_the_field(self):
        with pytest.raises(ConfigError, match="duration_ms: expected an integer"):
            parse_config({"duration_ms": "long", "seed": 1})
        # booleans are ints in Python; the schema still rejects them
        with pytest.raises(ConfigError, match="seed: expected an integer"):
            parse_config({"duration_ms": 1000, "seed": True})
        with pytest.raises(ConfigError, match="strict_signals: expected true or false"):
            parse_config(minimal_dict(strict_signals="yes"))

    def test_duration_must_divide_by_dt(self):
        with pytest.raises(ConfigError, match="duration_ms: must be a positive multiple"):
            parse_config({"duration_ms": 1500, "seed": 1, "dt_ms": 1000})

    def test_not_an_object(self):
        with pytest.raises(ConfigError, match="expected an object"):
            parse_config([1, 2, 3])


class TestWorkloads:
    def test_full_workload(self):
        cfg = parse_config(
            minimal_dict(
                workloads=[
                    {
                        "process_id": "svc",
                        "kind": "service",
                        "namespace": "team-a",
                        "idle_share_w": 12.5,
                        "dyn_coeff_w": 0.05,
                        "load_knob": "rps",
                        "noise_sigma_w": 0.5,
                        "leakage_lambda": 0.25,
                    }
                ]
            )
        )
        w = cfg.workloads[0]
        assert w.namespace == "team-a"
        assert w.leakage_lambda == 0.25

    def test_bad_kind_carries_path(self):
        data = minimal_dict(workloads=[{"process_id": "x", "kind": "weird"}])
        with pytest.raises(ConfigError, match=r"workloads\[0\]: kind must be"):
            parse_config(data)

    def test_unknown_nested_field(self):
        data = minimal_dict(workloads=[{"process_id": "x", "watts": 3}])
        with pytest.raises(ConfigError, match=r"workloads\[0\]\.watts: unknown field"):
            parse_config(data)

    def test_missing_process_id(self):
        data = minimal_dict(workloads=[{"kind": "service"}])
        with pytest.raises(ConfigError, match=r"workloads\[0\]\.process_id: required"):
            parse_config(data)

    def test_duplicate_process_ids(self):
        data = minimal_dict(
            workloads=[{"process_id": "x"}, {"process_id": "x"}]
        )
        with pytest.raises(ConfigError, match="duplicate process_id"):
            parse_config(data)


class TestSchedule:
    def base(self, **sched):
        return minimal_dict(
            workloads=[{"process_id": "svc"}], schedule=sched
        )

    def test_builtin_rps(self):
        cfg = parse_config(self.base(kind="rps"))
        assert cfg.schedule.values == tuple(range(250, 2001, 250))
        assert cfg.schedule.runtime_ms == 600_000
        assert cfg.schedule_knob == "rps"

    def test_runtime_override(self):
        cfg = parse_config(self.base(kind="batch", runtime_ms=960_000))
        assert cfg.schedule.values == (1, 4, 8, 16, 32)
        assert cfg.schedule.runtime_ms == 960_000
        assert cfg.schedule_knob == "batch_size"

    def test_builtin_values_fixed(self):
        with pytest.raises(ConfigError, match=r"schedule\.values: only allowed"):
            parse_config(self.base(kind="rps", values=[1, 2]))

    def test_custom_needs_values_and_knob(self):
        with pytest.raises(ConfigError, match=r"schedule\.values: required"):
            parse_config(self.base(kind="custom", knob="rps"))
        with pytest.raises(ConfigError, match=r"schedule\.knob: required"):
            parse_config(self.base(kind="custom", values=[10, 20]))

    def test_custom_schedule(self):
        cfg = parse_config(
            self.base(kind="custom", values=[5, 10], knob="threads", runtime_ms=2000)
        )
        assert cfg.schedule.values == (5.0, 10.0)
        assert cfg.schedule_knob == "threads"

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match=r"schedule\.kind: must be one of"):
            parse_config(self.base(kind="spiral"))

    def test_schedule_requires_workloads(self):
        data = minimal_dict(schedule={"kind": "rps"})
        with pytest.raises(ConfigError, match="schedule: requires at least one workload"):
            parse_config(data)


class TestActors:
    def test_three_kinds(self):
        cfg = parse_config(
            minimal_dict(
                workloads=[{"process_id": "svc"}],
                actors=[
                    {"type": "namespace", "namespace": "bench"},
                    {"type": "static", "actor_id": "pv", "power_w": 150.0},
                    {"type": "trace", "actor_id": "house", "points": [[0, -50], [5000, -80.5]]},
                ],
            )
        )
        ns, static, trace = cfg.actors
        assert isinstance(ns, NamespaceActorSpec) and ns.resolved_id == "ns.bench"
        assert isinstance(static, StaticActorSpec) and static.power_w == 150.0
        assert isinstance(trace, TraceActorSpec) and trace.points == ((0, -50.0), (5000, -80.5))

    def test_unknown_type(self):
        data = minimal_dict(actors=[{"type": "windmill"}])
        with pytest.raises(ConfigError, match=r"actors\[0\]\.type: must be"):
            parse_config(data)

    def test_bad_trace_point(self):
        data = minimal_dict(actors=[{"type": "trace", "actor_id": "t", "points": [[1, 2, 3]]}])
        with pytest.raises(ConfigError, match=r"actors\[0\]\.points\[0\]"):
            parse_config(data)

    def test_namespace_actor_needs_workloads(self):
        data = minimal_dict(actors=[{"type": "namespace", "namespace": "bench"}])
        with pytest.raises(ConfigError, match="needs at least one workload"):
            parse_config(data)

    def test_duplicate_actor_ids(self):
        data = minimal_dict(
            workloads=[{"process_id": "svc"}],
            actors=[
                {"type": "namespace", "namespace": "bench"},
                {"type": "static", "actor_id": "ns.bench", "power_w": 1.0},
            ],
        )
        with pytest.raises(ConfigError, match="duplicate actor id"):
            parse_config(data)


class TestStorageAndMeter:
    def test_storage_parse_and_build(self):
        cfg = parse_config(
            minimal_dict(
                storage={"capacity_j": 5000, "charge_j": 100, "max_charge_rate_w": 50}
            )
        )
        battery = cfg.storage.build()
        assert battery.capacity_j == 5000
        assert battery.max_charge_rate_w == 50
        assert battery.max_discharge_rate_w == float("inf")

    def test_storage_invariants_surface_at_parse(self):
        data = minimal_dict(storage={"capacity_j": 100, "charge_j": 500})
        with pytest.raises(ConfigError, match="storage:"):
            parse_config(data)

    def test_meter_error_caps(self):
        data = minimal_dict(meter={"relative_error_v": 0.5})
        with pytest.raises(ConfigError, match="meter:"):
            parse_config(data)

    def test_null_sections_mean_defaults(self):
        cfg = parse_config(minimal_dict(schedule=None, storage=None, meter=None))
        assert cfg.schedule is None and cfg.storage is None
        assert cfg.meter.seed == 7


class TestDirectConstruction:
    def test_query_window_whole_seconds(self):
        with pytest.raises(ConfigError, match="query_window_ms"):
            ScenarioConfig(duration_ms=1000, seed=1, query_window_ms=1500)

    def test_capture_mode(self):
        with pytest.raises(ConfigError, match="m_idle_capture"):
            ScenarioConfig(duration_ms=1000, seed=1, m_idle_capture="median")

    def test_idle_split(self):
        with pytest.raises(ConfigError, match="idle_split"):
            ScenarioConfig(duration_ms=1000, seed=1, idle_split="by-fiat")

    def test_knob_inferred_from_builtin_kind(self):
        cfg = ScenarioConfig(
            duration_ms=1000,
            seed=1,
            workloads=(WorkloadSpec(process_id="x", load_knob="threads"),),
            schedule=builtin_schedule("threads"),
        )
        assert cfg.schedule_knob == "threads"


class TestFilesAndPresets:
    def test_load_config(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(minimal_dict()))
        cfg = load_config(path)
        assert cfg.duration_ms == 10_000

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_preset_names(self):
        assert preset_names() == ["cpu-offset", "gpu-leakage", "minimal", "regression"]

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            preset_config("toaster")

    def test_resolve_scheme(self):
        assert resolve_config("preset:minimal") is PRESETS["minimal"]

    def test_resolve_path(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps(minimal_dict()))
        assert resolve_config(str(path)).seed == 7

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_round_trip(self, name):
        # canonical dict form reparses to an equal config
        cfg = PRESETS[name]
        assert parse_config(config_to_dict(cfg)) == cfg

    def test_preset_shapes(self):
        gpu = PRESETS["gpu-leakage"]
        assert gpu.workloads[0].leakage_lambda == pytest.approx(1 / 3)
        assert gpu.schedule.runtime_ms == 960_000
        assert gpu.duration_ms % gpu.dt_ms == 0
        cpu = PRESETS["cpu-offset"]
        assert cpu.approximation.gain == 1.035
        assert cpu.system_baseline_w == 0.0
        reg = PRESETS["regression"]
        assert (reg.approximation.gain, reg.approximation.bias_w) == (1.01, 5.23)
        assert reg.approximation.sigma_w == 1.0
        assert PRESETS["minimal"].workloads == ()

    def test_round_trip_with_all_sections(self):
        data = minimal_dict(
            workloads=[{"process_id": "svc", "dyn_coeff_w": 0.1}],
            schedule={"kind": "custom", "values": [1, 2], "knob": "rps", "runtime_ms": 5000},
            actors=[
                {"type": "namespace", "namespace": "bench", "actor_id": "main"},
                {"type": "trace", "actor_id": "t", "points": [[0, 1.0]]},
            ],
            storage={"capacity_j": 100.0},
            outputs="out/here",
        )
        cfg = parse_config(data)
        assert parse_config(config_to_dict(cfg)) == cfg


def test_storage_spec_none_rates_unlimited():
    spec = StorageSpec(capacity_j=10.0)
    battery = spec.build()
    assert battery.max_charge_rate_w == float("inf")
    assert battery.efficiency == 1.0


def test_approximation_defaults():
    assert parse_config(minimal_dict()).approximation == ApproximationParams()
