"""Microgrid engine: aggregation, settlement, step order, benchmark lifecycle."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcalib.errors import StepError
from gridcalib.microgrid import (
    Actor,
    BenchmarkController,
    Controller,
    ControllerView,
    Microgrid,
    SimpleBattery,
    StaticActor,
    TraceActor,
    aggregate,
    settle,
)
from gridcalib.signals import VirtualClock


class TestAggregate:
    def test_signed_sum(self):
        assert aggregate({"pv": 500.0, "node": -300.0}) == 200.0

    def test_empty_grid(self):
        assert aggregate({}) == 0.0

    def test_exact_balance(self):
        assert aggregate({"a": 100.0, "b": -100.0}) == 0.0


class TestActors:
    def test_static(self):
        actor = StaticActor("node", -260.0)
        assert actor.power(0) == -260.0
        assert actor.power(10_000_000) == -260.0

    def test_static_rejects_non_finite(self):
        with pytest.raises(ValueError):
            StaticActor("bad", math.inf)

    def test_trace_piecewise_constant(self):
        actor = TraceActor("pv", [(1000, 50.0), (3000, 80.0)])
        assert actor.power(0) == 0.0
        assert actor.power(1000) == 50.0
        assert actor.power(2999) == 50.0
        assert actor.power(3000) == 80.0
        assert actor.power(99_000) == 80.0

    def test_trace_needs_points(self):
        with pytest.raises(ValueError):
            TraceActor("pv", [])


class TestBatteryValidation:
    def test_charge_outside_capacity_rejected(self):
        with pytest.raises(ValueError):
            SimpleBattery(capacity_j=100.0, charge_j=150.0)
        with pytest.raises(ValueError):
            SimpleBattery(capacity_j=100.0, charge_j=-1.0)

    def test_bad_efficiency_rejected(self):
        with pytest.raises(ValueError):
            SimpleBattery(capacity_j=100.0, efficiency=0.0)
        with pytest.raises(ValueError):
            SimpleBattery(capacity_j=100.0, efficiency=1.5)

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            SimpleBattery(capacity_j=100.0, policy="grid-first")


class TestSettle:
    def test_surplus_fully_charges(self):
        battery = SimpleBattery(capacity_j=10_000.0, charge_j=0.0)
        delta, grid = settle(battery, 100.0, 60_000)
        assert (delta, grid) == (6000.0, 0.0)
        assert battery.charge_j == 6000.0

    def test_surplus_clamped_by_headroom(self):
        battery = SimpleBattery(capacity_j=10_000.0, charge_j=9000.0)
        delta, grid = settle(battery, 100.0, 60_000)
        assert (delta, grid) == (1000.0, 5000.0)
        assert battery.charge_j == 10_000.0

    def test_surplus_clamped_by_charge_rate(self):
        battery = SimpleBattery(capacity_j=10_000.0, max_charge_rate_w=10.0)
        delta, grid = settle(battery, 100.0, 1000)
        assert (delta, grid) == (10.0, 90.0)

    def test_zero_delta_is_a_no_op(self):
        battery = SimpleBattery(capacity_j=10_000.0, charge_j=500.0)
        assert settle(battery, 0.0, 1000) == (0.0, 0.0)
        assert battery.charge_j == 500.0

    def test_deficit_discharges(self):
        battery = SimpleBattery(capacity_j=10_000.0, charge_j=100.0)
        delta, grid = settle(battery, -50.0, 1000)
        assert (delta, grid) == (-50.0, 0.0)
        assert battery.charge_j == 50.0

    def test_deficit_beyond_charge_imports_rest(self):
        battery = SimpleBattery(capacity_j=10_000.0, charge_j=30.0)
        delta, grid = settle(battery, -50.0, 1000)
        assert (delta, grid) == (-30.0, -20.0)
        assert battery.charge_j == 0.0

    def test_deficit_clamped_by_discharge_rate(self):
        battery = SimpleBattery(
            capacity_j=10_000.0, charge_j=5000.0, max_discharge_rate_w=20.0
        )
        delta, grid = settle(battery, -50.0, 1000)
        assert (delta, grid) == (-20.0, -30.0)

    def test_without_storage_everything_hits_the_grid(self):
        assert settle(None, -260.0, 1000) == (0.0, -260.0)
        assert settle(None, 75.0, 2000) == (0.0, 150.0)

    def test_efficiency_burns_energy_on_the_way_in(self):
        battery = SimpleBattery(capacity_j=10_000.0, efficiency=0.9)
        delta, grid = settle(battery, 100.0, 1000)
        assert (delta, grid) == (100.0, 0.0)
        assert battery.charge_j == pytest.approx(90.0)

    def test_efficiency_burns_energy_on_the_way_out(self):
        battery = SimpleBattery(capacity_j=10_000.0, charge_j=100.0, efficiency=0.9)
        delta, grid = settle(battery, -50.0, 1000)
        assert (delta, grid) == (-50.0, 0.0)
        assert battery.charge_j == pytest.approx(100.0 - 50.0 / 0.9)

    def test_bad_dt_rejected(self):
        with pytest.raises(ValueError):
            settle(None, 1.0, 0)

    @settings(max_examples=300)
    @given(
        capacity=st.floats(min_value=1.0, max_value=1e6, allow_nan=False),
        frac=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        charge_rate=st.floats(min_value=0.0, max_value=1e4, allow_nan=False),
        discharge_rate=st.floats(min_value=0.0, max_value=1e4, allow_nan=False),
        efficiency=st.floats(min_value=0.05, max_value=1.0, allow_nan=False),
        deltas=st.lists(
            st.floats(min_value=-1e4, max_value=1e4, allow_nan=False),
            min_size=1,
            max_size=30,
        ),
        dt_ms=st.integers(min_value=1, max_value=10_000),
    )
    def test_conservation_and_bounds(
        self, capacity, frac, charge_rate, discharge_rate, efficiency, deltas, dt_ms
    ):
        battery = SimpleBattery(
            capacity_j=capacity,
            charge_j=capacity * frac,
            max_charge_rate_w=charge_rate,
            max_discharge_rate_w=discharge_rate,
            efficiency=efficiency,
        )
        for delta_p in deltas:
            storage_delta, grid = settle(battery, delta_p, dt_ms)
            expected = delta_p * dt_ms / 1000.0
            assert storage_delta + grid == pytest.approx(expected, rel=1e-9, abs=1e-9)
            assert 0.0 <= battery.charge_j <= battery.capacity_j * (1 + 1e-12)


class RecordingController(Controller):
    controller_id = "recorder"

    def __init__(self):
        self.views: list[ControllerView] = []

    def step(self, view: ControllerView) -> None:
        self.views.append(view)


class TestEngine:
    def test_single_consumer_passthrough(self):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("node", -260.0))
        tick = grid.step()
        assert tick.delta_p_w == -260.0
        assert tick.grid_exchange_j == -260.0
        assert tick.storage_delta_j == 0.0
        assert tick.time_ms == 1000

    def test_zero_actors(self):
        grid = Microgrid(dt_ms=1000)
        tick = grid.step()
        assert tick.delta_p_w == 0.0
        assert tick.grid_exchange_j == 0.0

    def test_battery_absorbs_surplus(self):
        grid = Microgrid(
            dt_ms=1000, storage=SimpleBattery(capacity_j=1e6, charge_j=0.0)
        )
        grid.add_actor(StaticActor("pv", 500.0))
        grid.add_actor(StaticActor("node", -300.0))
        tick = grid.step()
        assert tick.delta_p_w == 200.0
        assert tick.storage_delta_j == 200.0
        assert tick.grid_exchange_j == 0.0
        assert tick.storage_charge_j == 200.0

    def test_controller_sees_current_power_and_previous_settlement(self):
        recorder = RecordingController()
        grid = Microgrid(
            dt_ms=1000, storage=SimpleBattery(capacity_j=1e6, charge_j=0.0)
        )
        grid.add_actor(StaticActor("pv", 100.0))
        grid.add_controller(recorder)
        grid.step()
        grid.step()
        first, second = recorder.views
        assert first.delta_p_w == 100.0
        assert first.e_last_j == 0.0
        assert first.storage.charge_j == 0.0  # pre-settlement state
        assert second.e_last_j == 100.0
        assert second.storage.charge_j == 100.0

    def test_controller_cannot_mutate_actor_powers(self):
        recorder = RecordingController()
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("pv", 100.0))
        grid.add_controller(recorder)
        grid.step()
        with pytest.raises(TypeError):
            recorder.views[0].actor_powers["pv"] = 0.0

    def test_controller_storage_is_a_snapshot(self):
        recorder = RecordingController()
        battery = SimpleBattery(capacity_j=1e6, charge_j=0.0)
        grid = Microgrid(dt_ms=1000, storage=battery)
        grid.add_actor(StaticActor("pv", 100.0))
        grid.add_controller(recorder)
        grid.step()
        recorder.views[0].storage.charge_j = 999.0
        assert battery.charge_j == 100.0

    def test_callable_controller(self):
        seen = []
        grid = Microgrid(dt_ms=1000)
        grid.add_controller(lambda view: seen.append(view.t))
        grid.step()
        grid.step()
        assert seen == [0, 1]

    def test_duplicate_actor_id_rejected(self):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("a", 1.0))
        with pytest.raises(ValueError):
            grid.add_actor(StaticActor("a", 2.0))

    def test_failing_actor_becomes_step_error(self):
        class Broken(Actor):
            actor_id = "broken"

            def power(self, time_ms):
                raise RuntimeError("sensor offline")

        grid = Microgrid(dt_ms=1000)
        grid.add_actor(Broken())
        with pytest.raises(StepError) as excinfo:
            grid.step()
        assert excinfo.value.step_index == 0
        assert "broken" in str(excinfo.value)

    def test_failing_controller_becomes_step_error(self):
        def explode(view):
            raise RuntimeError("controller bug")

        grid = Microgrid(dt_ms=1000)
        grid.add_controller(explode)
        with pytest.raises(StepError) as excinfo:
            grid.step()
        assert excinfo.value.step_index == 0

    def test_non_finite_actor_power_becomes_step_error(self):
        class NaNActor(Actor):
            actor_id = "nan"

            def power(self, time_ms):
                return math.nan

        grid = Microgrid(dt_ms=1000)
        grid.add_actor(NaNActor())
        with pytest.raises(StepError):
            grid.step()


class TestRun:
    def test_constant_scenario_yields_identical_ticks(self):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("node", -50.0))
        monitor = grid.run(10_000)
        assert len(monitor.ticks) == 10
        assert [tick.t for tick in monitor.ticks] == list(range(10))
        assert [tick.time_ms for tick in monitor.ticks] == [
            (k + 1) * 1000 for k in range(10)
        ]
        assert {tick.delta_p_w for tick in monitor.ticks} == {-50.0}

    def test_duration_must_be_positive_multiple_of_dt(self):
        grid = Microgrid(dt_ms=1000)
        with pytest.raises(ValueError):
            grid.run(1500)
        with pytest.raises(ValueError):
            grid.run(0)
        with pytest.raises(ValueError):
            grid.run(-1000)

    def test_deterministic_replay_is_byte_identical(self):
        def build():
            grid = Microgrid(
                dt_ms=1000, storage=SimpleBattery(capacity_j=500.0, charge_j=250.0)
            )
            grid.add_actor(TraceActor("pv", [(0, 120.0), (5000, 20.0)]))
            grid.add_actor(StaticActor("node", -80.0))
            grid.run(12_000)
            return grid.monitor.csv_bytes()

        assert build() == build()

    def test_long_virtual_scenario_tick_count(self):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("node", -260.0))
        monitor = grid.run(80 * 60 * 1000)
        assert len(monitor.ticks) == 4800


class TestMonitorCsv:
    def test_exact_serialization(self):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("pv", 500.0))
        grid.add_actor(StaticActor("node", -300.0))
        grid.run(2000)
        expected = (
            "t,time_ms,delta_p_w,e_last_j,storage_charge_j,storage_delta_j,"
            "grid_exchange_j,actor.pv_w,actor.node_w\r\n"
            "0,1000,200.0,0.0,0.0,0.0,200.0,500.0,-300.0\r\n"
            "1,2000,200.0,200.0,0.0,0.0,200.0,500.0,-300.0\r\n"
        )
        assert grid.monitor.csv_bytes().decode() == expected

    def test_header_only_when_empty(self):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("pv", 1.0))
        assert grid.monitor.csv_bytes().decode() == (
            "t,time_ms,delta_p_w,e_last_j,storage_charge_j,storage_delta_j,"
            "grid_exchange_j,actor.pv_w\r\n"
        )

    def test_to_csv_writes_file(self, tmp_path):
        grid = Microgrid(dt_ms=1000)
        grid.add_actor(StaticActor("node", -1.0))
        grid.run(1000)
        out = tmp_path / "monitor.csv"
        grid.monitor.to_csv(out)
        assert out.read_bytes() == grid.monitor.csv_bytes()


class TestBenchmarkController:
    def test_two_iteration_trace(self):
        ctrl = BenchmarkController([250, 500], runtime_ms=600_000)
        assert ctrl.step_at(0) == "start"
        assert ctrl.step_at(600_000) == "advance"
        assert [(a, v) for a, v, _ in ctrl.events] == [
            ("start", 250),
            ("stop", 250),
            ("start", 500),
        ]

    def test_no_action_before_runtime_elapses(self):
        ctrl = BenchmarkController([250, 500], runtime_ms=600_000)
        ctrl.step_at(0)
        assert ctrl.step_at(1000) is None
        assert ctrl.step_at(599_999) is None
        assert len(ctrl.events) == 1

    def test_exhausted_schedule_completes_once(self):
        ctrl = BenchmarkController([250], runtime_ms=1000)
        assert ctrl.step_at(0) == "start"
        assert ctrl.step_at(1000) == "complete"
        assert ctrl.done
        assert ctrl.step_at(2000) is None
        assert ctrl.step_at(99_000) is None
        assert [(a, v) for a, v, _ in ctrl.events] == [
            ("start", 250),
            ("complete", 250),
        ]

    @pytest.mark.parametrize("n", [1, 2, 5, 8])
    def test_event_counts_match_schedule_length(self, n):
        schedule = [250 * (i + 1) for i in range(n)]
        ctrl = BenchmarkController(schedule, runtime_ms=10_000)
        t = 0
        while not ctrl.done:
            ctrl.step_at(t)
            t += 1000
        actions = [a for a, _, _ in ctrl.events]
        assert actions.count("start") == n
        assert actions.count("stop") + actions.count("complete") == n
        assert actions.count("complete") == 1
        started = [v for a, v, _ in ctrl.events if a == "start"]
        assert started == schedule

    def test_callbacks_drive_a_load_bank(self):
        running: list[float] = []
        log: list[str] = []
        ctrl = BenchmarkController(
            [1, 4],
            runtime_ms=2000,
            on_start=lambda v: (running.append(v), log.append(f"+{v}")),
            on_stop=lambda v: (running.remove(v), log.append(f"-{v}")),
        )
        ctrl.step_at(0)
        assert running == [1]
        ctrl.step_at(2000)
        assert running == [4]
        ctrl.step_at(4000)
        assert running == []
        assert log == ["+1", "-1", "+4", "-4"]

    def test_runs_inside_engine(self):
        ctrl = BenchmarkController([10, 20, 30], runtime_ms=3000)
        grid = Microgrid(dt_ms=1000)
        grid.add_controller(ctrl)
        grid.run(12_000)
        actions = [a for a, _, _ in ctrl.events]
        assert actions.count("start") == 3
        assert actions.count("stop") == 2
        assert actions.count("complete") == 1
        assert ctrl.done

    def test_rejects_empty_schedule_and_bad_runtime(self):
        with pytest.raises(ValueError):
            BenchmarkController([], runtime_ms=1000)
        with pytest.raises(ValueError):
            BenchmarkController([1], runtime_ms=0)
