"""Metric and label names shared by the emulated exporter and its consumers.

These strings are the compatibility surface of the per-process power
exporter being emulated; queries in the calibration layer must match the
emitter byte for byte.
"""

POWER_COUNTER_METRIC = "kepler_container_platform_joules_total"

NAMESPACE_LABEL = "container_namespace"
MODE_LABEL = "mode"
PROCESS_LABEL = "process"

MODE_DYNAMIC = "dynamic"
MODE_IDLE = "idle"

SYSTEM_NAMESPACE = "system"

METER_GAUGE_METRIC = "socket_meter_watts"
