"""Per-transfer measurements and deterministic report writers.

The collector is a passive observer wired into both the proxy (session
lifecycle, byte accounting) and the fabric (link truth changes, drained
bytes).  Metrics are derived after the run from the recorded event logs, so
measurement never perturbs scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

#: CSV column order is the TransferMetrics field order, verbatim.
CSV_COLUMNS = (
    "overall_time_s",
    "disconnect_time_s",
    "handoff_delay_s",
    "detection_delay_s",
    "useless_traffic_bytes",
    "per_interface_bytes",
    "completed",
)


@dataclass
class TransferMetrics:
    overall_time_s: float
    disconnect_time_s: float
    handoff_delay_s: float
    detection_delay_s: float
    useless_traffic_bytes: int
    per_interface_bytes: dict[str, int]
    completed: bool


class MetricsCollector:
    """Observer recording proxy and fabric events for later aggregation."""

    def __init__(self):
        self.initial_truth: dict[str, bool] = {}
        self.truth_log: list[tuple[float, str, bool]] = []
        self.session_start: dict[str, float] = {}
        self.dispatches: dict[str, list[tuple[float, str, bool]]] = {}
        self.severs: dict[str, list[tuple[float, object]]] = {}
        self.preempts: dict[str, list[tuple[float, str | None, str | None]]] = {}
        self.iface_bytes: dict[str, dict[str, int]] = {}
        self.useless: dict[str, int] = {}
        self.completed_at: dict[str, float] = {}
        self.failed_at: dict[str, float] = {}
        self.warnings: list[str] = []

    # -- proxy-side hooks ---------------------------------------------

    def session_started(self, sid: str, url: str, t: float) -> None:
        self.session_start[sid] = t
        self.dispatches[sid] = []
        self.severs[sid] = []
        self.preempts[sid] = []
        self.iface_bytes[sid] = {}
        self.useless[sid] = 0

    def dispatch(self, sid: str, iface_id: str, t: float, open_ok: bool) -> None:
        self.dispatches[sid].append((t, iface_id, open_ok))

    def body_bytes(self, sid: str, iface_id: str, fresh: int, dup: int) -> None:
        counts = self.iface_bytes[sid]
        counts[iface_id] = counts.get(iface_id, 0) + fresh + dup
        if dup:
            self.useless[sid] += dup

    def severed(self, sid: str, t: float, cause) -> None:
        self.severs[sid].append((t, cause))

    def preempt_switch(self, sid: str, from_iface, to_iface, t: float) -> None:
        self.preempts[sid].append((t, from_iface, to_iface))

    def completed(self, sid: str, t: float) -> None:
        self.completed_at[sid] = t

    def failed(self, sid: str, t: float) -> None:
        self.failed_at[sid] = t

    # -- fabric-side hooks ----------------------------------------------

    def set_initial_truth(self, iface_id: str, up: bool) -> None:
        self.initial_truth[iface_id] = up

    def truth_changed(self, iface_id: str, up: bool, t: float) -> None:
        self.truth_log.append((t, iface_id, up))

    def useless_bytes(self, sid: str, iface_id: str, n: int) -> None:
        counts = self.iface_bytes.setdefault(sid, {})
        counts[iface_id] = counts.get(iface_id, 0) + n
        self.useless[sid] = self.useless.get(sid, 0) + n

    def warning(self, text: str) -> None:
        self.warnings.append(text)

    # -- aggregation ---------------------------------------------------

    def outage_intervals(self) -> list[tuple[float, float]]:
        """Time intervals during which no interface was physically up."""
        state = dict(self.initial_truth)
        intervals: list[tuple[float, float]] = []
        open_start = 0.0 if state and not any(state.values()) else None
        for t, iface_id, up in self.truth_log:
            was_any = any(state.values())
            state[iface_id] = up
            now_any = any(state.values())
            if was_any and not now_any:
                open_start = t
            elif not was_any and now_any and open_start is not None:
                intervals.append((open_start, t))
                open_start = None
        if open_start is not None:
            intervals.append((open_start, math.inf))
        return intervals

    @staticmethod
    def _overlap(intervals: list[tuple[float, float]], a: float, b: float) -> float:
        total = 0.0
        for start, end in intervals:
            total += max(0.0, min(end, b) - max(start, a))
        return total

    def _last_truth_up(self, iface_id: str, before: float) -> float | None:
        found = None
        for t, candidate, up in self.truth_log:
            if candidate == iface_id and up and t <= before:
                found = t
        return found

    def compute(self, sid: str) -> TransferMetrics:
        start = self.session_start[sid]
        completed = sid in self.completed_at
        end = self.completed_at.get(sid, self.failed_at.get(sid, start))
        overall = end - start

        ok_dispatch_times = [t for t, _, ok in self.dispatches[sid] if ok]
        outages = self.outage_intervals()
        disconnect = 0.0
        handoff = 0.0
        cursor = 0
        for t_sever, _cause in self.severs[sid]:
            while cursor < len(ok_dispatch_times) and ok_dispatch_times[cursor] < t_sever:
                cursor += 1
            resume = ok_dispatch_times[cursor] if cursor < len(ok_dispatch_times) else end
            cursor += 1
            disconnect += resume - t_sever
            handoff += self._overlap(outages, t_sever, resume)

        detection = disconnect - handoff
        for t_preempt, _from, to_iface in self.preempts[sid]:
            if to_iface is None:
                continue
            up_at = self._last_truth_up(to_iface, t_preempt)
            if up_at is not None:
                detection += t_preempt - up_at

        return TransferMetrics(
            overall_time_s=overall,
            disconnect_time_s=disconnect,
            handoff_delay_s=handoff,
            detection_delay_s=detection,
            useless_traffic_bytes=self.useless.get(sid, 0),
            per_interface_bytes=dict(sorted(self.iface_bytes.get(sid, {}).items())),
            completed=completed,
        )


def _format_value(name: str, value) -> str:
    if name == "per_interface_bytes":
        return ";".join(f"{k}={v}" for k, v in sorted(value.items()))
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def metrics_to_csv(rows: list[TransferMetrics]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        values = [
            _format_value(name, getattr(row, name)) for name in CSV_COLUMNS
        ]
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def metrics_to_json(rows: list[TransferMetrics]) -> str:
    payload = []
    for row in rows:
        payload.append(
            {
                "overall_time_s": round(row.overall_time_s, 6),
                "disconnect_time_s": round(row.disconnect_time_s, 6),
                "handoff_delay_s": round(row.handoff_delay_s, 6),
                "detection_delay_s": round(row.detection_delay_s, 6),
                "useless_traffic_bytes": row.useless_traffic_bytes,
                "per_interface_bytes": dict(sorted(row.per_interface_bytes.items())),
                "completed": row.completed,
            }
        )
    return json.dumps(payload, indent=2) + "\n"
