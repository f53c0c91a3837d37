"""Interface selection and the preemptive-handoff decision.

Selection is cost-metric driven: the available interface with the lowest
cost wins, so a freshly appeared high-preference network is always the
candidate.  Whether an ongoing transfer should actually abandon its current
attachment for the candidate is a separate benefit test: switch only when
the estimated remaining time on the current network exceeds the estimated
remaining time on the candidate plus the switching cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NoInterfaceError
from .sensing import InterfaceDescriptor, InterfaceKind

#: Cold-start switching-cost estimates in seconds, keyed by target kind.
#: Measured discovery delays: joining a WLAN with a fixed address is quick,
#: Ethernet with DHCP address acquisition is slower, and a same-technology
#: subnet move (full address release/reacquire) is slowest.
DEFAULT_HANDOFF_SECONDS = {
    InterfaceKind.WLAN: 2.2,
    InterfaceKind.ETHERNET: 6.3,
}
SAME_KIND_HANDOFF_SECONDS = 17.4
FALLBACK_HANDOFF_SECONDS = 2.2


def select_interface(available: list[InterfaceDescriptor]) -> InterfaceDescriptor:
    """Pick the available interface with minimum cost metric.

    Ties break lexicographically by id.  Raises NoInterfaceError on an empty
    list; the caller's session then waits for a connect event.
    """
    candidates = [iface for iface in available if iface.available]
    if not candidates:
        raise NoInterfaceError("no available interface")
    return min(candidates, key=lambda iface: (iface.cost_metric, iface.id))


def effective_bandwidth(iface: InterfaceDescriptor, measured_bps: float | None = None) -> float:
    """Bandwidth used for remaining-time estimates.

    Defaults to the descriptor's capacity; a harness- or session-measured
    throughput takes precedence when supplied, since real links rarely run
    at nominal rate.
    """
    if measured_bps is not None and measured_bps > 0:
        return measured_bps
    return iface.bandwidth_capacity


@dataclass(frozen=True)
class HandoffDecision:
    preempt: bool
    from_interface: str
    to_interface: str | None
    est_remaining_current: float
    est_remaining_candidate: float
    est_handoff_time: float


def should_preempt(
    remaining_bytes: int,
    current: InterfaceDescriptor,
    candidate: InterfaceDescriptor,
    est_handoff_time: float,
    *,
    current_measured_bps: float | None = None,
    candidate_measured_bps: float | None = None,
) -> HandoffDecision:
    """Decide whether abandoning ``current`` for ``candidate`` pays off.

    Estimated remaining time on an interface is remaining_bytes * 8 divided
    by its effective bandwidth.  Preempt only on strict inequality

        est_remaining_current > est_remaining_candidate + est_handoff_time

    so equality never causes churn.  With zero bytes remaining the answer is
    always no.
    """
    if remaining_bytes < 0:
        raise ValueError("remaining_bytes must be >= 0")
    bits = remaining_bytes * 8.0
    est_current = bits / effective_bandwidth(current, current_measured_bps)
    est_candidate = bits / effective_bandwidth(candidate, candidate_measured_bps)
    preempt = est_current > est_candidate + est_handoff_time
    return HandoffDecision(
        preempt=preempt,
        from_interface=current.id,
        to_interface=candidate.id if preempt else None,
        est_remaining_current=est_current,
        est_remaining_candidate=est_candidate,
        est_handoff_time=est_handoff_time,
    )


@dataclass
class HandoffTimeEstimator:
    """Exponentially-weighted moving average of observed handoff durations.

    Keeps one running estimate per (from_kind, to_kind) pair.  Before any
    observation the estimate falls back to the cold-start defaults above.
    """

    weight: float = 0.5
    _history: dict[tuple[InterfaceKind, InterfaceKind], float] = field(default_factory=dict)

    def cold_start(self, from_kind: InterfaceKind, to_kind: InterfaceKind) -> float:
        if from_kind == to_kind:
            return SAME_KIND_HANDOFF_SECONDS
        return DEFAULT_HANDOFF_SECONDS.get(to_kind, FALLBACK_HANDOFF_SECONDS)

    def estimate(self, from_kind: InterfaceKind, to_kind: InterfaceKind) -> float:
        return self._history.get((from_kind, to_kind), self.cold_start(from_kind, to_kind))

    def record(self, from_kind: InterfaceKind, to_kind: InterfaceKind, duration: float) -> None:
        if duration < 0:
            raise ValueError("duration must be >= 0")
        key = (from_kind, to_kind)
        if key in self._history:
            prev = self._history[key]
            self._history[key] = self.weight * duration + (1.0 - self.weight) * prev
        else:
            self._history[key] = duration

    def estimate_from_history(
        self,
        from_kind: InterfaceKind,
        to_kind: InterfaceKind,
        history: list[float],
    ) -> float:
        """EWMA over an explicit history list; cold start when it is empty."""
        if not history:
            return self.cold_start(from_kind, to_kind)
        value = history[0]
        for duration in history[1:]:
            value = self.weight * duration + (1.0 - self.weight) * value
        return value


def estimate_handoff_time(
    from_kind: InterfaceKind,
    to_kind: InterfaceKind,
    history: list[float],
    estimator: HandoffTimeEstimator | None = None,
) -> float:
    """Estimate the switching cost for a kind pair from past durations."""
    return (estimator or HandoffTimeEstimator()).estimate_from_history(
        from_kind, to_kind, history
    )
