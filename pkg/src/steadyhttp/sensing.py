"""Network awareness: failure classification, interface polling, delay analytics.

Two complementary sensing paths feed the proxy.  The event-driven path
classifies the error codes raised by failing transfers; the polling path
compares interface snapshots taken every few seconds and reports interfaces
that appeared or disappeared.  The analytics functions quantify how stale
the polled picture can get: when the environment changes as a Poisson
process with intensity ``lam`` and snapshots are taken every ``T`` seconds,
the long-run time-averaged staleness admits the closed-form upper bound
computed by :func:`delay_bound`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np


class InterfaceKind(str, Enum):
    CELLULAR = "cellular"
    WLAN = "wlan"
    ETHERNET = "ethernet"


@dataclass
class InterfaceDescriptor:
    """One network attachment point.

    ``bandwidth_capacity`` is in bits/second, ``latency`` is the round-trip
    time in seconds, ``cost_metric`` is the routing preference (lower wins).
    """

    id: str
    kind: InterfaceKind
    bandwidth_capacity: float
    cost_metric: int
    available: bool = True
    latency: float = 0.0

    def __post_init__(self):
        if self.bandwidth_capacity <= 0:
            raise ValueError("bandwidth_capacity must be > 0")
        if self.cost_metric < 1:
            raise ValueError("cost_metric must be >= 1")


class FailureCause(Enum):
    """Transport-layer error taxonomy seen by the event-driven path."""

    HOST_DOWN = "host_down"
    CONN_ABORTED = "conn_aborted"
    CONN_RESET = "conn_reset"
    NET_DOWN = "net_down"
    NET_UNREACHABLE = "net_unreachable"
    NET_RESET = "net_reset"
    TRY_AGAIN = "try_again"
    NO_RECOVERY = "no_recovery"
    ADDR_NOT_AVAILABLE = "addr_not_available"


class EventKind(Enum):
    CONNECTED = "connected"
    DISCONNECTED = "disconnected"
    TRANSPORT_FAILURE = "transport_failure"
    PREEMPTIVE_CANDIDATE = "preemptive_candidate"


@dataclass(frozen=True)
class NetworkEvent:
    kind: EventKind
    interface_id: str
    timestamp: float
    cause: FailureCause | None = None


class Disposition(Enum):
    """What the session layer should do about a classified event."""

    RECOVERABLE_HANDOFF = "recoverable_handoff"
    PREEMPTIVE = "preemptive"
    IGNORE = "ignore"


#: Causes that trigger the automatic handoff/recovery path.
RECOVERABLE_CAUSES = frozenset(FailureCause)


def classify_failure(cause) -> Disposition:
    """Map a cause code to an event disposition.  Total: unknown codes are ignored."""
    if cause is EventKind.PREEMPTIVE_CANDIDATE:
        return Disposition.PREEMPTIVE
    if isinstance(cause, FailureCause) and cause in RECOVERABLE_CAUSES:
        return Disposition.RECOVERABLE_HANDOFF
    return Disposition.IGNORE


def poll_once(
    current: Iterable[str],
    previous: Iterable[str],
    timestamp: float = 0.0,
) -> list[NetworkEvent]:
    """Diff two interface snapshots into connected/disconnected events.

    Emits one ``connected`` event per interface present now but not before,
    and one ``disconnected`` event per interface that went away.  Identical
    snapshots produce no events.  Output order is deterministic: connects
    first, each group sorted by interface id.
    """
    now, before = set(current), set(previous)
    events = [
        NetworkEvent(EventKind.CONNECTED, iface, timestamp)
        for iface in sorted(now - before)
    ]
    events += [
        NetworkEvent(EventKind.DISCONNECTED, iface, timestamp)
        for iface in sorted(before - now)
    ]
    return events


@dataclass
class PollerConfig:
    """Polling cadence, plus the environment change rate when used analytically."""

    interval_T: float = 10.0
    change_rate_lambda: float | None = None

    def __post_init__(self):
        if self.interval_T <= 0:
            raise ValueError("interval_T must be > 0")
        if self.change_rate_lambda is not None and self.change_rate_lambda <= 0:
            raise ValueError("change_rate_lambda must be > 0")


class Poller:
    """Stateful snapshot differ driving :func:`poll_once` on a schedule.

    The caller supplies ``snapshot`` (returns the ids of currently visible
    interfaces) and invokes :meth:`poll` periodically; returned events are the
    exact symmetric difference against the previous snapshot.
    """

    def __init__(self, snapshot: Callable[[], Iterable[str]], config: PollerConfig | None = None):
        self._snapshot = snapshot
        self.config = config or PollerConfig()
        self._previous: set[str] = set()
        self._primed = False

    def prime(self) -> None:
        """Record the initial snapshot without emitting events."""
        self._previous = set(self._snapshot())
        self._primed = True

    def poll(self, timestamp: float) -> list[NetworkEvent]:
        current = set(self._snapshot())
        if not self._primed:
            self._previous = current
            self._primed = True
            return []
        events = poll_once(current, self._previous, timestamp)
        self._previous = current
        return events


# --- detection delay analytics -------------------------------------------

# The polled picture lags reality.  With changes arriving at Poisson rate
# lam and polls every T seconds, define the staleness D(t) as the age of the
# most recent unreported change (zero when nothing changed yet in the
# current polling cycle).  delay_bound() gives the closed-form upper bound
# on the long-run time average of D; it is exactly the same average computed
# for the first change of each cycle only, which dominates because later
# changes are younger.


def _validate_positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0) or not math.isfinite(value):
            raise ValueError(f"{name} must be positive and finite, got {value}")


def delay_bound(T: float, lam: float) -> float:
    """Upper bound on the long-run mean detection delay, in seconds.

    Evaluates ((T*lam)**2 - 2*T*lam + 2 - 2*exp(-T*lam)) / (2*T*lam**2).
    A series expansion is used for small T*lam where the closed form loses
    all significant digits; the limit for T*lam -> 0 is T**2*lam/6, and the
    bound approaches T/2 as T*lam grows.
    """
    _validate_positive(T=T, lam=lam)
    x = T * lam
    if x < 0.5:
        # bound = T * sum_{k>=3} (-1)^(k+1) x^(k-2) / k!
        total = 0.0
        term = x / 6.0  # k = 3 term
        for k in range(3, 24):
            total += term
            term *= -x / (k + 1)
            if abs(term) < 1e-18 * max(abs(total), 1e-300):
                break
        return T * total
    return (x * x - 2.0 * x + 2.0 - 2.0 * math.exp(-x)) / (2.0 * T * lam * lam)


def _poisson_tail(n: int, x: float) -> float:
    """P(N >= n) for N ~ Poisson(x), summed from the tail to avoid cancellation."""
    if x <= 0:
        return 0.0
    if x > 700.0:
        return 1.0  # P(N < n) is astronomically small for the n used here
    # term for i = n
    log_term = -x + n * math.log(x) - math.lgamma(n + 1)
    term = math.exp(log_term)
    total = 0.0
    i = n
    while True:
        total += term
        i += 1
        term *= x / i
        if term < total * 1e-18 or i > n + int(10 * math.sqrt(x)) + 200:
            break
    return min(total, 1.0)


def expected_delay_nth(n: int, tau: float, lam: float) -> float:
    """Expected age contribution of the n-th change by time ``tau``.

    The arrival time of the n-th change is gamma distributed; integrating
    (tau - s) against that density over (0, tau] gives

        tau * P(N(tau) >= n) - (n / lam) * P(N(tau) >= n + 1).

    For n = 1 this reduces to tau * (1 - (1 - exp(-lam*tau)) / (lam*tau)),
    which is also the integrand whose cycle average is :func:`delay_bound`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _validate_positive(tau=tau, lam=lam)
    x = lam * tau
    if n == 1:
        a = -math.expm1(-x)  # 1 - exp(-x), accurately
        return tau * a - (a - x * math.exp(-x)) / lam
    return tau * _poisson_tail(n, x) - (n / lam) * _poisson_tail(n + 1, x)


@dataclass(frozen=True)
class DetectionDelayEstimate:
    mean: float
    stderr: float
    cycles: int


def simulate_detection_delay_stats(
    T: float, lam: float, cycles: int, seed: int = 0
) -> DetectionDelayEstimate:
    """Monte Carlo estimate of the long-run mean detection delay.

    Each cycle of length ``T`` draws Poisson(lam) change times; the staleness
    integral accumulates (tau - S_last(tau)) dtau, counting zero before the
    cycle's first change, and the estimate is total / (cycles * T).
    Deterministic for a given seed.
    """
    _validate_positive(T=T, lam=lam)
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    rng = np.random.default_rng(seed)

    per_cycle = np.empty(cycles, dtype=np.float64)
    expected_per_cycle = lam * T
    batch = max(1, min(cycles, int(4_000_000 / max(expected_per_cycle, 1.0))))
    done = 0
    while done < cycles:
        n = min(batch, cycles - done)
        horizon = n * T
        draw = int(lam * horizon + 6.0 * math.sqrt(lam * horizon) + 16.0)
        s = np.cumsum(rng.exponential(1.0 / lam, draw))
        while s.size and s[-1] < horizon:
            more = np.cumsum(rng.exponential(1.0 / lam, draw)) + s[-1]
            s = np.concatenate([s, more])
        s = s[s < horizon]

        gap_sq = np.zeros(n)
        tail_sq = np.zeros(n)
        if s.size:
            cyc = np.floor_divide(s, T).astype(np.int64)
            within = s - cyc * T
            diffs = np.diff(within)
            same = np.diff(cyc) == 0
            if diffs.size:
                gap_sq = np.bincount(
                    cyc[1:][same], weights=diffs[same] ** 2, minlength=n
                )
            last = np.ones(s.size, dtype=bool)
            last[:-1] = np.diff(cyc) != 0
            tail = T - within[last]
            tail_sq = np.bincount(cyc[last], weights=tail**2, minlength=n)
        per_cycle[done : done + n] = (gap_sq + tail_sq) / (2.0 * T)
        done += n

    mean = float(per_cycle.mean())
    stderr = float(per_cycle.std(ddof=1) / math.sqrt(cycles)) if cycles > 1 else 0.0
    return DetectionDelayEstimate(mean=mean, stderr=stderr, cycles=cycles)


def simulate_detection_delay(T: float, lam: float, cycles: int, seed: int = 0) -> float:
    """Empirical mean detection delay; see :func:`simulate_detection_delay_stats`."""
    return simulate_detection_delay_stats(T, lam, cycles, seed).mean


@dataclass(frozen=True)
class DelayModel:
    """Polling interval and environment change intensity, bundled for sweeps."""

    T: float
    lam: float

    def __post_init__(self):
        _validate_positive(T=self.T, lam=self.lam)

    def bound(self) -> float:
        return delay_bound(self.T, self.lam)

    def expected_nth(self, n: int, tau: float) -> float:
        return expected_delay_nth(n, tau, self.lam)

    def simulate(self, cycles: int, seed: int = 0) -> DetectionDelayEstimate:
        return simulate_detection_delay_stats(self.T, self.lam, cycles, seed)
