"""Client-side splitting proxy.

Every browser request is split into two legs: a local one that stays open for
the whole session, and a remote one to the information gateway that may die
and be re-established many times.  The proxy tracks how many entity bytes
each session has delivered locally; after a failure or a preemptive switch
it re-issues the request with that count as the resume offset, so the local
leg sees one uninterrupted byte stream.

Scheduling mirrors a worker pool fed by a FIFO queue: new sessions join the
tail, a bounded number run concurrently, and interrupted sessions rejoin the
tail to wait for the network to recover.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .errors import (
    MalformedRequestError,
    NoInterfaceError,
    UnsupportedMethodError,
)
from .policy import HandoffTimeEstimator, select_interface, should_preempt
from .protocol import OriginRequest, rewrite_request
from .sensing import (
    Disposition,
    EventKind,
    FailureCause,
    NetworkEvent,
    Poller,
    PollerConfig,
    classify_failure,
)

HEADER_TERMINATOR = b"\r\n\r\n"


class SessionState(str, Enum):
    QUEUED = "queued"
    ACTIVE = "active"
    INTERRUPTED = "interrupted"
    COMPLETED = "completed"
    FAILED = "failed"


_ALLOWED_TRANSITIONS = {
    (SessionState.QUEUED, SessionState.ACTIVE),
    (SessionState.ACTIVE, SessionState.INTERRUPTED),
    (SessionState.ACTIVE, SessionState.COMPLETED),
    (SessionState.INTERRUPTED, SessionState.QUEUED),
    (SessionState.INTERRUPTED, SessionState.FAILED),
}


@dataclass
class SessionRecord:
    """Bookkeeping for one HTTP session."""

    session_id: str
    origin_url: str
    created_at: float
    bytes_delivered: int = 0
    state: SessionState = SessionState.QUEUED
    last_progress_at: float = 0.0
    current_interface: str | None = None
    retries: int = 0
    total_size: int | None = None
    headers_sent: bool = False
    active_seconds: float = 0.0
    active_since: float | None = None
    preempt_started_at: float | None = None
    preempt_from_kind: object = None

    def advance(self, state: SessionState) -> None:
        if (self.state, state) not in _ALLOWED_TRANSITIONS:
            raise ValueError(f"illegal transition {self.state.value} -> {state.value}")
        self.state = state

    def add_progress(self, n: int, now: float) -> None:
        if n < 0:
            raise ValueError("progress must be non-negative")
        self.bytes_delivered += n
        self.last_progress_at = now

    @property
    def terminal(self) -> bool:
        return self.state in (SessionState.COMPLETED, SessionState.FAILED)

    def measured_bps(self, now: float) -> float | None:
        """Observed throughput over this session's streaming time, if meaningful."""
        active = self.active_seconds
        if self.active_since is not None:
            active += now - self.active_since
        if active < 1.0 or self.bytes_delivered <= 0:
            return None
        return self.bytes_delivered * 8.0 / active


class TaskQueue:
    """FIFO of session ids executed by a fixed-size worker pool."""

    def __init__(self, workers: int = 4):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self._pending: deque[str] = deque()
        self._members: set[str] = set()

    def enqueue(self, session_id: str) -> None:
        if session_id in self._members:
            raise ValueError(f"session {session_id} already queued")
        self._pending.append(session_id)
        self._members.add(session_id)

    def pop(self) -> str:
        session_id = self._pending.popleft()
        self._members.discard(session_id)
        return session_id

    def __len__(self) -> int:
        return len(self._pending)

    def __contains__(self, session_id: str) -> bool:
        return session_id in self._members


class Outcome(Enum):
    COMPLETED = "completed"
    PREEMPTIVE_EVENT = "preemptive_event"
    TRANSPORT_FAILURE = "transport_failure"
    UPSTREAM_ERROR = "upstream_error"


@dataclass(frozen=True)
class SessionOutcome:
    kind: Outcome
    cause: FailureCause | None = None
    candidate_interface: str | None = None
    from_interface: str | None = None
    detail: str = ""


class MemorySink:
    """Local leg endpoint collecting the response delivered to the browser."""

    def __init__(self, keep_bytes: bool = False):
        self.keep_bytes = keep_bytes
        self.header_block: bytes | None = None
        self.body_len = 0
        self.body = bytearray() if keep_bytes else None
        self._hash = hashlib.sha256()
        self.finished = False
        self.closed_early = False
        self.error: str | None = None

    def start(self, header_block: bytes) -> None:
        self.header_block = header_block

    def deliver(self, data: bytes) -> None:
        self.body_len += len(data)
        self._hash.update(data)
        if self.body is not None:
            self.body += data

    def finish(self) -> None:
        self.finished = True

    def abort(self, reason: str) -> None:
        if not self.finished:
            self.closed_early = True
            self.error = reason

    def hexdigest(self) -> str:
        return self._hash.hexdigest()


@dataclass
class ProxyConfig:
    workers: int = 4
    retry_budget: int | None = None  # None = retry forever
    poll_interval_s: float = 10.0
    drain_window_s: float = 2.0
    recovery_mode: str = "packet"  # "packet" resumes at offset, "session" restarts at 0
    preempt_enabled: bool = True

    def __post_init__(self):
        if self.recovery_mode not in ("packet", "session"):
            raise ValueError("recovery_mode must be 'packet' or 'session'")


class _NullObserver:
    def session_started(self, sid, url, t):  # noqa: D102
        pass

    def dispatch(self, sid, iface_id, t, open_ok):
        pass

    def body_bytes(self, sid, iface_id, fresh, dup):
        pass

    def severed(self, sid, t, cause):
        pass

    def preempt_switch(self, sid, from_iface, to_iface, t):
        pass

    def completed(self, sid, t):
        pass

    def failed(self, sid, t):
        pass


class _Attempt:
    """One remote-leg connection of a session; implements stream callbacks."""

    def __init__(self, proxy: "ProxyCore", record: SessionRecord, iface_id: str, base_offset: int):
        self.proxy = proxy
        self.record = record
        self.iface_id = iface_id
        self.base_offset = base_offset
        self.stream = None
        self.stale = False
        self.header_buf = bytearray()
        self.headers_done = False
        self.status: int | None = None
        self.content_length: int | None = None
        self.body_received = 0
        self.first_body_at: float | None = None

    # stream handler interface ------------------------------------------

    def on_chunk(self, stream, data) -> None:
        if self.stale:
            return
        payload = bytes(data)
        if not self.headers_done:
            self.header_buf += payload
            idx = self.header_buf.find(HEADER_TERMINATOR)
            if idx < 0:
                return
            head = bytes(self.header_buf[: idx + len(HEADER_TERMINATOR)])
            rest = bytes(self.header_buf[idx + len(HEADER_TERMINATOR) :])
            self._on_headers(head)
            if self.stale:
                return
            payload = rest
            if not payload:
                return
        self._on_body(payload)

    def on_end(self, stream) -> None:
        if self.stale:
            return
        self.stale = True
        if not self.headers_done or (
            self.content_length is not None and self.body_received < self.content_length
        ):
            outcome = SessionOutcome(Outcome.TRANSPORT_FAILURE, cause=FailureCause.CONN_RESET)
        else:
            outcome = SessionOutcome(Outcome.COMPLETED)
        self.proxy.handle_outcome(self.record.session_id, outcome)

    def on_failure(self, stream, cause: FailureCause) -> None:
        if self.stale:
            return
        self.stale = True
        self.proxy.handle_outcome(
            self.record.session_id, SessionOutcome(Outcome.TRANSPORT_FAILURE, cause=cause)
        )

    # internals -----------------------------------------------------------

    def _on_headers(self, head: bytes) -> None:
        self.headers_done = True
        text = head.decode("latin-1")
        lines = text.split("\r\n")
        try:
            self.status = int(lines[0].split()[1])
        except (IndexError, ValueError):
            self.status = 0
        for line in lines[1:]:
            if line.lower().startswith("content-length:"):
                try:
                    self.content_length = int(line.split(":", 1)[1].strip())
                except ValueError:
                    self.content_length = None
        if self.status != 200:
            self.stale = True
            self.proxy.handle_outcome(
                self.record.session_id,
                SessionOutcome(Outcome.UPSTREAM_ERROR, detail=lines[0]),
            )
            return
        self.proxy._headers_arrived(self.record, self.base_offset, self.content_length)

    def _on_body(self, payload: bytes) -> None:
        if self.first_body_at is None:
            self.first_body_at = self.proxy.now()
            self.proxy._first_body(self.record, self.iface_id, self.first_body_at)
        cursor = self.base_offset + self.body_received
        self.body_received += len(payload)
        delivered = self.record.bytes_delivered
        if cursor + len(payload) <= delivered:
            fresh = b""
        elif cursor >= delivered:
            fresh = payload
        else:
            fresh = payload[delivered - cursor :]
        dup = len(payload) - len(fresh)
        self.proxy._body_arrived(self.record, self.iface_id, fresh, dup)


class ProxyCore:
    """Virtual-time proxy engine: session store, scheduler, event handling.

    All mutation happens on the single-threaded virtual event loop, which is
    the serialized ownership domain: stream callbacks, poller ticks and
    network events interleave but never run concurrently.
    """

    def __init__(
        self,
        loop,
        fabric,
        gateway_base: str,
        config: ProxyConfig | None = None,
        observer=None,
        estimator: HandoffTimeEstimator | None = None,
        content_oracle: Callable[[str], str | None] | None = None,
    ):
        self.loop = loop
        self.fabric = fabric
        self.gateway_base = gateway_base
        self.config = config or ProxyConfig()
        self.observer = observer or _NullObserver()
        self.estimator = estimator or HandoffTimeEstimator()
        self.content_oracle = content_oracle
        self.progress_hook: Callable[[str, int], None] | None = None

        self.records: dict[str, SessionRecord] = {}
        self.sinks: dict[str, MemorySink] = {}
        self.origins: dict[str, OriginRequest] = {}
        self.queue = TaskQueue(self.config.workers)
        self.useless_bytes: dict[str, int] = {}
        self._attempts: dict[str, _Attempt] = {}
        self._active: set[str] = set()
        self._view: set[str] = set()
        self._poller = Poller(
            self.fabric.os_snapshot, PollerConfig(interval_T=self.config.poll_interval_s)
        )
        self._ids = itertools.count(1)
        self._started = False

    def now(self) -> float:
        return self.loop.now

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        """Take the initial interface snapshot and begin periodic polling."""
        if self._started:
            return
        self._started = True
        self._view = set(self.fabric.os_snapshot())
        self._poller.prime()
        self.loop.call_later(self.config.poll_interval_s, self._poll_tick)

    def _poll_tick(self) -> None:
        for event in self._poller.poll(self.now()):
            self.on_network_event(event)
        self.loop.call_later(self.config.poll_interval_s, self._poll_tick)

    @property
    def all_terminal(self) -> bool:
        return all(r.terminal for r in self.records.values())

    # -- public operations --------------------------------------------------

    def accept_request(self, origin: OriginRequest, sink: MemorySink | None = None) -> str:
        """Create and enqueue a session for one origin request.

        Malformed requests produce an immediate local error and no record:
        there is nothing to recover for a request that never parsed.
        """
        sink = sink or MemorySink()
        try:
            rewrite_request(origin, self.gateway_base, 0)  # validates method and URL
        except (UnsupportedMethodError, MalformedRequestError) as exc:
            sink.start(b"HTTP/1.0 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
            sink.abort(str(exc))
            raise
        session_id = f"s{next(self._ids)}"
        record = SessionRecord(session_id, origin.url, created_at=self.now())
        self.records[session_id] = record
        self.sinks[session_id] = sink
        self.origins[session_id] = origin
        self.useless_bytes[session_id] = 0
        self.queue.enqueue(session_id)
        self.observer.session_started(session_id, origin.url, self.now())
        self._pump()
        return session_id

    def run_session(self, session_id: str, interface_id: str | None = None) -> None:
        """Dispatch one queued session on an interface (the scheduler's core).

        Issues the rewritten request with the session's delivered byte count
        as the resume offset and wires stream callbacks back into outcome
        handling.
        """
        record = self.records[session_id]
        if record.state is not SessionState.QUEUED:
            raise ValueError(f"session {session_id} not queued")
        if interface_id is None:
            interface_id = self._select_interface_id()
        offset = record.bytes_delivered if self.config.recovery_mode == "packet" else 0
        request_text = rewrite_request(self.origins[session_id], self.gateway_base, offset)
        attempt = _Attempt(self, record, interface_id, offset)
        stream = self.fabric.open_stream(
            interface_id, request_text.encode("latin-1"), attempt, session_id
        )
        attempt.stream = stream
        self._attempts[session_id] = attempt
        record.advance(SessionState.ACTIVE)
        record.current_interface = interface_id
        record.active_since = self.now()
        self._active.add(session_id)
        self.observer.dispatch(session_id, interface_id, self.now(), stream.opened)

    def handle_outcome(self, session_id: str, outcome) -> str:
        """Apply the scheduling action for a session outcome.

        Returns the action taken: ``release``, ``requeue``, ``failed`` or
        ``none``.  Unknown outcome objects take the default branch and cause
        no action.
        """
        if not isinstance(outcome, SessionOutcome):
            return "none"
        record = self.records[session_id]

        if outcome.kind is Outcome.COMPLETED:
            self._finish_attempt(session_id)
            record.advance(SessionState.COMPLETED)
            self.sinks[session_id].finish()
            self.observer.completed(session_id, self.now())
            self._pump()
            return "release"

        if outcome.kind is Outcome.PREEMPTIVE_EVENT:
            attempt = self._attempts.get(session_id)
            if attempt is not None and attempt.stream is not None:
                attempt.stale = True
                attempt.stream.close(self.config.drain_window_s)
            from_interface = record.current_interface
            self._finish_attempt(session_id)
            record.preempt_started_at = self.now()
            record.preempt_from_kind = self._kind_of(from_interface)
            record.advance(SessionState.INTERRUPTED)
            record.advance(SessionState.QUEUED)
            self.queue.enqueue(session_id)
            self.observer.preempt_switch(
                session_id, from_interface, outcome.candidate_interface, self.now()
            )
            self._pump()
            return "requeue"

        if outcome.kind is Outcome.TRANSPORT_FAILURE:
            disposition = classify_failure(outcome.cause)
            if disposition is Disposition.IGNORE:
                # default branch: not a condition this layer acts on
                return "none"
            self._finish_attempt(session_id)
            record.advance(SessionState.INTERRUPTED)
            self.observer.severed(session_id, self.now(), outcome.cause)
            record.retries += 1
            budget = self.config.retry_budget
            if budget is not None and record.retries > budget:
                record.advance(SessionState.FAILED)
                self.sinks[session_id].abort(f"retry budget exhausted ({outcome.cause})")
                self.observer.failed(session_id, self.now())
                self._pump()
                return "failed"
            record.advance(SessionState.QUEUED)
            self.queue.enqueue(session_id)
            self._pump()
            return "requeue"

        if outcome.kind is Outcome.UPSTREAM_ERROR:
            self._finish_attempt(session_id)
            record.advance(SessionState.INTERRUPTED)
            record.advance(SessionState.FAILED)
            self.sinks[session_id].abort(f"upstream error: {outcome.detail}")
            self.observer.failed(session_id, self.now())
            self._pump()
            return "failed"

        return "none"

    def user_perceived_continuity(self, session_id: str) -> bool:
        """Did the local leg survive every remote failure with correct bytes?

        True only for completed sessions whose local leg was never closed
        early and whose delivered bytes match the origin content (checked
        against the content oracle when one is wired in).
        """
        record = self.records[session_id]
        if not record.terminal:
            raise ValueError(f"session {session_id} is not terminal")
        if record.state is not SessionState.COMPLETED:
            return False
        sink = self.sinks[session_id]
        if sink.closed_early:
            return False
        if self.content_oracle is not None:
            expected = self.content_oracle(session_id)
            if expected is not None and sink.hexdigest() != expected:
                return False
        return True

    # -- event handling -----------------------------------------------------

    def on_network_event(self, event: NetworkEvent) -> None:
        """Entry point for both the poller and event-driven notifications."""
        if event.kind is EventKind.CONNECTED:
            if event.interface_id in self._view:
                return
            self._view.add(event.interface_id)
            self._pump()
            if self.config.preempt_enabled:
                self._consider_preemption(event.interface_id)
        elif event.kind is EventKind.DISCONNECTED:
            self._view.discard(event.interface_id)

    def _consider_preemption(self, candidate_id: str) -> None:
        candidate = self.fabric.descriptor(candidate_id)
        for session_id in sorted(self._active):
            record = self.records[session_id]
            if record.current_interface in (None, candidate_id):
                continue
            current = self.fabric.descriptor(record.current_interface)
            if candidate.cost_metric >= current.cost_metric:
                continue
            if record.total_size is None:
                continue  # no length yet, nothing to estimate
            remaining = max(0, record.total_size - record.bytes_delivered)
            est_handoff = self.estimator.estimate(current.kind, candidate.kind)
            decision = should_preempt(
                remaining,
                current,
                candidate,
                est_handoff,
                current_measured_bps=record.measured_bps(self.now()),
            )
            if decision.preempt:
                self.handle_outcome(
                    session_id,
                    SessionOutcome(
                        Outcome.PREEMPTIVE_EVENT,
                        candidate_interface=candidate_id,
                        from_interface=record.current_interface,
                    ),
                )

    # -- internals ------------------------------------------------------------

    def _kind_of(self, iface_id: str | None):
        return self.fabric.descriptor(iface_id).kind if iface_id else None

    def _select_interface_id(self) -> str:
        descriptors = [self.fabric.descriptor(i) for i in sorted(self._view)]
        return select_interface(descriptors).id

    def _pump(self) -> None:
        while len(self.queue) and len(self._active) < self.config.workers:
            try:
                iface_id = self._select_interface_id()
            except NoInterfaceError:
                return  # queued sessions wait for a connect event
            self.run_session(self.queue.pop(), iface_id)

    def _finish_attempt(self, session_id: str) -> None:
        record = self.records[session_id]
        if record.active_since is not None:
            record.active_seconds += self.now() - record.active_since
            record.active_since = None
        self._active.discard(session_id)
        attempt = self._attempts.pop(session_id, None)
        if attempt is not None:
            attempt.stale = True

    def _headers_arrived(self, record: SessionRecord, base_offset: int, content_length: int | None) -> None:
        if content_length is not None and record.total_size is None:
            record.total_size = base_offset + content_length
        if not record.headers_sent and record.total_size is not None:
            head = (
                f"HTTP/1.0 200 OK\r\nContent-Length: {record.total_size}\r\n\r\n"
            ).encode("latin-1")
            self.sinks[record.session_id].start(head)
            record.headers_sent = True

    def _first_body(self, record: SessionRecord, iface_id: str, t: float) -> None:
        if record.preempt_started_at is not None:
            duration = t - record.preempt_started_at
            to_kind = self.fabric.descriptor(iface_id).kind
            if record.preempt_from_kind is not None:
                self.estimator.record(record.preempt_from_kind, to_kind, duration)
            record.preempt_started_at = None
            record.preempt_from_kind = None

    def _body_arrived(self, record: SessionRecord, iface_id: str, fresh: bytes, dup: int) -> None:
        if dup:
            self.useless_bytes[record.session_id] += dup
        if fresh:
            record.add_progress(len(fresh), self.now())
            self.sinks[record.session_id].deliver(fresh)
        self.observer.body_bytes(record.session_id, iface_id, len(fresh), dup)
        if fresh and self.progress_hook is not None:
            self.progress_hook(record.session_id, record.bytes_delivered)
