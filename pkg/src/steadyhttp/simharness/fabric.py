"""Virtual network fabric: interfaces, shaped streams, failure injection.

Streams carry real bytes between the proxy and the gateway, but their timing
is simulated: each interface drains its open streams through a token bucket
ticked on the virtual clock, and round-trip latency delays the first byte.
Link state is tracked twice, deliberately:

* ``truth`` is the physical link.  Going down severs open streams at once
  (the in-band failure an active transfer feels immediately).
* ``os_up`` is what the host OS has reported.  NIC-level changes reach it
  late (a disconnect report is debounced for several seconds, a connect
  report takes a moment), so the proxy's polled view lags reality exactly
  the way the analytics in :mod:`steadyhttp.sensing` model.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

from ..errors import TruncatedUpstreamError
from ..sensing import EventKind, FailureCause, InterfaceDescriptor, NetworkEvent
from .clock import EventLoop


@dataclass
class FabricConfig:
    tick_s: float = 0.01
    connect_event_latency: float = 2.0
    disconnect_event_latency: float = 10.0
    subnet_handoff_delay: float = 17.4
    connect_fail_delay: float = 1.0
    drain_window_s: float = 2.0
    highwater: int = 65536
    lowwater: int = 16384


class StreamHandler:
    """Callbacks the proxy side of a stream implements."""

    def on_chunk(self, stream: "VirtualStream", data: memoryview) -> None:  # pragma: no cover
        raise NotImplementedError

    def on_end(self, stream: "VirtualStream") -> None:  # pragma: no cover
        raise NotImplementedError

    def on_failure(self, stream: "VirtualStream", cause: FailureCause) -> None:  # pragma: no cover
        raise NotImplementedError


class VirtualStream:
    """One proxy-to-gateway connection bound to an interface attachment."""

    _ids = itertools.count(1)

    def __init__(self, fabric: "VirtualFabric", iface: "_Interface", handler, session_id: str):
        self.stream_id = next(VirtualStream._ids)
        self.fabric = fabric
        self.iface = iface
        self.handler = handler
        self.session_id = session_id
        self.opened = False           # truth link was up at open time
        self.eligible_at = 0.0        # no deliveries before this (RTT)
        self.tx: deque[memoryview] = deque()
        self.tx_len = 0
        self.reader = None
        self.eof_pending = False
        self.fail_cause: FailureCause | None = None
        self.draining = False
        self.drain_deadline = 0.0
        self.detached = False

    # -- gateway side -------------------------------------------------

    def enqueue(self, data: bytes | memoryview) -> None:
        view = memoryview(data) if isinstance(data, bytes) else data
        if len(view):
            self.tx.append(view)
            self.tx_len += len(view)

    def set_reader(self, reader) -> None:
        self.reader = reader
        self._pull()

    def mark_eof(self) -> None:
        self.eof_pending = True
        self.reader = None

    def mark_failed(self, cause: FailureCause) -> None:
        self.fail_cause = cause
        self.reader = None

    def _pull(self) -> None:
        cfg = self.fabric.config
        while self.reader is not None and self.tx_len < cfg.highwater:
            try:
                chunk = self.reader.read(cfg.highwater - self.tx_len)
            except TruncatedUpstreamError:
                # upstream died: whatever is queued still arrives, then the
                # requester sees a reset and resumes from its own count
                self.mark_failed(FailureCause.CONN_RESET)
                return
            if not len(chunk):
                self.mark_eof()
                return
            self.enqueue(chunk)

    # -- proxy side ---------------------------------------------------

    def close(self, drain_window_s: float) -> None:
        """Voluntary close (preemptive switch).

        Bytes already in flight keep arriving for ``drain_window_s`` and are
        counted as useless traffic; nothing new is fetched.
        """
        if self.detached or self.draining:
            return
        self.reader = None
        self.eof_pending = False
        self.fail_cause = None
        if drain_window_s <= 0 or not self.tx_len:
            self.iface.detach(self)
        else:
            self.draining = True
            self.drain_deadline = self.fabric.loop.now + drain_window_s
            self.iface.ensure_tick()

    def sendable(self, now: float) -> bool:
        if self.tx_len == 0 or now < self.eligible_at:
            return False
        if self.draining and now > self.drain_deadline:
            return False
        return True


class _Channel:
    """Gateway-facing response channel writing into a virtual stream."""

    def __init__(self, stream: VirtualStream):
        self._stream = stream

    def start(self, header_block: bytes) -> None:
        self._stream.enqueue(header_block)
        self._stream.iface.ensure_tick()

    def serve(self, reader, content_length: int) -> None:
        self._stream.set_reader(reader)
        self._stream.iface.ensure_tick()

    def fail(self, message: str) -> None:
        self._stream.mark_failed(FailureCause.CONN_RESET)
        self._stream.iface.ensure_tick()


class _Interface:
    def __init__(self, descriptor: InterfaceDescriptor, utilization: float):
        if not (0.0 < utilization <= 1.0):
            raise ValueError("utilization must be in (0, 1]")
        self.descriptor = descriptor
        self.utilization = utilization
        self.truth_up = descriptor.available
        self.os_up = descriptor.available
        self.attachment_gen = 0
        self.streams: dict[int, VirtualStream] = {}
        self.frac_carry = 0.0
        self.tick_timer = None
        self.pending_os_timer = None
        self.fabric: "VirtualFabric | None" = None

    @property
    def id(self) -> str:
        return self.descriptor.id

    @property
    def rate_bytes_per_s(self) -> float:
        return self.descriptor.bandwidth_capacity * self.utilization / 8.0

    def attach(self, stream: VirtualStream) -> None:
        self.streams[stream.stream_id] = stream
        self.ensure_tick()

    def detach(self, stream: VirtualStream) -> None:
        stream.detached = True
        self.streams.pop(stream.stream_id, None)

    def ensure_tick(self) -> None:
        if self.tick_timer is None and self.fabric is not None and self.streams:
            self.tick_timer = self.fabric.loop.call_later(
                self.fabric.config.tick_s, self.fabric._tick, self
            )


class VirtualFabric:
    """Owns interfaces, streams and injected state changes."""

    def __init__(
        self,
        loop: EventLoop,
        remote_endpoint,
        config: FabricConfig | None = None,
        observer=None,
    ):
        self.loop = loop
        self.remote_endpoint = remote_endpoint  # callable(raw_request, channel)
        self.config = config or FabricConfig()
        self.observer = observer
        self.event_sink = None  # callable(NetworkEvent)
        self.warnings: list[str] = []
        self._ifaces: dict[str, _Interface] = {}

    # -- setup ----------------------------------------------------------

    def add_interface(self, descriptor: InterfaceDescriptor, utilization: float = 1.0) -> None:
        iface = _Interface(descriptor, utilization)
        iface.fabric = self
        self._ifaces[descriptor.id] = iface

    def interface_ids(self) -> list[str]:
        return sorted(self._ifaces)

    def descriptor(self, iface_id: str) -> InterfaceDescriptor:
        return self._ifaces[iface_id].descriptor

    def truth_available(self, iface_id: str) -> bool:
        return self._ifaces[iface_id].truth_up

    def os_snapshot(self) -> set[str]:
        """Interface ids the host OS currently reports as connected."""
        return {i.id for i in self._ifaces.values() if i.os_up}

    # -- streams ---------------------------------------------------------

    def open_stream(self, iface_id: str, request_bytes: bytes, handler, session_id: str) -> VirtualStream:
        iface = self._ifaces[iface_id]
        stream = VirtualStream(self, iface, handler, session_id)
        now = self.loop.now
        if not iface.truth_up:
            self.loop.call_later(
                self.config.connect_fail_delay,
                handler.on_failure,
                stream,
                FailureCause.NET_UNREACHABLE,
            )
            return stream
        stream.opened = True
        stream.eligible_at = now + iface.descriptor.latency
        iface.attach(stream)
        self.loop.call_later(
            iface.descriptor.latency / 2.0,
            self._deliver_request,
            stream,
            request_bytes,
        )
        return stream

    def _deliver_request(self, stream: VirtualStream, request_bytes: bytes) -> None:
        if stream.detached:
            return  # link died while the request was in flight
        self.remote_endpoint(request_bytes, _Channel(stream))

    def sever_session(self, session_id: str, cause: FailureCause) -> None:
        """Cut every open stream of one session (targeted failure injection)."""
        for iface in self._ifaces.values():
            for stream in list(iface.streams.values()):
                if stream.session_id == session_id and not stream.draining:
                    iface.detach(stream)
                    stream.handler.on_failure(stream, cause)

    # -- shaping ----------------------------------------------------------

    def _tick(self, iface: _Interface) -> None:
        iface.tick_timer = None
        now = self.loop.now
        budget_f = iface.rate_bytes_per_s * self.config.tick_s + iface.frac_carry
        budget = int(budget_f)
        iface.frac_carry = budget_f - budget

        # drop streams whose drain window expired; leftover bytes evaporate
        for stream in list(iface.streams.values()):
            if stream.draining and now > stream.drain_deadline:
                iface.detach(stream)

        ordered = sorted(iface.streams.values(), key=lambda s: s.stream_id)
        # two passes: an equal split, then leftovers in id order
        for _ in range(2):
            active = [s for s in ordered if s.sendable(now)]
            if not active or budget <= 0:
                break
            share = max(1, budget // len(active))
            for stream in active:
                if budget <= 0:
                    break
                n = min(share, budget, stream.tx_len)
                if n <= 0:
                    continue
                self._send(stream, n)
                budget -= n

        for stream in list(iface.streams.values()):
            if stream.reader is not None and stream.tx_len < self.config.lowwater:
                stream._pull()
            if stream.tx_len == 0:
                if stream.draining:
                    iface.detach(stream)
                elif stream.eof_pending:
                    iface.detach(stream)
                    stream.handler.on_end(stream)
                elif stream.fail_cause is not None:
                    cause = stream.fail_cause
                    iface.detach(stream)
                    stream.handler.on_failure(stream, cause)

        if any(s.tx_len or s.reader for s in iface.streams.values()):
            iface.ensure_tick()

    def _send(self, stream: VirtualStream, n: int) -> None:
        remaining = n
        parts: list[memoryview] = []
        while remaining > 0:
            head = stream.tx[0]
            if len(head) <= remaining:
                parts.append(head)
                stream.tx.popleft()
                remaining -= len(head)
            else:
                parts.append(head[:remaining])
                stream.tx[0] = head[remaining:]
                remaining = 0
        stream.tx_len -= n
        if stream.draining:
            if self.observer is not None:
                self.observer.useless_bytes(stream.session_id, stream.iface.id, n)
            return
        for part in parts:
            stream.handler.on_chunk(stream, part)

    # -- link state and injection -----------------------------------------

    def _warn(self, text: str) -> None:
        self.warnings.append(text)
        if self.observer is not None:
            self.observer.warning(text)

    def _set_truth(self, iface: _Interface, up: bool, cause: FailureCause | None) -> None:
        iface.truth_up = up
        if self.observer is not None:
            self.observer.truth_changed(iface.id, up, self.loop.now)
        if not up:
            for stream in list(iface.streams.values()):
                iface.detach(stream)
                if not stream.draining:
                    stream.handler.on_failure(stream, cause or FailureCause.NET_DOWN)

    def _fire_os(self, iface: _Interface, up: bool) -> None:
        iface.pending_os_timer = None
        if iface.os_up == up:
            return
        iface.os_up = up
        if self.event_sink is not None:
            kind = EventKind.CONNECTED if up else EventKind.DISCONNECTED
            self.event_sink(NetworkEvent(kind, iface.id, self.loop.now))

    def _schedule_os(self, iface: _Interface, up: bool, delay: float) -> None:
        if iface.pending_os_timer is not None:
            # a newer transition supersedes the one still in flight
            iface.pending_os_timer.cancel()
            iface.pending_os_timer = None
        if delay <= 0:
            self._fire_os(iface, up)
        else:
            iface.pending_os_timer = self.loop.call_later(delay, self._fire_os, iface, up)

    def apply_action(self, kind: str, iface_id: str, to_id: str | None = None) -> None:
        """Apply one scenario timeline action at the current virtual time.

        Actions that do not apply to the interface's current state (powering
        off an AP that is already off, and so on) are no-ops recorded as
        warnings.
        """
        iface = self._ifaces[iface_id]
        cfg = self.config
        if kind == "enable":
            if iface.truth_up:
                return self._warn(f"enable {iface_id}: already up")
            self._set_truth(iface, True, None)
            self._schedule_os(iface, True, 0.0)
        elif kind == "disable":
            if not iface.truth_up:
                return self._warn(f"disable {iface_id}: already down")
            self._set_truth(iface, False, FailureCause.NET_DOWN)
            self._schedule_os(iface, False, 0.0)
        elif kind == "ap_power_off":
            if not iface.truth_up:
                return self._warn(f"ap_power_off {iface_id}: already down")
            self._set_truth(iface, False, FailureCause.CONN_RESET)
            self._schedule_os(iface, False, 0.0)
        elif kind == "ap_power_on":
            if iface.truth_up:
                return self._warn(f"ap_power_on {iface_id}: already up")
            self._set_truth(iface, True, None)
            self._schedule_os(iface, True, 0.0)
        elif kind == "nic_off":
            if not iface.truth_up:
                return self._warn(f"nic_off {iface_id}: already down")
            self._set_truth(iface, False, FailureCause.NET_DOWN)
            self._schedule_os(iface, False, cfg.disconnect_event_latency)
        elif kind == "nic_on":
            if iface.truth_up:
                return self._warn(f"nic_on {iface_id}: already up")
            self._set_truth(iface, True, None)
            self._schedule_os(iface, True, cfg.connect_event_latency)
        elif kind == "subnet_handoff":
            target = self._ifaces[to_id] if to_id else iface
            if not iface.truth_up:
                return self._warn(f"subnet_handoff {iface_id}: source already down")
            self._set_truth(iface, False, FailureCause.ADDR_NOT_AVAILABLE)
            self._schedule_os(iface, False, 0.0)
            self.loop.call_later(cfg.subnet_handoff_delay, self._finish_subnet_handoff, target)
        else:
            raise ValueError(f"unknown action {kind!r}")

    def _finish_subnet_handoff(self, target: _Interface) -> None:
        if target.truth_up:
            return self._warn(f"subnet_handoff: target {target.id} already up")
        target.attachment_gen += 1
        self._set_truth(target, True, None)
        self._schedule_os(target, True, self.config.connect_event_latency)
