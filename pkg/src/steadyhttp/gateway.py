"""Information gateway: fetch origin content from a byte offset and relay it.

The gateway is stateless with respect to correctness: every request carries
the origin URL and the resume offset, so any dispatch can be served with no
memory of earlier ones.  DispatchRecords exist purely for observability
(byte accounting in tests and metrics).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Protocol

from .errors import (
    MalformedOffsetError,
    MalformedRequestError,
    OriginUnreachableError,
)
from .protocol import parse_gateway_request

DEFAULT_DISPATCH_PATH = "/scripts/dis.dll"
READ_CHUNK = 65536


class OriginClient(Protocol):
    """Anything that can open an origin resource at an offset."""

    def open(self, url: str, offset: int) -> tuple[int, "SupportsRead"]: ...


class SupportsRead(Protocol):
    def read(self, n: int) -> memoryview | bytes: ...


class ResponseChannel(Protocol):
    """Transport half the gateway writes into (virtual stream or socket)."""

    def start(self, header_block: bytes) -> None: ...

    def serve(self, reader: SupportsRead, content_length: int) -> None: ...

    def fail(self, message: str) -> None: ...


@dataclass
class DispatchRecord:
    request_id: str
    origin_url: str
    begin_offset: int
    bytes_relayed: int = 0
    status: int = 200


class _CountingReader:
    """Wraps an origin reader so every pulled byte lands in the record."""

    def __init__(self, reader: SupportsRead, record: DispatchRecord):
        self._reader = reader
        self._record = record

    def read(self, n: int):
        chunk = self._reader.read(n)
        self._record.bytes_relayed += len(chunk)
        return chunk


def _response_head(status: int, reason: str, content_length: int) -> bytes:
    return (
        f"HTTP/1.0 {status} {reason}\r\nContent-Length: {content_length}\r\n\r\n"
    ).encode("latin-1")


def fetch_at_offset(origin: OriginClient, url: str, offset: int) -> Iterator[bytes]:
    """Stream origin bytes [offset, size) in chunks.

    When the origin dies mid-stream a TruncatedUpstreamError escapes after
    the bytes read so far were yielded; the requester resumes later from its
    own delivered count.
    """
    if offset < 0:
        raise MalformedOffsetError(f"negative offset {offset}")
    _, reader = origin.open(url, offset)
    while True:
        chunk = reader.read(READ_CHUNK)
        if not len(chunk):
            return
        yield bytes(chunk)


class Gateway:
    """Request dispatcher sitting between mobile hosts and origin servers."""

    def __init__(self, origin: OriginClient, dispatch_path: str = DEFAULT_DISPATCH_PATH):
        self.origin = origin
        self.dispatch_path = dispatch_path
        self.records: list[DispatchRecord] = []
        self._ids = itertools.count(1)

    def dispatch(self, raw_request: bytes | str, channel: ResponseChannel) -> DispatchRecord:
        """Parse one proxy request and relay origin content into the channel.

        Relays bytes [begin_offset, size); an offset at or past the end is a
        completed download and yields an empty 200 body.  Parse errors
        produce a 400, an unreachable origin produces a 502.
        """
        record = DispatchRecord(request_id=f"d{next(self._ids)}", origin_url="", begin_offset=0)
        self.records.append(record)
        try:
            origin_url, offset = parse_gateway_request(raw_request)
        except (MalformedRequestError, MalformedOffsetError) as exc:
            record.status = 400
            body = f"bad request: {exc}".encode()
            channel.start(_response_head(400, "Bad Request", len(body)))
            channel.serve(_BytesReader(body), len(body))
            return record

        record.origin_url = origin_url
        record.begin_offset = offset
        try:
            size, reader = self.origin.open(origin_url, offset)
        except OriginUnreachableError:
            record.status = 502
            channel.start(_response_head(502, "Bad Gateway", 0))
            channel.serve(_BytesReader(b""), 0)
            return record

        remaining = max(0, size - offset)
        channel.start(_response_head(200, "OK", remaining))
        channel.serve(_CountingReader(reader, record), remaining)
        return record


class _BytesReader:
    def __init__(self, payload: bytes):
        self._view = memoryview(payload)
        self._pos = 0

    def read(self, n: int):
        chunk = self._view[self._pos : self._pos + n]
        self._pos += len(chunk)
        return chunk
