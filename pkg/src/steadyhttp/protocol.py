"""Resume protocol between the client-side proxy and the information gateway.

The proxy rewrites every browser request into a gateway request that carries
the origin URL in the query string and the number of entity bytes already
delivered in a ``Session-Offset`` header.  The gateway parses that request and
relays the origin resource starting at the offset, so a transfer interrupted
at byte N continues with byte N instead of byte 0.

Wire format (bit-exact):

    GET <gateway_base>?url=<encoded-origin-url> HTTP 1.0\\r\\n
    User-Agent: Proxy/2.0\\r\\n
    Session-Offset: <offset>\\r\\n
    <further headers>\\r\\n
    \\r\\n

The request line carries the legacy ``HTTP 1.0`` token (no slash); parsing
accepts ``HTTP/1.0`` as well.  Header names are matched case-insensitively on
parse and emitted in the canonical forms above.  Offsets count entity body
bytes delivered to the local connection; header bytes are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from urllib.parse import quote, unquote, urlsplit

from .errors import (
    GapDetectedError,
    MalformedOffsetError,
    MalformedRequestError,
    UnsupportedMethodError,
)

HTTP_VERSION_TOKEN = "HTTP 1.0"
AGENT_TAG = "Proxy/2.0"
AGENT_HEADER = "User-Agent"
OFFSET_HEADER = "Session-Offset"
CRLF = "\r\n"

# Characters embedded verbatim when the origin URL travels in the query
# string.  Everything else (notably '&', '?', '=', '%', '#', spaces) is
# percent-encoded so the URL cannot be confused with further parameters.
_URL_SAFE = "/:"


@dataclass(frozen=True)
class OriginRequest:
    """A request as issued by the local web client."""

    method: str
    url: str
    version: str = HTTP_VERSION_TOKEN
    headers: tuple[tuple[str, str], ...] = ()

    def header(self, name: str) -> str | None:
        wanted = name.lower()
        for key, value in self.headers:
            if key.lower() == wanted:
                return value
        return None


@dataclass(frozen=True)
class GatewayRequest:
    """The proxy-to-gateway form of an origin request."""

    gateway_base: str
    origin_url: str
    session_offset: int
    agent_tag: str = AGENT_TAG

    def __post_init__(self):
        if self.session_offset < 0:
            raise MalformedOffsetError(f"negative offset {self.session_offset}")


@dataclass(frozen=True)
class Fragment:
    """A run of entity bytes received on one connection attempt."""

    start_offset: int
    payload: bytes
    source_interface: str = ""

    def __post_init__(self):
        if self.start_offset < 0:
            raise ValueError("fragment start_offset must be >= 0")
        if not self.payload:
            raise ValueError("fragment payload must be non-empty")

    @property
    def end_offset(self) -> int:
        """Exclusive end of the byte range covered by this fragment."""
        return self.start_offset + len(self.payload)


@dataclass(frozen=True)
class SplicedStream:
    """Contiguous byte stream assembled from fragments."""

    total_bytes: int
    content: bytes


def _require_absolute(url: str) -> None:
    parts = urlsplit(url)
    if not parts.scheme or not parts.netloc:
        raise MalformedRequestError(f"origin URL is not absolute: {url!r}")


def rewrite_request(origin: OriginRequest, gateway_base: str, offset: int) -> str:
    """Rewrite an origin request into gateway request text.

    The origin URL is wrapped in a ``url=`` query parameter unconditionally,
    even when the gateway base happens to match the origin host.  ``offset``
    is the count of entity bytes already held locally.

    Raises UnsupportedMethodError for non-GET methods and
    MalformedRequestError for relative origin URLs.
    """
    if origin.method != "GET":
        raise UnsupportedMethodError(f"method {origin.method!r} not supported")
    _require_absolute(origin.url)
    if offset < 0:
        raise MalformedOffsetError(f"negative offset {offset}")

    target = f"{gateway_base}?url={quote(origin.url, safe=_URL_SAFE)}"
    lines = [f"GET {target} {HTTP_VERSION_TOKEN}"]
    lines.append(f"{AGENT_HEADER}: {AGENT_TAG}")
    lines.append(f"{OFFSET_HEADER}: {offset}")
    for name, value in origin.headers:
        if name.lower() in (AGENT_HEADER.lower(), OFFSET_HEADER.lower()):
            continue  # the proxy speaks for itself on these two
        lines.append(f"{name}: {value}")
    return CRLF.join(lines) + CRLF + CRLF


def serialize_origin_request(request: OriginRequest) -> str:
    """Render an origin request as wire text (request line, headers, blank line)."""
    lines = [f"{request.method} {request.url} {request.version}"]
    for name, value in request.headers:
        lines.append(f"{name}: {value}")
    return CRLF.join(lines) + CRLF + CRLF


def _split_head(raw: str) -> tuple[str, list[tuple[str, str]]]:
    head = raw.split("\r\n\r\n", 1)[0]
    lines = [ln for ln in head.split("\r\n") if ln != ""]
    if not lines:
        raise MalformedRequestError("empty request")
    headers: list[tuple[str, str]] = []
    for line in lines[1:]:
        if ":" not in line:
            raise MalformedRequestError(f"malformed header line {line!r}")
        name, value = line.split(":", 1)
        headers.append((name.strip(), value.strip()))
    return lines[0], headers


def _split_request_line(line: str) -> tuple[str, str, str]:
    tokens = line.split()
    if len(tokens) == 4 and tokens[2].upper() == "HTTP":
        # legacy "HTTP 1.0" version token with an embedded space
        return tokens[0], tokens[1], f"{tokens[2]} {tokens[3]}"
    if len(tokens) == 3:
        return tokens[0], tokens[1], tokens[2]
    raise MalformedRequestError(f"malformed request line {line!r}")


def parse_origin_request(raw: str | bytes) -> OriginRequest:
    """Parse browser request text into an OriginRequest."""
    if isinstance(raw, bytes):
        raw = raw.decode("latin-1")
    line, headers = _split_head(raw)
    method, target, version = _split_request_line(line)
    return OriginRequest(method=method, url=target, version=version, headers=tuple(headers))


def parse_gateway_request(raw: str | bytes) -> tuple[str, int]:
    """Extract (origin_url, session_offset) from gateway request text.

    A missing Session-Offset header means a fresh download and defaults to 0.
    Raises MalformedRequestError when the ``url=`` parameter is absent and
    MalformedOffsetError when the offset value is negative or non-numeric.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("latin-1")
    line, headers = _split_head(raw)
    _, target, _ = _split_request_line(line)

    query = target.partition("?")[2]
    origin_url: str | None = None
    for param in query.split("&"):
        if param.startswith("url="):
            origin_url = unquote(param[4:])
            break
    if origin_url is None:
        raise MalformedRequestError("missing url= parameter")

    offset = 0
    for name, value in headers:
        if name.lower() == OFFSET_HEADER.lower():
            if not value.isdigit():
                raise MalformedOffsetError(f"bad offset value {value!r}")
            offset = int(value)
            break
    return origin_url, offset


def splice(fragments: list[Fragment]) -> SplicedStream:
    """Piece fragments together into one contiguous byte stream.

    Fragments must be sorted by start offset and the first must start at 0.
    Where ranges overlap the earlier fragment's bytes win and the duplicate
    bytes are dropped.  A gap raises GapDetectedError: the missing range has
    to be fetched again, it is never fabricated.
    """
    out = bytearray()
    for fragment in fragments:
        if fragment.start_offset > len(out):
            raise GapDetectedError(len(out), fragment.start_offset)
        skip = len(out) - fragment.start_offset
        if skip < len(fragment.payload):
            out += fragment.payload[skip:]
    return SplicedStream(total_bytes=len(out), content=bytes(out))
