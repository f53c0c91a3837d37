"""Exception types shared across the proxy, gateway and harness."""


class ProtocolError(Exception):
    """Base class for request/stream protocol violations."""


class UnsupportedMethodError(ProtocolError):
    """Request method other than GET."""


class MalformedRequestError(ProtocolError):
    """Request text that cannot be parsed into the expected shape."""


class MalformedOffsetError(ProtocolError):
    """Resume offset header present but negative or non-numeric."""


class GapDetectedError(ProtocolError):
    """Fragments do not cover a contiguous byte range.

    A gap means bytes are missing; they must be re-fetched, never invented.
    """

    def __init__(self, expected_offset: int, actual_offset: int):
        super().__init__(
            f"fragment gap: expected next byte {expected_offset}, "
            f"fragment starts at {actual_offset}"
        )
        self.expected_offset = expected_offset
        self.actual_offset = actual_offset


class NoInterfaceError(Exception):
    """Interface selection invoked with no available interface."""


class TruncatedUpstreamError(Exception):
    """Origin stream ended before the advertised length was delivered."""

    def __init__(self, delivered: int, expected: int):
        super().__init__(f"upstream truncated after {delivered} of {expected} bytes")
        self.delivered = delivered
        self.expected = expected


class OriginUnreachableError(Exception):
    """The gateway could not reach the origin server."""


class ScenarioError(Exception):
    """Scenario file is syntactically or semantically invalid."""
