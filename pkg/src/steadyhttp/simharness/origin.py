"""Deterministic origin server stub.

Resource content is generated from (seed, resource_id), so any byte of any
resource is reproducible across runs and hosts without shipping fixtures.
The store doubles as the failure-injection point for upstream problems:
resources can be marked unreachable or armed to truncate mid-stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import OriginUnreachableError, TruncatedUpstreamError

ORIGIN_HOST = "http://origin.sim"


def resource_url(resource_id: str) -> str:
    return f"{ORIGIN_HOST}/{resource_id}"


def generate_content(seed: int, resource_id: str, size: int) -> bytes:
    """Pseudo-random but fully reproducible resource body."""
    digest = hashlib.sha256(f"{seed}:{resource_id}".encode()).digest()
    rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))
    return rng.bytes(size)


@dataclass
class OriginResource:
    resource_id: str
    size: int
    seed: int
    _content: bytes | None = field(default=None, repr=False)

    @property
    def content(self) -> bytes:
        if self._content is None:
            self._content = generate_content(self.seed, self.resource_id, self.size)
        return self._content

    def sha256(self) -> str:
        return hashlib.sha256(self.content).hexdigest()


class OriginReader:
    """Sequential reader over a resource suffix, with optional truncation."""

    def __init__(self, resource: OriginResource, offset: int, fail_after: int | None):
        self._view = memoryview(resource.content)
        self._pos = offset
        self._end = resource.size
        # absolute content position after which the upstream "dies"
        self._fail_at = fail_after

    def read(self, n: int) -> memoryview:
        """Return up to n bytes; empty view at end of stream."""
        if self._fail_at is not None and self._pos >= self._fail_at:
            raise TruncatedUpstreamError(self._pos, self._end)
        limit = self._end if self._fail_at is None else min(self._end, self._fail_at)
        take = min(n, limit - self._pos)
        if take <= 0:
            if self._fail_at is not None and self._fail_at < self._end:
                raise TruncatedUpstreamError(self._pos, self._end)
            return memoryview(b"")
        chunk = self._view[self._pos : self._pos + take]
        self._pos += take
        return chunk


class OriginStore:
    """Registry of stub resources addressed by URL."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._resources: dict[str, OriginResource] = {}
        self._unreachable: set[str] = set()
        self._fail_after: dict[str, int] = {}

    def add(self, resource_id: str, size: int) -> OriginResource:
        resource = OriginResource(resource_id, size, self.seed)
        self._resources[resource_id] = resource
        return resource

    def get(self, resource_id: str) -> OriginResource:
        return self._resources[resource_id]

    def set_reachable(self, resource_id: str, reachable: bool) -> None:
        if reachable:
            self._unreachable.discard(resource_id)
        else:
            self._unreachable.add(resource_id)

    def arm_truncation(self, resource_id: str, fail_after: int | None) -> None:
        """Make the next streams die once the absolute position reaches fail_after."""
        if fail_after is None:
            self._fail_after.pop(resource_id, None)
        else:
            self._fail_after[resource_id] = fail_after

    def _resolve(self, url: str) -> OriginResource:
        resource_id = url.rsplit("/", 1)[-1]
        if resource_id not in self._resources or resource_id in self._unreachable:
            raise OriginUnreachableError(url)
        return self._resources[resource_id]

    def open(self, url: str, offset: int) -> tuple[int, OriginReader]:
        """Open a read stream at ``offset``; returns (resource size, reader)."""
        resource = self._resolve(url)
        reader = OriginReader(resource, offset, self._fail_after.get(resource.resource_id))
        return resource.size, reader
