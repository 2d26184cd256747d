"""Complete-output commitments: non-stream object digests and the streaming chain."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable

from .commitments import TAG_CHUNK, TAG_RESPONSE, TAG_STREAM, Commitment, tagged_digest
from .errors import EmptyStream, InvalidIndex
from .jcs import jcs_serialize

_UINT64_MAX = 2**64 - 1


class OutputMode(str, Enum):
    NON_STREAM = "non_stream"
    STREAM = "stream"


def nonstream_output_commit(response_body: dict[str, Any]) -> Commitment:
    """SHA-256(``AEX-RESP-V1`` || JCS(body)); ``attestation`` must already be removed."""
    return tagged_digest(TAG_RESPONSE, response_body)


def chunk_hash_bytes(index: int, canonical: bytes) -> bytes:
    if not isinstance(index, int) or isinstance(index, bool) or index < 1:
        raise InvalidIndex(f"chunk index must be >= 1, got {index!r}")
    if index > _UINT64_MAX:
        raise InvalidIndex("chunk index exceeds uint64")
    return hashlib.sha256(TAG_CHUNK + index.to_bytes(8, "big") + canonical).digest()


def chunk_hash(index: int, chunk_body: dict[str, Any]) -> bytes:
    return chunk_hash_bytes(index, jcs_serialize(chunk_body))


def _raw(c: Commitment | bytes) -> bytes:
    return c.raw if isinstance(c, Commitment) else bytes(c)


@dataclass(frozen=True)
class StreamChain:
    """Immutable accumulator; every absorb returns a new chain."""

    request_anchor: bytes
    effective_anchor: bytes
    value: bytes
    count: int = 0

    def absorb(self, chunk_body: dict[str, Any]) -> "StreamChain":
        return self.absorb_hash(chunk_hash(self.count + 1, chunk_body))

    def absorb_hash(self, h: bytes) -> "StreamChain":
        value = hashlib.sha256(self.value + h).digest()
        return StreamChain(self.request_anchor, self.effective_anchor, value, self.count + 1)

    @property
    def commitment(self) -> Commitment:
        return Commitment(self.value)


def chain_init(r: Commitment | bytes, e: Commitment | bytes | None = None) -> StreamChain:
    r_raw = _raw(r)
    e_raw = r_raw if e is None else _raw(e)
    value = hashlib.sha256(TAG_STREAM + r_raw + e_raw).digest()
    return StreamChain(r_raw, e_raw, value, 0)


def chain_absorb(chain: StreamChain, chunk_body: dict[str, Any]) -> StreamChain:
    return chain.absorb(chunk_body)


def chain_finalize(chain: StreamChain) -> tuple[Commitment, int]:
    if chain.count == 0:
        raise EmptyStream("a terminal commitment needs at least one chunk")
    return chain.commitment, chain.count


def fold_hashes(
    r: Commitment | bytes, e: Commitment | bytes | None, hashes: Iterable[bytes]
) -> StreamChain:
    """Rebuild a chain from already-computed per-chunk hashes H_1..H_n."""
    chain = chain_init(r, e)
    for h in hashes:
        chain = chain.absorb_hash(h)
    return chain


def stream_output_commit(
    r: Commitment | bytes, e: Commitment | bytes | None, chunks: Iterable[dict[str, Any]]
) -> tuple[Commitment, int]:
    chain = chain_init(r, e)
    for chunk in chunks:
        chain = chain.absorb(chunk)
    return chain_finalize(chain)
