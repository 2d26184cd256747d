"""Deterministic provider simulator.

Output is a pure function of the effective request commitment, so repeated
runs of the same effective request produce identical bodies and chunks.
"""

from __future__ import annotations

import hashlib
from typing import Any

from ..commitments import Commitment

CREATED = 1767225600  # fixed so bodies are reproducible

_VOCAB = (
    "the", "document", "describes", "a", "protocol", "for", "signed", "commitments", "over",
    "requests", "and", "outputs", "with", "streaming", "checkpoints", "receipts", "issuers",
    "verify", "each", "chunk", "in", "order", "keys", "are", "published", "as", "JWKS",
)


def _words(seed: Commitment, n: int) -> list[str]:
    stream = hashlib.sha256(b"aex-lab-words" + seed.raw).digest()
    while len(stream) < n:
        stream += hashlib.sha256(stream).digest()
    return [_VOCAB[b % len(_VOCAB)] for b in stream[:n]]


def _split(words: list[str], parts: int) -> list[str]:
    size, extra = divmod(len(words), parts)
    out, pos = [], 0
    for i in range(parts):
        take = size + (1 if i < extra else 0)
        piece = " ".join(words[pos:pos + take])
        out.append(piece if i == 0 else " " + piece)
        pos += take
    return out


def _usage(prompt: dict[str, Any], words: list[str]) -> dict[str, int]:
    prompt_tokens = sum(len(str(m.get("content", "")).split()) for m in prompt.get("messages", [])
                        if isinstance(m, dict))
    return {"prompt_tokens": prompt_tokens, "completion_tokens": len(words),
            "total_tokens": prompt_tokens + len(words)}


def completion_id(seed: Commitment) -> str:
    return "chatcmpl-" + seed.raw.hex()[:16]


def simulate_completion(seed: Commitment, request: dict[str, Any], n_words: int = 12) -> dict[str, Any]:
    words = _words(seed, n_words)
    return {
        "id": completion_id(seed),
        "object": "chat.completion",
        "created": CREATED,
        "model": request.get("model", "lab-model"),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": " ".join(words)},
            "finish_reason": "stop",
        }],
        "usage": _usage(request, words),
    }


def simulate_stream(seed: Commitment, request: dict[str, Any], content_chunks: int = 3,
                    n_words: int = 12) -> list[dict[str, Any]]:
    """``content_chunks`` delta chunks followed by one finish/usage chunk."""
    words = _words(seed, n_words)
    base = {"id": completion_id(seed), "object": "chat.completion.chunk", "created": CREATED,
            "model": request.get("model", "lab-model")}
    chunks = []
    for i, piece in enumerate(_split(words, content_chunks)):
        delta = {"role": "assistant", "content": piece} if i == 0 else {"content": piece}
        chunks.append({**base, "choices": [{"index": 0, "delta": delta, "finish_reason": None}]})
    chunks.append({**base, "choices": [{"index": 0, "delta": {}, "finish_reason": "stop"}],
                   "usage": _usage(request, words)})
    return chunks


def simulate_error(seed: Commitment) -> dict[str, Any]:
    return {"error": {"message": "the lab model refuses this request",
                      "type": "invalid_request_error", "code": "lab_refusal",
                      "param": None, "id": completion_id(seed)}}
