"""Deterministic rewrites applied by the trusted proxies, plus fault helpers."""

from __future__ import annotations

import copy
from typing import Any

from ..jcs import ATTESTATION_MEMBER

NORMALIZE_POLICY = "normalize-openai-chat/v1"
INJECT_DEFAULTS_POLICY = "inject-defaults/v1"
COLLAPSE_POLICY = "buffer-and-collapse/v1"
REPACKAGE_POLICY = "repackage-as-stream/v1"

_RENAMES = {"max_tokens": "max_completion_tokens"}
_DEFAULTS = {"temperature": 1, "n": 1}
INJECTED_TOOLS = [{"type": "function", "function": {"name": "lookup_account",
                                                    "parameters": {"type": "object", "properties": {}}}}]


def normalize_request(request: dict[str, Any]) -> dict[str, Any]:
    """Map legacy parameter spellings to current ones and trim the model name."""
    out = {}
    for key, value in request.items():
        out[_RENAMES.get(key, key)] = value
    if isinstance(out.get("model"), str):
        out["model"] = out["model"].strip()
    return out


def inject_defaults(request: dict[str, Any]) -> dict[str, Any]:
    out = dict(request)
    for key, value in _DEFAULTS.items():
        out.setdefault(key, value)
    return out


def collapse_stream(chunks: list[dict[str, Any]]) -> dict[str, Any]:
    """Buffer a chat-completion chunk stream into one chat.completion object."""
    first = chunks[0]
    content: list[str] = []
    role = "assistant"
    finish = None
    usage = None
    for chunk in chunks:
        for choice in chunk.get("choices", []):
            delta = choice.get("delta", {})
            role = delta.get("role", role)
            if isinstance(delta.get("content"), str):
                content.append(delta["content"])
            if choice.get("finish_reason") is not None:
                finish = choice["finish_reason"]
        usage = chunk.get("usage", usage)
    out = {
        "id": first.get("id"),
        "object": "chat.completion",
        "created": first.get("created"),
        "model": first.get("model"),
        "choices": [{"index": 0, "message": {"role": role, "content": "".join(content)},
                     "finish_reason": finish}],
    }
    if usage is not None:
        out["usage"] = usage
    return out


def repackage_as_stream(body: dict[str, Any], content_chunks: int) -> list[dict[str, Any]]:
    """Split a chat.completion object into delta chunks plus a finish/usage chunk."""
    choice = body["choices"][0]
    message = choice.get("message", {})
    words = str(message.get("content", "")).split(" ")
    size, extra = divmod(len(words), content_chunks)
    base = {"id": body.get("id"), "object": "chat.completion.chunk", "created": body.get("created"),
            "model": body.get("model")}
    chunks, pos = [], 0
    for i in range(content_chunks):
        take = size + (1 if i < extra else 0)
        piece = " ".join(words[pos:pos + take])
        pos += take
        delta = {"role": message.get("role", "assistant"), "content": piece} if i == 0 else {"content": " " + piece}
        chunks.append({**base, "choices": [{"index": 0, "delta": delta, "finish_reason": None}]})
    final = {**base, "choices": [{"index": 0, "delta": {}, "finish_reason": choice.get("finish_reason")}]}
    if "usage" in body:
        final["usage"] = body["usage"]
    chunks.append(final)
    return chunks


def _flip(text: str) -> str:
    if not text:
        return "x"
    c = text[0]
    return ("b" if c == "a" else "a") + text[1:]


def mutate_json(obj: dict[str, Any]) -> dict[str, Any]:
    """Change one character of the first content string (or the id) outside the attestation."""
    out = copy.deepcopy(obj)

    def walk(node) -> bool:
        if isinstance(node, dict):
            for key in sorted(node):
                if key == ATTESTATION_MEMBER:
                    continue
                if key == "content" and isinstance(node[key], str) and node[key]:
                    node[key] = _flip(node[key])
                    return True
                if walk(node[key]):
                    return True
        elif isinstance(node, list):
            return any(walk(item) for item in node)
        return False

    if not walk(out):
        out["id"] = _flip(str(out.get("id", "")))
    return out
