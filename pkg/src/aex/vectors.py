"""Cross-implementation conformance vectors.

A vector file is ``{"version": "1", "section": ..., "cases": [...]}`` where each
case holds ``name``, ``inputs`` and ``expected``.  :func:`check_file`
recomputes every ``expected`` from ``inputs``; :func:`generate` writes files
from the built-in case inputs.  Keys are derived from fixed labels so the
files, signatures included, are deterministic.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Callable, Iterable

from .attestation import Attestation, sign_attestation
from .binding import BindingDescriptor, build_bound_request_input, effective_request_commit, request_commit
from .commitments import Commitment
from .errors import AexError
from .jcs import jcs_serialize, parse
from .keys import SigningKey, jwks_document
from .output import chain_init, chunk_hash, nonstream_output_commit
from .receipts import OriginOutputReceipt, OutputTransformReceipt, RequestTransformReceipt
from .trust import IssuerTrustPolicy, JwksCache, KeyResolver, StaticJwksFetcher

VERSION = "1"
SECTIONS = ("jcs", "binding", "output", "chunk_hash", "chain", "receipt", "attestation", "verdict")

_RECEIPT_KINDS = {
    "request_transform": RequestTransformReceipt,
    "origin_output": OriginOutputReceipt,
    "output_transform": OutputTransformReceipt,
}


def _error(exc: AexError) -> dict[str, str]:
    return {"error": exc.code}


def _jcs(inputs: dict[str, Any]) -> dict[str, Any]:
    try:
        return {"canonical": jcs_serialize(parse(inputs["json"])).decode("utf-8")}
    except AexError as exc:
        return _error(exc)


def _binding(inputs: dict[str, Any]) -> dict[str, Any]:
    try:
        binding = BindingDescriptor.from_json(inputs["binding"])
        bri = build_bound_request_input(inputs["request"], binding, inputs.get("nonce"))
    except AexError as exc:
        return _error(exc)
    canonical = jcs_serialize(bri.to_json())
    out = {"bound_request_input": bri.to_json(), "canonical": canonical.decode("utf-8"),
           "request_commit": request_commit(bri).text}
    if "effective_request" in inputs:
        # Same descriptor and nonce, applied to what the origin actually received.
        out["effective_request_commit"] = effective_request_commit(
            inputs["effective_request"], binding, inputs.get("nonce")).text
    return out


def _output(inputs: dict[str, Any]) -> dict[str, Any]:
    return {"output_commit": nonstream_output_commit(inputs["body"]).text}


def _chunk_hash(inputs: dict[str, Any]) -> dict[str, Any]:
    try:
        return {"chunk_hash": chunk_hash(inputs["index"], inputs["chunk"]).hex()}
    except AexError as exc:
        return _error(exc)


def _chain(inputs: dict[str, Any]) -> dict[str, Any]:
    r = Commitment.from_text(inputs["request_commit"])
    e_text = inputs.get("effective_request_commit")
    chain = chain_init(r, Commitment.from_text(e_text) if e_text else None)
    values = [chain.value.hex()]
    for chunk in inputs["chunks"]:
        chain = chain.absorb(chunk)
        values.append(chain.value.hex())
    out: dict[str, Any] = {"chain": values, "chunk_count": str(chain.count)}
    if chain.count:
        out["output_commit"] = chain.commitment.text
    return out


def fixture_key(iss: str, kid: str, label: str) -> SigningKey:
    return SigningKey.from_label(iss, kid, label)


def _receipt(inputs: dict[str, Any]) -> dict[str, Any]:
    cls = _RECEIPT_KINDS[inputs["kind"]]
    body = inputs["body"]
    key = fixture_key(body["iss"], body["kid"], inputs["key_label"])
    signed = cls.from_json({**body, "sig": "unsigned"}).signed(key)
    signing = signed.signing_bytes()
    return {"signing_input_sha256": hashlib.sha256(signing).hexdigest(), "sig": signed.sig,
            "public_key": key.verifying_key.to_jwk()["x"]}


def _attestation(inputs: dict[str, Any]) -> dict[str, Any]:
    from .attestation import attestation_signing_bytes

    body = inputs["attestation"]
    key = fixture_key(body["iss"], body["kid"], inputs["key_label"])
    att = sign_attestation(key, Attestation.from_json({**body, "sig": "unsigned"}))
    return {"signing_input_sha256": hashlib.sha256(attestation_signing_bytes(att)).hexdigest(),
            "sig": att.sig}


def _verdict(inputs: dict[str, Any]) -> dict[str, Any]:
    from .openai_profile import SseStreamVerifier
    from .verify import verify_nonstream

    fetch = StaticJwksFetcher(inputs.get("jwks", {}))
    resolver = KeyResolver(IssuerTrustPolicy.from_json(inputs["trust"]), JwksCache(), fetch)
    if "sse" in inputs:
        verifier = SseStreamVerifier(inputs["request"], resolver)
        verifier.feed(inputs["sse"].encode("utf-8"))
        verdict = verifier.finish(inputs.get("transport_ok", True))
    else:
        verdict = verify_nonstream(inputs["request"], inputs["response"], resolver)
    return {"state": verdict.state.value, "codes": sorted(set(verdict.codes))}


COMPUTE: dict[str, Callable[[dict[str, Any]], dict[str, Any]]] = {
    "jcs": _jcs,
    "binding": _binding,
    "output": _output,
    "chunk_hash": _chunk_hash,
    "chain": _chain,
    "receipt": _receipt,
    "attestation": _attestation,
    "verdict": _verdict,
}


def compute(section: str, inputs: dict[str, Any]) -> dict[str, Any]:
    return COMPUTE[section](inputs)


def check_file(path: str | Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    section = doc.get("section")
    failures = []
    if doc.get("version") != VERSION or section not in COMPUTE:
        return {"file": str(path), "section": section, "cases": 0,
                "failures": [{"case": None, "reason": "unsupported version or section"}]}
    for case in doc["cases"]:
        try:
            got = compute(section, case["inputs"])
        except Exception as exc:  # a crash is a failed case, not a crashed checker
            failures.append({"case": case["name"], "reason": f"{type(exc).__name__}: {exc}"})
            continue
        if got != case["expected"]:
            failures.append({"case": case["name"], "expected": case["expected"], "got": got})
    return {"file": str(path), "section": section, "cases": len(doc["cases"]), "failures": failures}


def vector_files(path: str | Path, sections: Iterable[str] | None = None) -> list[Path]:
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if sections:
        wanted = set(sections)
        files = [f for f in files if json.loads(f.read_text(encoding="utf-8")).get("section") in wanted]
    return files


def check(path: str | Path, sections: Iterable[str] | None = None) -> dict[str, Any]:
    reports = [check_file(f) for f in vector_files(path, sections)]
    return {
        "files": reports,
        "cases": sum(r["cases"] for r in reports),
        "failed": sum(len(r["failures"]) for r in reports),
        "ok": bool(reports) and all(not r["failures"] for r in reports),
    }


# -- built-in inputs for ``generate`` ----------------------------------------------

FIXTURE_ISS = "https://issuer.example"
_R = "sha256:" + "aa" * 32
_E = "sha256:" + "ee" * 32
_CHAT = {"model": "gpt-5", "messages": [{"role": "user", "content": "Summarize this document."}]}


def default_inputs() -> dict[str, list[tuple[str, dict[str, Any]]]]:
    chunks = [
        {"id": "c", "choices": [{"index": 0, "delta": {"role": "assistant", "content": "Hi"}}]},
        {"id": "c", "choices": [{"index": 0, "delta": {"content": " there"}}]},
        {"id": "c", "choices": [], "usage": {"prompt_tokens": 3, "completion_tokens": 2, "total_tokens": 5}},
    ]
    receipt_common = {"iss": FIXTURE_ISS, "alg": "Ed25519", "kid": "k1"}
    return {
        "jcs": [
            ("literals", {"json": '{"b":[null,true,false],"a":"x"}'}),
            ("numbers", {"json": "[333333333.33333329,1E30,4.50,2e-3,0.000000000000000000000000001]"}),
            ("utf16_order", {"json": '{"\\u20ac":1,"\\r":2,"\\ud83d\\ude00":3,"1":4,"\\u00f6":5}'}),
            ("escapes", {"json": '"\\u20ac$\\u000F\\u000aA\'\\u0042\\u0022\\u005c\\\\\\"\\/"'}),
            ("duplicate_key", {"json": '{"a":1,"a":2}'}),
            ("unsafe_integer", {"json": "9007199254740993"}),
        ],
        "binding": [
            ("full_no_nonce", {"request": {**_CHAT, "attestation": True}, "binding": {"mode": "full"}, "nonce": None}),
            ("full_nonce", {"request": {**_CHAT, "temperature": 0.5}, "binding": {"mode": "full"}, "nonce": "n-1"}),
            ("include_absent_tools", {"request": _CHAT, "binding": {"mode": "top_level_include",
                                       "fields": ["tools", "model", "messages"]}, "nonce": "Q2xpZW50Tm9uY2UxMjM"}),
            ("exclude_temperature", {"request": {**_CHAT, "temperature": 1, "user": "u"},
                                     "binding": {"mode": "top_level_exclude", "fields": ["temperature", "user"]},
                                     "nonce": None}),
            ("effective_after_normalize", {"request": {**_CHAT, "max_tokens": 64},
                                           "effective_request": {**_CHAT, "max_completion_tokens": 64},
                                           "binding": {"mode": "full"}, "nonce": "n-1"}),
        ],
        "output": [
            ("chat_completion", {"body": {"id": "chatcmpl-123", "choices": [{"index": 0, "message": {
                "role": "assistant", "content": "Here is the summary."}, "finish_reason": "stop"}]}}),
            ("error_object", {"body": {"error": {"message": "bad", "type": "invalid_request_error"}}}),
        ],
        "chunk_hash": [
            (f"index_{i}", {"index": i, "chunk": c}) for i, c in enumerate(chunks, start=1)
        ] + [("index_zero", {"index": 0, "chunk": chunks[0]})],
        "chain": [
            ("r_only", {"request_commit": _R, "effective_request_commit": None, "chunks": chunks}),
            ("r_and_e", {"request_commit": _R, "effective_request_commit": _E, "chunks": chunks}),
            ("empty", {"request_commit": _R, "effective_request_commit": None, "chunks": []}),
        ],
        "receipt": [
            ("request_transform", {"kind": "request_transform", "key_label": "vectors:proxy", "body": {
                **receipt_common, "in_request_commit": _R, "out_request_commit": _E,
                "policy": "normalize-openai-chat/v1"}}),
            ("origin_output", {"kind": "origin_output", "key_label": "vectors:provider", "body": {
                **receipt_common, "profile": "openai.chat_completions", "request_commit": _R,
                "output_mode": "stream", "output_commit": "sha256:" + "cc" * 32}}),
            ("output_transform", {"kind": "output_transform", "key_label": "vectors:gateway", "body": {
                **receipt_common, "request_commit": _R, "effective_request_commit": _E,
                "in_output_mode": "stream", "in_output_commit": "sha256:" + "cc" * 32,
                "out_output_mode": "non_stream", "out_output_commit": "sha256:" + "bb" * 32,
                "policy": "buffer-and-collapse/v1"}}),
        ],
        "attestation": [
            ("terminal_stream", {"key_label": "vectors:edge", "attestation": {
                "version": "1", "kind": "terminal", "profile": "openai.chat_completions", "iss": FIXTURE_ISS,
                "request_commit": _R, "output_mode": "stream", "output_commit": "sha256:" + "dd" * 32,
                "chunk_count": "42", "nonce": "n-1", "alg": "Ed25519", "kid": "edge-1"}}),
            ("checkpoint", {"key_label": "vectors:edge", "attestation": {
                "version": "1", "kind": "checkpoint", "profile": "openai.chat_completions", "iss": FIXTURE_ISS,
                "request_commit": _R, "effective_request_commit": _E, "prefix_commit": "sha256:" + "11" * 32,
                "chunk_count": "5", "alg": "Ed25519", "kid": "edge-1"}}),
        ],
        "verdict": _verdict_inputs(),
    }


def _verdict_inputs() -> list[tuple[str, dict[str, Any]]]:
    from .openai_profile import attest_nonstream, issuer_request_context

    key = fixture_key(FIXTURE_ISS, "edge-1", "vectors:edge")
    request = {**_CHAT, "attestation": {"nonce": "n-1"}}
    response = attest_nonstream({"id": "x", "choices": []}, key, issuer_request_context(request),
                                clock=lambda: 1767225600)
    env = {"jwks": {FIXTURE_ISS: jwks_document([key.verifying_key])}, "trust": {"allowlist": [FIXTURE_ISS]}}
    tampered = {**response, "id": "y"}
    return [
        ("nonstream_ok", {**env, "request": request, "response": response}),
        ("nonstream_tampered", {**env, "request": request, "response": tampered}),
        ("nonstream_missing", {**env, "request": request, "response": {"id": "x", "choices": []}}),
    ]


def build_file(section: str, cases: list[tuple[str, dict[str, Any]]]) -> dict[str, Any]:
    return {"version": VERSION, "section": section,
            "cases": [{"name": n, "inputs": i, "expected": compute(section, i)} for n, i in cases]}


def generate(out_dir: str | Path, sections: Iterable[str] | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = default_inputs()
    written = []
    for section in sections or SECTIONS:
        if section not in COMPUTE:
            raise ValueError(f"unknown vector section {section!r}")
        path = out / f"{section}.json"
        path.write_text(json.dumps(build_file(section, inputs[section]), ensure_ascii=False, indent=1) + "\n",
                        encoding="utf-8")
        written.append(path)
    return written
