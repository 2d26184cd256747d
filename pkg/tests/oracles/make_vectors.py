"""Write the frozen conformance vectors under tests/vectors/.

Run once as ``python3 -m tests.oracles.make_vectors`` from the package root.
Every ``expected`` value is computed by the oracle in this directory; verdict
expectations follow from how each case is built.
"""

import hashlib
import json
import sys
from pathlib import Path

from . import commit_oracle as O

OUT = Path(__file__).resolve().parent.parent / "vectors"
ISS = "https://issuer.example"
ROGUE = "https://rogue.example"
PROFILE = "openai.chat_completions"
R = "sha256:" + "aa" * 32
E = "sha256:" + "ee" * 32
CHAT = {"model": "gpt-5", "messages": [{"role": "user", "content": "Summarize this document."}]}
CHUNKS = [
    {"id": "c", "choices": [{"index": 0, "delta": {"role": "assistant", "content": "Hi"}}]},
    {"id": "c", "choices": [{"index": 0, "delta": {"content": " there"}}]},
    {"id": "c", "choices": [], "usage": {"prompt_tokens": 3, "completion_tokens": 2, "total_tokens": 5}},
]


def _try(fn):
    try:
        return fn()
    except O.OracleReject as exc:
        return {"error": exc.code}


# -- jcs ----------------------------------------------------------------------

JCS_CASES = [
    ("literals", '{"b":[null,true,false],"a":"x"}'),
    ("numbers", "[333333333.33333329,1E30,4.50,2e-3,0.000000000000000000000000001]"),
    ("number_edges", "[-0.0,1e21,1e-7,123456789012345680000,5e-324,9007199254740991]"),
    ("utf16_order", '{"\\u20ac":1,"\\r":2,"\\ud83d\\ude00":3,"1":4,"\\u00f6":5}'),
    ("escapes", '"\\u20ac$\\u000F\\u000aA\'\\u0042\\u0022\\u005c\\\\\\"\\/"'),
    ("nested", '{"z":{"b":[1,{"y":2,"x":1}],"a":{}},"a":[]}'),
    ("duplicate_key", '{"a":1,"a":2}'),
    ("nested_duplicate_key", '{"a":{"k":1,"k":1}}'),
    ("unsafe_integer", "9007199254740993"),
]


def jcs_section():
    return [(n, {"json": t}, _try(lambda t=t: {"canonical": O.jcs_text(t).decode("utf-8")})) for n, t in JCS_CASES]


# The RFC 8785 appendix number table (IEEE-754 bit patterns) plus the two
# structured samples.  The published strings double as an oracle self-check.
RFC_NUMBERS = [
    ("0000000000000000", "0"), ("8000000000000000", "0"),
    ("0000000000000001", "5e-324"), ("8000000000000001", "-5e-324"),
    ("7fefffffffffffff", "1.7976931348623157e+308"), ("ffefffffffffffff", "-1.7976931348623157e+308"),
    ("4340000000000000", "9007199254740992"), ("c340000000000000", "-9007199254740992"),
    ("4430000000000000", "295147905179352830000"),
    ("44b52d02c7e14af5", "9.999999999999997e+22"), ("44b52d02c7e14af6", "1e+23"),
    ("44b52d02c7e14af7", "1.0000000000000001e+23"),
    ("444b1ae4d6e2ef4e", "999999999999999700000"), ("444b1ae4d6e2ef4f", "999999999999999900000"),
    ("444b1ae4d6e2ef50", "1e+21"),
    ("3eb0c6f7a0b5ed8c", "9.999999999999997e-7"), ("3eb0c6f7a0b5ed8d", "0.000001"),
    ("41b3de4355555553", "333333333.3333332"), ("41b3de4355555554", "333333333.33333325"),
    ("41b3de4355555555", "333333333.3333333"), ("41b3de4355555556", "333333333.3333334"),
    ("41b3de4355555557", "333333333.33333343"),
    ("becbf647612f3696", "-0.0000033333333333333333"), ("43143ff3c1cb0959", "1424953923781206.2"),
]
RFC_SAMPLE = (
    '{"numbers":[333333333.33333329,1E30,4.50,2e-3,0.000000000000000000000000001],'
    '"string":"\\u20ac$\\u000F\\u000aA\'\\u0042\\u0022\\u005c\\\\\\"\\/",'
    '"literals":[null,true,false]}'
)
RFC_SAMPLE_OUT = ('{"literals":[null,true,false],"numbers":[333333333.3333333,1e+30,4.5,0.002,1e-27],'
                  '"string":"\u20ac$\\u000f\\nA\'B\\"\\\\\\\\\\"/"}')
RFC_SORT = ('{"\\u20ac":"Euro Sign","\\r":"Carriage Return","\\ufb33":"Hebrew Letter Dalet With Dagesh",'
            '"1":"One","\\ud83d\\ude00":"Emoji: Grinning Face","\\u0080":"Control",'
            '"\\u00f6":"Latin Small Letter O With Diaeresis"}')
RFC_SORT_KEYS = ["\r", "1", "\u0080", "\u00f6", "\u20ac", "\U0001F600", "\ufb33"]


def rfc8785_section():
    import struct

    cases = []
    for bits, published in RFC_NUMBERS:
        value = struct.unpack(">d", bytes.fromhex(bits))[0]
        text = repr(value)
        canonical = O.jcs_text(text).decode("utf-8")
        assert canonical == published, (bits, canonical, published)
        cases.append((f"number_{bits}", {"json": text}, {"canonical": canonical}))
    for name in ("NaN", "Infinity", "-Infinity"):
        cases.append((f"number_{name}", {"json": name}, _try(lambda n=name: O.jcs_text(n))))
    sample = O.jcs_text(RFC_SAMPLE).decode("utf-8")
    assert sample == RFC_SAMPLE_OUT, sample
    cases.append(("sample_structure", {"json": RFC_SAMPLE}, {"canonical": sample}))
    ordered = O.jcs_text(RFC_SORT).decode("utf-8")
    assert list(json.loads(ordered)) == RFC_SORT_KEYS
    cases.append(("sample_sorting", {"json": RFC_SORT}, {"canonical": ordered}))
    return cases


# -- binding ------------------------------------------------------------------

BINDING_CASES = [
    ("full_no_nonce", {**CHAT, "attestation": True}, {"mode": "full"}, None),
    ("full_nonce", {**CHAT, "temperature": 0.5}, {"mode": "full"}, "n-1"),
    ("include_absent_tools", CHAT, {"mode": "top_level_include", "fields": ["tools", "model", "messages"]},
     "Q2xpZW50Tm9uY2UxMjM"),
    ("include_tools_present", {**CHAT, "tools": [{"type": "function", "function": {"name": "f"}}]},
     {"mode": "top_level_include", "fields": ["tools", "model", "messages"]}, "Q2xpZW50Tm9uY2UxMjM"),
    ("include_duplicate_fields", CHAT, {"mode": "top_level_include", "fields": ["model", "model"]}, None),
    ("exclude_temperature", {**CHAT, "temperature": 1, "user": "u"},
     {"mode": "top_level_exclude", "fields": ["temperature", "user"]}, None),
    ("effective_after_normalize", {**CHAT, "max_completion_tokens": 64}, {"mode": "full"}, "n-1"),
    ("effective_after_defaults", {**CHAT, "temperature": 1, "n": 1}, {"mode": "full"}, "n-1"),
    ("include_lists_attestation", CHAT, {"mode": "top_level_include", "fields": ["attestation", "model"]}, None),
]

# (name, client request, effective request, binding, nonce)
EFFECTIVE_CASES = [
    ("effective_transform_chain", {**CHAT, "max_tokens": 64},
     {**CHAT, "max_completion_tokens": 64, "temperature": 1, "n": 1}, {"mode": "full"}, "n-1"),
    ("effective_include_tools_injected", CHAT,
     {**CHAT, "tools": [{"type": "function", "function": {"name": "lookup_account"}}]},
     {"mode": "top_level_include", "fields": ["messages", "model", "tools"]}, "n-2"),
    ("effective_exclude_hides_default", {**CHAT, "user": "u"}, {**CHAT, "user": "u", "temperature": 1},
     {"mode": "top_level_exclude", "fields": ["temperature"]}, None),
    ("effective_identity", CHAT, CHAT, {"mode": "full"}, "n-3"),
]


def _binding_expected(request, binding, nonce):
    bri = O.bound_request_input(request, binding, nonce)
    canonical = O.jcs(bri)
    return {"bound_request_input": bri, "canonical": canonical.decode("utf-8"),
            "request_commit": O.text(O.sha(O.TAGS["req"], canonical))}


def _effective_expected(req, eff, binding, nonce):
    out = _binding_expected(req, binding, nonce)
    out["effective_request_commit"] = O.request_commit(eff, binding, nonce)
    return out


def binding_section():
    cases = [(n, {"request": req, "binding": b, "nonce": nonce}, _try(lambda: _binding_expected(req, b, nonce)))
             for n, req, b, nonce in BINDING_CASES]
    cases += [(n, {"request": req, "effective_request": eff, "binding": b, "nonce": nonce},
               _effective_expected(req, eff, b, nonce)) for n, req, eff, b, nonce in EFFECTIVE_CASES]
    return cases


# -- output / chunk / chain ---------------------------------------------------

def output_section():
    bodies = [
        ("chat_completion", {"id": "chatcmpl-123", "choices": [{"index": 0, "message": {
            "role": "assistant", "content": "Here is the summary."}, "finish_reason": "stop"}]}),
        ("error_object", {"error": {"message": "bad", "type": "invalid_request_error"}}),
        ("empty_object", {}),
    ]
    return [(n, {"body": b}, {"output_commit": O.nonstream_commit(b)}) for n, b in bodies]


def chunk_hash_section():
    cases = [(f"index_{i}", i, c) for i, c in enumerate(CHUNKS, start=1)]
    cases += [("empty_body_index_1", 1, {}), ("large_index", 2**40 + 7, CHUNKS[0]), ("index_zero", 0, CHUNKS[0])]
    return [(n, {"index": i, "chunk": c}, _try(lambda i=i, c=c: {"chunk_hash": O.chunk_hash(i, c).hex()}))
            for n, i, c in cases]


def chain_section():
    cases = [
        ("r_only", R, None, CHUNKS),
        ("r_and_e", R, E, CHUNKS),
        ("e_equals_r", R, R, CHUNKS),
        ("reordered", R, None, [CHUNKS[1], CHUNKS[0], CHUNKS[2]]),
        ("empty", R, None, []),
    ]
    out = []
    for name, r, e, chunks in cases:
        values = O.chain_values(r, e, chunks)
        expected = {"chain": [v.hex() for v in values], "chunk_count": str(len(chunks))}
        if chunks:
            expected["output_commit"] = O.text(values[-1])
        out.append((name, {"request_commit": r, "effective_request_commit": e, "chunks": chunks}, expected))
    return out


# -- receipts and attestations ------------------------------------------------

def _signed_case(tag, body, label):
    signed = O.sign(tag, body, label)
    return {"signing_input_sha256": hashlib.sha256(O.signing_input(tag, signed)).hexdigest(),
            "sig": signed["sig"]}


def receipt_section():
    common = {"iss": ISS, "alg": "Ed25519", "kid": "k1"}
    cases = [
        ("request_transform", "vectors:proxy", {**common, "in_request_commit": R, "out_request_commit": E,
                                                 "policy": "normalize-openai-chat/v1"}),
        ("origin_output", "vectors:provider", {**common, "profile": PROFILE, "request_commit": R,
                                               "output_mode": "stream", "output_commit": "sha256:" + "cc" * 32}),
        ("output_transform", "vectors:gateway", {**common, "request_commit": R, "effective_request_commit": E,
                                                 "in_output_mode": "stream", "in_output_commit": "sha256:" + "cc" * 32,
                                                 "out_output_mode": "non_stream",
                                                 "out_output_commit": "sha256:" + "bb" * 32,
                                                 "policy": "buffer-and-collapse/v1"}),
        ("output_transform_repackage", "vectors:gateway", {
            **common, "request_commit": R, "in_output_mode": "non_stream", "in_output_commit": "sha256:" + "bb" * 32,
            "out_output_mode": "stream", "out_output_commit": "sha256:" + "cc" * 32,
            "policy": "repackage-as-stream/v1"}),
    ]
    out = []
    for name, label, body in cases:
        kind = "output_transform" if name.startswith("output_transform") else name
        expected = {**_signed_case(kind, body, label), "public_key": O.public_x(label)}
        out.append((name, {"kind": kind, "key_label": label, "body": body}, expected))
    return out


def attestation_section():
    base = {"version": "1", "profile": PROFILE, "iss": ISS, "request_commit": R, "alg": "Ed25519", "kid": "edge-1"}
    cases = [
        ("terminal_stream", {**base, "kind": "terminal", "output_mode": "stream",
                             "output_commit": "sha256:" + "dd" * 32, "chunk_count": "42", "nonce": "n-1"}),
        ("terminal_nonstream_times", {**base, "kind": "terminal", "output_mode": "non_stream",
                                      "output_commit": "sha256:" + "dd" * 32, "iat": 1767225600, "exp": 1767225900}),
        ("checkpoint", {**base, "kind": "checkpoint", "effective_request_commit": E,
                        "prefix_commit": "sha256:" + "11" * 32, "chunk_count": "5"}),
    ]
    return [(n, {"key_label": "vectors:edge", "attestation": a}, _signed_case("attestation", a, "vectors:edge"))
            for n, a in cases]


# -- verdicts -----------------------------------------------------------------

EDGE = "vectors:edge"


def _terminal(request, **fields):
    _, nonce = O.activation_of(request)
    att = {"version": "1", "kind": "terminal", "profile": PROFILE, "iss": ISS,
           "request_commit": O.request_commit_of(request), "kid": "edge-1", **fields}
    if nonce is not None and "nonce" not in fields:
        att["nonce"] = nonce
    iss = att["iss"]
    return O.sign("attestation", att, EDGE if iss == ISS else "vectors:rogue")


def _sse(chunks, done=True):
    text = "".join(f"data: {json.dumps(c, separators=(',', ':'))}\n\n" for c in chunks)
    return text + ("data: [DONE]\n\n" if done else "")


def _stream(request, chunks, checkpoint_at=None, terminal=True):
    r = O.request_commit_of(request)
    values = O.chain_values(r, None, chunks)
    out = [dict(c) for c in chunks]
    if checkpoint_at:
        _, nonce = O.activation_of(request)
        cp = {"version": "1", "kind": "checkpoint", "profile": PROFILE, "iss": ISS, "request_commit": r,
              "prefix_commit": O.text(values[checkpoint_at]), "chunk_count": str(checkpoint_at),
              "kid": "edge-1", "nonce": nonce}
        out[checkpoint_at - 1]["attestation"] = O.sign("attestation", cp, EDGE)
    if terminal:
        out[-1]["attestation"] = _terminal(request, output_mode="stream", output_commit=O.text(values[-1]),
                                           chunk_count=str(len(chunks)))
    return out


def verdict_section():
    env = {"jwks": {ISS: {"keys": [O.jwk(EDGE, "edge-1")]}}, "trust": {"allowlist": [ISS]}}
    req = {**CHAT, "attestation": {"nonce": "n-1"}}
    required = {**CHAT, "attestation": {"required": True, "nonce": "n-2"}}
    sreq = {**CHAT, "stream": True, "attestation": {"required": True, "nonce": "n-3"}}
    body = {"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": "ok"},
                                    "finish_reason": "stop"}]}
    good = {**body, "attestation": _terminal(req, output_mode="non_stream", output_commit=O.nonstream_commit(body))}
    mutated = {**good, "id": "y"}
    bad_nonce = {**body, "attestation": _terminal(req, output_mode="non_stream",
                                                  output_commit=O.nonstream_commit(body), nonce="other")}
    # Signed over a request that also carried tools: the client's commitment differs.
    injected = {**req, "tools": [{"type": "function", "function": {"name": "f"}}]}
    other_req = {**body, "attestation": _terminal(injected, output_mode="non_stream",
                                                  output_commit=O.nonstream_commit(body))}
    rogue = {**body, "attestation": {**_terminal(req, output_mode="non_stream",
                                                 output_commit=O.nonstream_commit(body))}}
    rogue["attestation"] = O.sign("attestation", {**rogue["attestation"], "iss": ROGUE, "kid": "rogue-1"},
                                  "vectors:rogue")
    unknown_kid = {**body, "attestation": O.sign("attestation", {**good["attestation"], "kid": "edge-9"},
                                                 "vectors:hidden")}

    stream_ok = _stream(sreq, CHUNKS, checkpoint_at=2)
    reordered = [stream_ok[1], stream_ok[0], stream_ok[2]]
    no_cp = _stream(sreq, CHUNKS)
    reordered_no_cp = [no_cp[1], no_cp[0], no_cp[2]]
    cases = [
        ("nonstream_ok", {"request": req, "response": good}, ("verified_complete", [])),
        ("nonstream_tampered", {"request": req, "response": mutated}, ("tampered", ["output_commit_mismatch"])),
        ("nonstream_missing_optional", {"request": req, "response": body},
         ("unattested_or_out_of_scope", ["attestation_missing"])),
        ("nonstream_missing_required", {"request": required, "response": body},
         ("unattested_or_out_of_scope", ["required_attestation_missing"])),
        ("nonstream_wrong_nonce", {"request": req, "response": bad_nonce}, ("tampered", ["nonce_mismatch"])),
        ("nonstream_request_mismatch", {"request": req, "response": other_req},
         ("request_mismatch", ["request_commit_mismatch"])),
        ("nonstream_untrusted_issuer", {"request": req, "response": rogue}, ("key_unavailable", ["untrusted_issuer"])),
        ("nonstream_unknown_kid", {"request": req, "response": unknown_kid}, ("key_unavailable", ["key_unavailable"])),
        ("stream_ok", {"request": sreq, "sse": _sse(stream_ok)}, ("verified_complete", [])),
        ("stream_reordered", {"request": sreq, "sse": _sse(reordered_no_cp)},
         ("tampered", ["output_commit_mismatch"])),
        # The checkpoint rides on chunk 2, which now arrives first claiming count 2.
        ("stream_reordered_with_checkpoint", {"request": sreq, "sse": _sse(reordered)},
         ("tampered", ["chunk_count_mismatch", "output_commit_mismatch"])),
        ("stream_cut_after_checkpoint", {"request": sreq, "sse": _sse(stream_ok[:2], done=False),
                                         "transport_ok": False},
         ("truncated_after_verified_prefix", ["terminal_missing"])),
        ("stream_cut_before_checkpoint", {"request": sreq, "sse": _sse(stream_ok[:1], done=False),
                                          "transport_ok": False},
         ("truncated_without_terminal", ["terminal_missing"])),
    ]
    return [(n, {**env, **inputs}, {"state": s, "codes": sorted(set(c))}) for n, inputs, (s, c) in cases]


SECTIONS = {
    "jcs": jcs_section,
    "binding": binding_section,
    "output": output_section,
    "chunk_hash": chunk_hash_section,
    "chain": chain_section,
    "receipt": receipt_section,
    "attestation": attestation_section,
    "verdict": verdict_section,
}


def main(out=OUT):
    out.mkdir(parents=True, exist_ok=True)
    files = [(s, s, b) for s, b in SECTIONS.items()] + [("jcs_rfc8785", "jcs", rfc8785_section)]
    for stem, section, build in files:
        doc = {"version": "1", "section": section,
               "cases": [{"name": n, "inputs": i, "expected": e} for n, i, e in build()]}
        (out / f"{stem}.json").write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
        print(f"{stem}: {len(doc['cases'])} cases", file=sys.stderr)


if __name__ == "__main__":
    main()
