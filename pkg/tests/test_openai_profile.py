import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aex.binding import BindingDescriptor
from aex.errors import AttestationRequired, InvalidActivation, MalformedSse, PlanInvalid, SignatureInvalid
from aex.openai_profile import (
    ActivationRequest,
    SseDecoder,
    activation_member,
    attestation_failure_body,
    check_plan,
    encode_event,
    issuer_request_context,
    parse_activation,
    require_or_passthrough,
    sse_decode,
    sse_encode,
    SseStreamVerifier,
)
from aex.verify import VerifierState
from tests.support import KEY, attested_stream, chunks, request, resolver, sse_bytes

payloads = st.dictionaries(st.sampled_from(["id", "content", "n"]),
                           st.one_of(st.text(max_size=8), st.integers(0, 9)), max_size=3)


class TestActivation:
    def test_forms(self):
        assert parse_activation({}) == ActivationRequest()
        assert parse_activation({"attestation": False}).enabled is False
        assert parse_activation({"attestation": True}) == ActivationRequest(enabled=True)
        act = parse_activation({"attestation": {"required": True, "nonce": "n", "request_binding": {
            "mode": "top_level_include", "fields": ["tools", "messages"]}}})
        assert act.required and act.nonce == "n" and act.binding == BindingDescriptor.include(["messages", "tools"])
        assert parse_activation({"stream_options": {"include_attestation": False}}).include_stream_attestation is False

    @pytest.mark.parametrize("bad", [
        {"attestation": "yes"},
        {"attestation": {"required": "true"}},
        {"attestation": {"nonce": ""}},
        {"attestation": {"request_binding": {"mode": "nope"}}},
        {"stream_options": {"include_attestation": 1}},
    ])
    def test_invalid(self, bad):
        with pytest.raises(InvalidActivation):
            parse_activation(bad)

    @given(st.booleans(), st.booleans(), st.none() | st.text(min_size=1, max_size=4),
           st.sampled_from([BindingDescriptor.full(), BindingDescriptor.include(["model"]),
                            BindingDescriptor.exclude(["user"])]))
    def test_member_round_trip(self, enabled, required, nonce, binding):
        act = ActivationRequest(enabled, required and enabled, nonce if enabled else None,
                                binding if enabled else BindingDescriptor.full())
        assert parse_activation({"attestation": activation_member(act)}) == act


class TestSseCodec:
    @given(st.lists(payloads, min_size=1, max_size=6), st.data())
    def test_round_trip_under_arbitrary_splits(self, items, data):
        wire = sse_encode(items)
        cuts = sorted(data.draw(st.lists(st.integers(0, len(wire)), max_size=6)))
        parts = [wire[a:b] for a, b in zip([0] + cuts, cuts + [len(wire)])]
        events = sse_decode(parts)
        assert [e.parsed for e in events if e.is_chunk] == items
        assert events[-1].is_done

    @pytest.mark.parametrize("sep", [b"\n", b"\r\n", b"\r"])
    def test_line_endings(self, sep):
        wire = b": keepalive" + sep + b"data: {\"a\":1}" + sep + sep + b"data: [DONE]" + sep + sep
        events = sse_decode([wire[:i] for i in (len(wire),)])
        assert [e.parsed for e in events if e.is_chunk] == [{"a": 1}] and events[-1].is_done

    def test_crlf_split_across_feeds(self):
        dec = SseDecoder()
        out = dec.feed(b"data: {}\r")
        out += dec.feed(b"\n\r\n")
        out += dec.close()
        assert len(out) == 1 and out[0].parsed == {} and not dec.incomplete_tail

    def test_bom_multiline_and_fields(self):
        events = sse_decode("\ufeffevent: x\nid: 7\ndata: {\"a\":\ndata: 1}\n\n".encode())
        assert events[0].parsed == {"a": 1} and events[0].event == "x" and events[0].id == "7"

    def test_incomplete_tail_and_bad_utf8(self):
        dec = SseDecoder()
        dec.feed(b"data: {\"a\":1}\n")
        dec.close()
        assert dec.incomplete_tail
        with pytest.raises(MalformedSse):
            SseDecoder().feed(b"data: \xff\n\n")

    def test_non_object_payloads_are_not_chunks(self):
        events = sse_decode(b"data: [1]\n\ndata: oops\n\n")
        assert not any(e.is_chunk for e in events)
        assert events[1].parse_error

    def test_encode_multiline_string(self):
        assert encode_event("a\nb") == b"data: a\ndata: b\n\n"


class TestPlan:
    def test_rules(self):
        items = chunks(3)
        req = request(stream=True)
        _, plan = attested_stream(req, items, checkpoints=[1])
        check_plan(3, plan)
        cp, term = plan[1], plan[3]
        for bad in ({4: term}, {2: term}, {1: term, 3: term}, {3: term, 0: cp}, {3: {"kind": "odd"}}):
            with pytest.raises(PlanInvalid):
                check_plan(3, bad)
        lineage = {**term.to_json(), "origin_output": {}}
        with pytest.raises(PlanInvalid):
            check_plan(3, {1: cp, 3: lineage})
        with pytest.raises(PlanInvalid):
            sse_encode([{"attestation": {}}], {})


def test_issuer_context_and_required_failure():
    assert issuer_request_context({"model": "m"}) is None
    ctx = issuer_request_context(request(nonce="n"))
    assert ctx.required and ctx.nonce == "n" and ctx.effective_request_commit is None
    with pytest.raises(AttestationRequired):
        require_or_passthrough(ctx, SignatureInvalid("boom"))
    require_or_passthrough(issuer_request_context(request(nonce=None)), SignatureInvalid("boom"))
    body = attestation_failure_body(SignatureInvalid("boom"))
    assert body["error"]["code"] == "attestation_unavailable"


def test_stream_verifier_end_to_end():
    req = request(stream=True)
    wire = sse_bytes(req, chunks(4), checkpoints=[2])
    v = SseStreamVerifier(req, resolver())
    for i in range(0, len(wire), 7):
        v.feed(wire[i:i + 7])
    final = v.finish()
    assert final.ok
    assert [t["state"] for t in v.timeline] == ["verified_prefix", "verified_complete"]
    cut = SseStreamVerifier(req, resolver())
    cut.feed(sse_bytes(req, chunks(4), checkpoints=[2], done=False))
    assert cut.finish(transport_ok=False).ok  # the terminal made it; [DONE] is transport only
    no_term = SseStreamVerifier(req, resolver())
    no_term.feed(sse_bytes(req, chunks(4), checkpoints=[2], terminal=False, done=False))
    assert no_term.finish(False).state is VerifierState.TRUNCATED_AFTER_VERIFIED_PREFIX
    json.dumps(v.timeline)
