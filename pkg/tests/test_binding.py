import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from aex.binding import (
    BindingDescriptor,
    BindingMode,
    build_bound_request_input,
    commit_request,
    effective_request_commit,
    request_commit,
)
from aex.commitments import Commitment
from aex.errors import InvalidBinding, InvalidCommitment
from tests.oracles import commit_oracle as oracle

names = st.sampled_from(["model", "messages", "tools", "temperature", "user", "n", "seed"])
values = st.one_of(st.integers(-5, 5), st.text(max_size=5), st.lists(st.integers(0, 3), max_size=3))
requests = st.dictionaries(names, values, max_size=6)
bindings = st.one_of(
    st.just({"mode": "full"}),
    st.builds(lambda m, f: {"mode": m, "fields": f},
              st.sampled_from(["top_level_include", "top_level_exclude"]),
              st.lists(names, min_size=1, max_size=4)),
)
nonces = st.none() | st.text(min_size=1, max_size=8)


@given(requests, bindings, nonces)
def test_commitment_matches_oracle(req, binding, nonce):
    desc = BindingDescriptor.from_json(binding)
    assert commit_request(req, desc, nonce).text == oracle.request_commit(req, binding, nonce)


@given(requests, st.lists(names, min_size=1, max_size=4), nonces, values)
def test_injecting_an_absent_listed_field_changes_commit(req, fields, nonce, injected):
    missing = [f for f in fields if f not in req]
    assume(missing)
    desc = BindingDescriptor.include(fields)
    before = commit_request(req, desc, nonce)
    after = commit_request({**req, missing[0]: injected}, desc, nonce)
    assert before != after


@given(requests, st.lists(names, min_size=1, max_size=4))
def test_projection_soundness(req, fields):
    exc = build_bound_request_input(req, BindingDescriptor.exclude(fields), None)
    assert not set(exc.projection) & set(fields)
    inc = build_bound_request_input(req, BindingDescriptor.include(fields), None)
    assert set(inc.projection) <= set(fields)
    assert sorted(set(inc.projection) | set(inc.absent_fields)) == sorted(set(fields))
    assert not set(inc.projection) & set(inc.absent_fields)


@given(requests, bindings, st.one_of(st.just(True), st.dictionaries(st.text(max_size=3), values, max_size=2)))
def test_attestation_member_does_not_enter_projection(req, binding, activation):
    desc = BindingDescriptor.from_json(binding)
    assert commit_request({**req, "attestation": activation}, desc, "n") == commit_request(req, desc, "n")


def test_include_example_from_chat_request():
    r = {"model": "m", "messages": [{"role": "user", "content": "hi"}]}
    bri = build_bound_request_input(r, BindingDescriptor.include(["messages", "model", "tools"]), "N")
    assert bri.to_json() == {
        "binding": {"mode": "top_level_include", "fields": ["messages", "model", "tools"]},
        "projection": r,
        "absent_fields": ["tools"],
        "nonce": "N",
    }


def test_full_and_exclude_layouts():
    assert build_bound_request_input({"a": 1}, BindingDescriptor.full(), None).to_json() == {
        "binding": {"mode": "full"}, "projection": {"a": 1}}
    bri = build_bound_request_input({"a": 1, "trace": "t"}, BindingDescriptor.exclude(["trace"]), None)
    assert bri.projection == {"a": 1}


def test_fields_are_sorted_and_deduplicated():
    d = BindingDescriptor.include(["tools", "model", "tools"])
    assert d.fields == ("model", "tools")
    assert d == BindingDescriptor.include(["model", "tools"])


@pytest.mark.parametrize("obj", [
    {"mode": "top_level_include", "fields": []},
    {"mode": "top_level_exclude"},
    {"mode": "top_level_include", "fields": ["attestation"]},
    {"mode": "full", "fields": ["a"]},
    {"mode": "nested"},
    {"mode": "top_level_include", "fields": [1]},
    "full",
])
def test_invalid_descriptors(obj):
    with pytest.raises(InvalidBinding):
        BindingDescriptor.from_json(obj)


def test_descriptor_json_round_trip():
    for d in (BindingDescriptor.full(), BindingDescriptor.include(["b", "a"]), BindingDescriptor.exclude(["x"])):
        assert BindingDescriptor.from_json(d.to_json()) == d
    assert BindingDescriptor.full().mode is BindingMode.FULL


def test_nonce_changes_commit_and_effective_uses_same_space():
    r = {"model": "m"}
    d = BindingDescriptor.full()
    assert commit_request(r, d, "a") != commit_request(r, d, "b")
    assert effective_request_commit(r, d, "a") == commit_request(r, d, "a")
    assert effective_request_commit({**r, "n": 1}, d, "a") != commit_request(r, d, "a")
    bri = build_bound_request_input(r, d, "a")
    assert request_commit(bri) == commit_request(r, d, "a")


def test_commitment_text_form():
    c = commit_request({"a": 1}, BindingDescriptor.full(), None)
    assert Commitment.from_text(c.text) == c
    assert c.text.startswith("sha256:") and len(c.text) == 71
    for bad in ("sha256:" + "A" * 64, "sha256:abc", "md5:" + "0" * 64, 7):
        with pytest.raises(InvalidCommitment):
            Commitment.from_text(bad)
