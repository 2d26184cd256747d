"""End-to-end acceptance checks; the terminal summary prints one PASS/FAIL line per criterion."""

import dataclasses
import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aex import cli, vectors
from aex.attestation import Attestation, StreamAttester, sign_attestation
from aex.commitments import Commitment
from aex.errors import KeyUnavailable
from aex.jcs import jcs_serialize, parse
from aex.keys import jwks_document
from aex.lab import SCENARIOS, load_trace, replay_trace, run_scenario
from aex.lab.scenarios import BENCH_SCENARIOS
from aex.lab.transforms import collapse_stream, repackage_as_stream
from aex.openai_profile import attest_nonstream, issuer_request_context
from aex.output import OutputMode, chain_finalize, chain_init, nonstream_output_commit
from aex.receipts import OriginOutputReceipt, OutputTransformReceipt
from aex.trust import FetchResult, JwksCache
from aex.verify import StreamVerifySession, VerifierState, verify_nonstream
from tests.support import CHAT, KEY, OTHER_KEY, attested_stream, resolver

S = VerifierState
VECTORS = Path(__file__).parent / "vectors"
PROFILE = "openai.chat_completions"


def run_stream(req, items, res=None):
    session = StreamVerifySession(req, res or resolver())
    for item in items:
        session.on_chunk(item)
    return session.finish(True)


@pytest.fixture(scope="module")
def scenario_runs(lab):
    """Every registered scenario run twice through the live lab."""
    return {name: run_scenario(lab, name, repeat=2) for name in SCENARIOS}


# -- 1 ------------------------------------------------------------------------------

@pytest.mark.criterion(1, "RFC 8785 appendix samples canonicalize to the oracle goldens")
def test_c01_rfc8785_goldens():
    doc = json.loads((VECTORS / "jcs_rfc8785.json").read_text(encoding="utf-8"))
    assert len(doc["cases"]) >= 29
    for case in doc["cases"]:
        expected = case["expected"]
        if "canonical" in expected:
            assert jcs_serialize(parse(case["inputs"]["json"])).decode("utf-8") == expected["canonical"], case["name"]
    report = vectors.check_file(VECTORS / "jcs_rfc8785.json")
    assert report["failures"] == []


# -- 2 ------------------------------------------------------------------------------

@pytest.mark.criterion(2, "commitment vectors recomputed bit-exactly by `aex vectors check`")
def test_c02_commitment_vectors(capsys):
    sections = ["binding", "output", "chunk_hash", "chain"]
    code = cli.main(["vectors", "check", str(VECTORS), "--sections", *sections])
    report = json.loads(capsys.readouterr().out)
    assert code == 0 and report["ok"] and report["failed"] == 0
    assert report["cases"] >= 20
    expected_keys = set()
    for name in sections:
        for case in json.loads((VECTORS / f"{name}.json").read_text(encoding="utf-8"))["cases"]:
            expected_keys |= set(case["expected"])
    assert {"request_commit", "effective_request_commit", "output_commit", "chunk_hash", "chain"} <= expected_keys


# -- 3 ------------------------------------------------------------------------------

FAULTS = ("mutate", "drop", "insert", "swap", "anchor")


def _flip_one_byte(text: str, rng: random.Random) -> str:
    i = rng.randrange(len(text))
    return text[:i] + chr(ord(text[i]) ^ 1) + text[i + 1:]


def _finalized(r, bodies):
    chain = chain_init(r)
    for b in bodies:
        chain = chain.absorb(b)
    return chain_finalize(chain)[0] if chain.count else None


@pytest.mark.criterion(3, "every injected stream fault changes the commitment and is never accepted")
def test_c03_tamper_property():
    rng = random.Random(20261015)
    trials = 240
    outcomes = {f: 0 for f in FAULTS}
    for t in range(trials):
        fault = FAULTS[t % len(FAULTS)]
        n = rng.randint(2, 6)
        req = {**CHAT, "stream": True, "attestation": {"required": True, "nonce": f"t{t}"}}
        bodies = [{"id": "c", "choices": [{"index": 0, "delta": {"content": f"w{t}-{i}-{rng.random():.6f}"}}]}
                  for i in range(n)]
        items, _ = attested_stream(req, bodies, checkpoints=rng.sample(range(1, n), k=rng.randint(0, 1)))
        r = issuer_request_context(req).request_commit
        verify_req = req
        if fault == "mutate":
            k = rng.randrange(n)
            delta = items[k]["choices"][0]["delta"]
            items[k] = {**items[k], "choices": [{"index": 0, "delta": {"content": _flip_one_byte(delta["content"], rng)}}]}
        elif fault == "drop":
            del items[rng.randrange(n)]
        elif fault == "insert":
            extra = {"id": "c", "choices": [{"index": 0, "delta": {"content": "injected"}}]}
            items.insert(rng.randrange(n + 1), extra)
        elif fault == "swap":
            a, b = rng.sample(range(n), 2)
            items[a], items[b] = items[b], items[a]
        else:
            verify_req = {**req, "messages": [{"role": "user", "content": "another prompt"}]}
            r = issuer_request_context(verify_req).request_commit

        delivered = [{k: v for k, v in c.items() if k != "attestation"} for c in items]
        assert _finalized(r, delivered) != _finalized(issuer_request_context(req).request_commit, bodies)
        verdict = run_stream(verify_req, items)
        assert verdict.state not in (S.VERIFIED_COMPLETE, S.VERIFIED_PREFIX), (fault, verdict.to_json())
        outcomes[fault] += 1
    assert sum(outcomes.values()) == trials >= 200


# -- 4 ------------------------------------------------------------------------------

@pytest.mark.lab
@pytest.mark.criterion(4, "lab scenarios cover all eight verifier states with 100% expected matches")
def test_c04_state_coverage(scenario_runs):
    seen = set()
    for name, results in scenario_runs.items():
        for r in results:
            assert r.state == SCENARIOS[name].expected.value, (name, r.trace.verdict)
            seen.add(r.state)
            seen.update(s["state"] for s in r.trace.states)
    assert seen == {s.value for s in S}


# -- 5 ------------------------------------------------------------------------------

def _lineage_stream(req, n):
    ctx = issuer_request_context(req)
    items = [{"id": "c", "choices": [{"index": 0, "delta": {"content": f"p{i}"}}]} for i in range(n)]
    lineage = StreamAttester(KEY, ctx.request_commit, nonce=ctx.nonce, lineage_mode=True)
    plain = StreamAttester(KEY, ctx.request_commit, nonce=ctx.nonce)
    checkpoints = {}
    for i, c in enumerate(items, start=1):
        lineage.absorb(c)
        plain.absorb(c)
        checkpoints[i] = plain.checkpoint().to_json()
    final, _ = chain_finalize(lineage.chain)
    src = nonstream_output_commit(collapse_stream(items))
    origin = OriginOutputReceipt(PROFILE, OTHER_KEY.iss, ctx.request_commit, OutputMode.NON_STREAM, src).signed(OTHER_KEY)
    rp = OutputTransformReceipt(KEY.iss, ctx.request_commit, OutputMode.NON_STREAM, src, OutputMode.STREAM,
                                final, "repackage-as-stream/v1").signed(KEY)
    terminal = lineage.terminal(origin_output=origin, output_transforms=[rp], resolve=resolver())
    out = [dict(c) for c in items]
    out[-1]["attestation"] = terminal.to_json()
    return out, checkpoints


@pytest.mark.criterion(5, "checkpoints mixed with a lineage terminal are always tampered")
@settings(max_examples=120, deadline=None, derandomize=True)
@given(st.integers(2, 8).flatmap(lambda n: st.tuples(
    st.just(n), st.sets(st.integers(1, n - 1), min_size=1, max_size=n - 1))))
def test_c05_checkpoint_lineage_exclusion(case):
    n, positions = case
    req = {**CHAT, "stream": True, "attestation": {"required": True, "nonce": "mix"}}
    items, checkpoints = _lineage_stream(req, n)
    assert run_stream(req, items).state is S.VERIFIED_COMPLETE
    for p in positions:
        items[p - 1]["attestation"] = checkpoints[p]
    verdict = run_stream(req, items)
    assert verdict.state is S.TAMPERED and "checkpoint_lineage_mixing" in verdict.codes


# -- 6 ------------------------------------------------------------------------------

WRONG = Commitment(b"\x42" * 32)


def _flip_mode(mode):
    return OutputMode.STREAM if mode is OutputMode.NON_STREAM else OutputMode.NON_STREAM


def _mislabels(att: Attestation):
    """Yield (label, attestation) with exactly one mode or commit changed and everything re-signed."""
    origin, (ot,) = att.origin_output, att.output_transforms

    def with_(origin_=origin, ot_=ot, **terminal):
        signed_origin = dataclasses.replace(origin_, sig=None).signed(OTHER_KEY)
        signed_ot = dataclasses.replace(ot_, sig=None).signed(KEY)
        return sign_attestation(KEY, dataclasses.replace(att, origin_output=signed_origin,
                                                         output_transforms=(signed_ot,), **terminal))

    yield "origin.output_mode", with_(origin_=dataclasses.replace(origin, output_mode=_flip_mode(origin.output_mode)))
    yield "origin.output_commit", with_(origin_=dataclasses.replace(origin, output_commit=WRONG))
    yield "origin.request_commit", with_(origin_=dataclasses.replace(origin, request_commit=WRONG))
    yield "transform.in_output_mode", with_(ot_=dataclasses.replace(ot, in_output_mode=_flip_mode(ot.in_output_mode)))
    yield "transform.in_output_commit", with_(ot_=dataclasses.replace(ot, in_output_commit=WRONG))
    yield "transform.out_output_mode", with_(ot_=dataclasses.replace(ot, out_output_mode=_flip_mode(ot.out_output_mode)))
    yield "transform.out_output_commit", with_(ot_=dataclasses.replace(ot, out_output_commit=WRONG))
    yield "transform.request_commit", with_(ot_=dataclasses.replace(ot, request_commit=WRONG))
    yield "terminal.output_commit", with_(output_commit=WRONG)


def _collapse_flow(req):
    """Origin streams, the proxy buffers into one object (stream -> non_stream)."""
    ctx = issuer_request_context(req)
    source = [{"id": "s", "choices": [{"index": 0, "delta": {"content": w}}]} for w in ("Hi", " there", "!")]
    chain = chain_init(ctx.request_commit)
    for c in source:
        chain = chain.absorb(c)
    src_commit, _ = chain_finalize(chain)
    body = collapse_stream(source)
    origin = OriginOutputReceipt(PROFILE, OTHER_KEY.iss, ctx.request_commit, OutputMode.STREAM, src_commit).signed(OTHER_KEY)
    ot = OutputTransformReceipt(KEY.iss, ctx.request_commit, OutputMode.STREAM, src_commit, OutputMode.NON_STREAM,
                                nonstream_output_commit(body), "buffer-and-collapse/v1").signed(KEY)
    return attest_nonstream(body, KEY, ctx, origin_output=origin, output_transforms=[ot], resolve=resolver())


def _repackage_flow(req):
    """Origin returns one object, the proxy re-emits it as a stream (non_stream -> stream)."""
    ctx = issuer_request_context(req)
    body = {"id": "o", "object": "chat.completion", "created": 1, "model": "m",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": "one two three four"},
                         "finish_reason": "stop"}]}
    src_commit = nonstream_output_commit(body)
    chunks = repackage_as_stream(body, 3)
    attester = StreamAttester(KEY, ctx.request_commit, nonce=ctx.nonce, lineage_mode=True)
    for c in chunks:
        attester.absorb(c)
    final, _ = chain_finalize(attester.chain)
    origin = OriginOutputReceipt(PROFILE, OTHER_KEY.iss, ctx.request_commit, OutputMode.NON_STREAM, src_commit).signed(OTHER_KEY)
    ot = OutputTransformReceipt(KEY.iss, ctx.request_commit, OutputMode.NON_STREAM, src_commit, OutputMode.STREAM,
                                final, "repackage-as-stream/v1").signed(KEY)
    terminal = attester.terminal(origin_output=origin, output_transforms=[ot], resolve=resolver())
    return chunks, terminal


@pytest.mark.criterion(6, "collapse and repackage lineage verify; any single mislabel is tampered")
def test_c06_lineage_closure():
    req = {**CHAT, "attestation": {"required": True, "nonce": "a2"}}
    resp = _collapse_flow(req)
    assert verify_nonstream(req, resp, resolver()).state is S.VERIFIED_COMPLETE
    att = Attestation.from_json(resp["attestation"])
    for label, bad in _mislabels(att):
        v = verify_nonstream(req, {**resp, "attestation": bad.to_json()}, resolver())
        assert v.state is S.TAMPERED, (label, v.to_json())

    sreq = {**CHAT, "stream": True, "attestation": {"required": True, "nonce": "a4"}}
    chunks, terminal = _repackage_flow(sreq)

    def deliver(att):
        out = [dict(c) for c in chunks]
        out[-1]["attestation"] = att.to_json()
        return run_stream(sreq, out)

    assert deliver(terminal).state is S.VERIFIED_COMPLETE
    for label, bad in _mislabels(terminal):
        v = deliver(bad)
        assert v.state is S.TAMPERED, (label, v.to_json())


# -- 7 ------------------------------------------------------------------------------

INCLUDE = {"mode": "top_level_include", "fields": ["messages", "model", "tools"]}


@pytest.mark.criterion(7, "injecting an absent bound `tools` field is request_mismatch in every trial")
@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(st.fixed_dictionaries({"type": st.just("function"),
                                        "function": st.fixed_dictionaries({"name": st.text(min_size=1, max_size=8)})}),
                max_size=3))
def test_c07_absent_field_injection_inmemory(tools):
    req = {**CHAT, "attestation": {"required": True, "nonce": "inj", "request_binding": INCLUDE}}
    seen_by_origin = {**req, "tools": tools}
    body = {"id": "x", "choices": [{"index": 0, "message": {"content": "ok"}}]}
    resp = attest_nonstream(body, KEY, issuer_request_context(seen_by_origin))
    v = verify_nonstream(req, resp, resolver())
    assert v.state is S.REQUEST_MISMATCH and "request_commit_mismatch" in v.codes


@pytest.mark.lab
@pytest.mark.criterion(7, "injecting an absent bound `tools` field is request_mismatch in every trial")
def test_c07_absent_field_injection_lab(lab):
    results = run_scenario(lab, "nonstream-inject-bound-field", repeat=20)
    assert [r.state for r in results] == [S.REQUEST_MISMATCH.value] * 20
    for r in results:
        assert "request_commit_mismatch" in {d["code"] for d in r.trace.verdict["diagnostics"]}


# -- 8 ------------------------------------------------------------------------------

class _ProbeFetcher:
    def __init__(self):
        self.calls = 0

    def __call__(self, url):
        self.calls += 1
        return FetchResult(200, {}, json.dumps(jwks_document([KEY.verifying_key])).encode())


@pytest.mark.lab
@pytest.mark.criterion(8, "per-run JWKS fetch counts (3 transform chain, 2 lineage) and storm limit")
def test_c08_jwks_counts_and_storm(scenario_runs):
    for name, want in (("transform-chain-success", 3), ("nonstream-lineage-success", 2),
                       ("stream-lineage-success", 2)):
        assert {r.trace.jwks_fetch_count for r in scenario_runs[name]} == {want}, name

    now = [0.0]
    cache = JwksCache(clock=lambda: now[0])
    fetch = _ProbeFetcher()
    cache.get_key(KEY.iss, KEY.kid, fetch)
    windows = 4
    for _ in range(windows):
        now[0] += cache.refresh_cooldown + 1
        before = fetch.calls
        for i in range(200):
            with pytest.raises(KeyUnavailable):
                cache.get_key(KEY.iss, f"probe-{i}", fetch)
        assert fetch.calls - before <= 1
    assert fetch.calls <= 1 + windows


# -- 9 ------------------------------------------------------------------------------

@pytest.mark.lab
@pytest.mark.criterion(9, "desk-scale bench: 20/20 verified, stream medians >= 240 ms, verify < 50 ms, < 2 min")
def test_c09_bench(capsys):
    code = cli.main(["bench", "--repeat", "20", "--warmup", "3"])
    report = json.loads(capsys.readouterr().out)
    with capsys.disabled():
        for row in report["scenarios"]:
            print(f"\n  bench {row['scenario']:28} {row['label']:>15} client={row['median_client_completion_ms']:.1f}ms "
                  f"verify={row['median_gateway_verification_ms']:.3f}ms jwks={row['jwks_fetches']}", end="")
        print(f"\n  bench total {report['total_seconds']:.1f}s")
    assert code == 0
    assert [r["scenario"] for r in report["scenarios"]] == list(BENCH_SCENARIOS)
    for row in report["scenarios"]:
        assert row["runs"] == 20 and row["verified_complete"] == 20, row
        assert row["median_gateway_verification_ms"] < 50, row
        if row["median_first_chunk_ms"] is not None:
            assert row["median_client_completion_ms"] >= 240, row
    assert sum(r["median_first_chunk_ms"] is not None for r in report["scenarios"]) == 2
    assert report["total_seconds"] < 120


# -- 10 -----------------------------------------------------------------------------

@pytest.mark.lab
@pytest.mark.criterion(10, "offline replay of every persisted trace reproduces the live verdict")
def test_c10_offline_replay(lab, scenario_runs):
    replayed = 0
    for results in scenario_runs.values():
        for r in results:
            saved = load_trace(lab.config.runs_path / f"{r.run_id}.json")
            assert replay_trace(saved).to_json() == r.trace.verdict, r.scenario.name
            replayed += 1
    assert replayed == 2 * len(SCENARIOS)
