"""Sign a response as an issuer, then verify it the way a client would.

Shows a clean non-stream verdict, a tampered body, and a stream that loses
its tail after a checkpoint.

Run: python3 demos/02_attest_and_verify.py
"""

from aex import SigningKey, StreamAttester, verify_nonstream
from aex.keys import jwks_document
from aex.openai_profile import SseStreamVerifier, attest_nonstream, issuer_request_context, sse_encode
from aex.trust import IssuerTrustPolicy, JwksCache, KeyResolver, StaticJwksFetcher

ISS = "https://issuer.demo"
key = SigningKey.from_label(ISS, "demo-1", "demo key")


def resolver():
    # Offline stand-in for fetching {iss}/.well-known/aex-keys.json.
    fetch = StaticJwksFetcher({ISS: jwks_document([key.verifying_key])})
    return KeyResolver(IssuerTrustPolicy(allowlist=frozenset({ISS})), JwksCache(), fetch)


request = {"model": "m", "messages": [{"role": "user", "content": "hi"}],
           "attestation": {"required": True, "nonce": "n-42"}}
body = {"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": "hello"}}]}
signed = attest_nonstream(body, key, issuer_request_context(request))

print("clean body     ", verify_nonstream(request, signed, resolver()).to_json())
edited = {**signed, "choices": [{"index": 0, "message": {"role": "assistant", "content": "HELLO"}}]}
print("edited body    ", verify_nonstream(request, edited, resolver()).to_json())

stream_req = {**request, "stream": True}
ctx = issuer_request_context(stream_req)
chunks = [{"id": "s", "choices": [{"index": 0, "delta": {"content": w}}]} for w in ("a", "b", "c", "d")]
attester = StreamAttester(key, ctx.request_commit, nonce=ctx.nonce)
plan = {}
for i, c in enumerate(chunks, start=1):
    attester.absorb(c)
    if i == 2:
        plan[i] = attester.checkpoint()
plan[len(chunks)] = attester.terminal()
wire = sse_encode(chunks, plan)


def verify_sse(data: bytes, transport_ok: bool = True):
    v = SseStreamVerifier(stream_req, resolver())
    v.feed(data)
    final = v.finish(transport_ok)
    return [s["state"] for s in v.timeline], final.state.value


print("full stream    ", verify_sse(wire))
cut = wire[:wire.index(b"data:", wire.index(b'"checkpoint"'))]
print("cut after ckpt ", verify_sse(cut, transport_ok=False))
