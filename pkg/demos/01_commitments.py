"""Walk through request binding, output commitments and the streaming chain.

Run: python3 demos/01_commitments.py
"""

from aex import BindingDescriptor, build_bound_request_input, commit_request, jcs_serialize, nonstream_output_commit
from aex.output import chain_finalize, chain_init

request = {
    "model": "gpt-5",
    "messages": [{"role": "user", "content": "Summarize this document."}],
    "attestation": {"required": True, "nonce": "demo-nonce"},
}

print("== request binding ==")
for descriptor in (BindingDescriptor.full(),
                   BindingDescriptor.from_json({"mode": "top_level_include", "fields": ["messages", "model", "tools"]})):
    bri = build_bound_request_input(request, descriptor, "demo-nonce")
    print(f"{descriptor.to_json()}")
    print(f"  preimage  {jcs_serialize(bri.to_json()).decode()}")
    print(f"  commit    {commit_request(request, descriptor, 'demo-nonce').text}")

# `tools` was absent and is listed in absent_fields, so adding it later moves the commitment.
include = BindingDescriptor.from_json({"mode": "top_level_include", "fields": ["messages", "model", "tools"]})
injected = {**request, "tools": [{"type": "function", "function": {"name": "lookup_account"}}]}
print("\ninjecting tools changes the include-mode commit:",
      commit_request(request, include, "demo-nonce") != commit_request(injected, include, "demo-nonce"))

print("\n== non-stream output ==")
body = {"id": "chatcmpl-1", "choices": [{"index": 0, "message": {"role": "assistant", "content": "Done."}}]}
print("output_commit", nonstream_output_commit(body).text)

print("\n== streaming chain ==")
r = commit_request(request, BindingDescriptor.full(), "demo-nonce")
chain = chain_init(r)
print(f"chain_0  {chain.value.hex()}")
for i, word in enumerate(["Hello", " there", "!"], start=1):
    chain = chain.absorb({"id": "c", "choices": [{"index": 0, "delta": {"content": word}}]})
    print(f"chain_{i}  {chain.value.hex()}")
commit, count = chain_finalize(chain)
print(f"final    {commit.text} over {count} chunks")
