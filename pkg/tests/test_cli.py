import json
import os
import stat

import pytest

from aex.cli import EXIT_CODES, main
from aex.keys import SigningKey, jwks_document
from aex.verify import VerifierState
from tests.support import KEY, attested_body, chunks, request, sse_bytes


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def write(path, obj):
    path.write_text(json.dumps(obj) if not isinstance(obj, bytes) else obj.decode())
    return str(path)


@pytest.fixture
def trust(tmp_path):
    return write(tmp_path / "trust.json", {"allowlist": [KEY.iss],
                                           "offline_jwks": {KEY.iss: jwks_document([KEY.verifying_key])}})


def test_keygen(tmp_path, capsys):
    code, out = run(capsys, "keygen", "--iss", "https://me.test", "--kid", "a", "--out", str(tmp_path))
    assert code == 0 and out["kid"] == "a"
    seed = tmp_path / "a.seed"
    assert stat.S_IMODE(os.stat(seed).st_mode) == 0o600
    key = SigningKey("https://me.test", "a", bytes.fromhex(seed.read_text().strip()))
    assert json.loads((tmp_path / "jwks.json").read_text())["keys"] == [key.verifying_key.to_jwk()]
    code, _ = run(capsys, "keygen", "--iss", "https://me.test", "--kid", "b", "--out", str(tmp_path))
    assert code == 0 and len(json.loads((tmp_path / "jwks.json").read_text())["keys"]) == 2
    code, out = run(capsys, "keygen", "--iss", "https://me.test", "--kid", "a", "--out", str(tmp_path))
    assert code == 1 and "already present" in out["message"]


def test_verify_nonstream(tmp_path, capsys, trust):
    req = request()
    resp = attested_body(req)
    args = ["verify", "--request", write(tmp_path / "req.json", req), "--trust", trust, "--response"]
    code, out = run(capsys, *args, write(tmp_path / "resp.json", resp))
    assert code == 0 and out["state"] == "verified_complete"
    resp["id"] = "changed"
    code, out = run(capsys, *args, write(tmp_path / "bad.json", resp))
    assert code == EXIT_CODES[VerifierState.TAMPERED] == 17
    code, out = run(capsys, *args, write(tmp_path / "junk.json", b"not json"))
    assert out["diagnostics"][0]["code"] == "response_unparseable"


def test_verify_sse_capture(tmp_path, capsys, trust):
    req = request(stream=True)
    base = ["verify", "--request", write(tmp_path / "req.json", req), "--trust", trust, "--response"]
    code, _ = run(capsys, *base, write(tmp_path / "ok.sse", sse_bytes(req, chunks(3), checkpoints=[1])))
    assert code == 0
    cut = sse_bytes(req, chunks(3), checkpoints=[1], terminal=False, done=False)
    code, out = run(capsys, *base, write(tmp_path / "cut.sse", cut))
    assert code == EXIT_CODES[VerifierState.TRUNCATED_AFTER_VERIFIED_PREFIX]


def test_verify_activation_flag(tmp_path, capsys, trust):
    req = {"model": "m"}
    resp = attested_body({**req, "attestation": True})
    base = ["verify", "--request", write(tmp_path / "r.json", req), "--response",
            write(tmp_path / "o.json", resp), "--trust", trust]
    assert run(capsys, *base)[0] == EXIT_CODES[VerifierState.UNATTESTED_OR_OUT_OF_SCOPE]
    assert run(capsys, *base, "--lenient-activation")[0] == 0


def test_verify_needs_inputs(capsys):
    assert run(capsys, "verify", "--request", "x.json")[0] == 1


def test_vectors_commands(tmp_path, capsys):
    code, out = run(capsys, "vectors", "generate", str(tmp_path))
    assert code == 0 and len(out["written"]) == 8
    code, out = run(capsys, "vectors", "check", str(tmp_path), "--sections", "jcs", "chain")
    assert code == 0 and out["ok"]


def test_exit_codes_are_distinct():
    assert len(set(EXIT_CODES.values())) == len(VerifierState)
    assert EXIT_CODES[VerifierState.VERIFIED_COMPLETE] == 0


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
