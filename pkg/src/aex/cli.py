"""``aex`` command line: keygen, serve-lab, run, verify, vectors, bench.

Machine-readable JSON goes to stdout, logs to stderr.  ``verify`` exits 0
only for ``verified_complete`` and uses a distinct code for every other
state.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Any, Sequence

from .errors import AexError
from .jcs import parse
from .keys import SigningKey, VerifyingKey, jwks_document, parse_jwks
from .verify import Verdict, VerifierConfig, VerifierState

log = logging.getLogger("aex")

EXIT_CODES = {
    VerifierState.VERIFIED_COMPLETE: 0,
    VerifierState.VERIFIED_PREFIX: 11,
    VerifierState.TRUNCATED_AFTER_VERIFIED_PREFIX: 12,
    VerifierState.TRUNCATED_WITHOUT_TERMINAL: 13,
    VerifierState.UNATTESTED_OR_OUT_OF_SCOPE: 14,
    VerifierState.REQUEST_MISMATCH: 15,
    VerifierState.KEY_UNAVAILABLE: 16,
    VerifierState.TAMPERED: 17,
}
EXIT_ERROR = 1


def _emit(obj: Any) -> None:
    json.dump(obj, sys.stdout, ensure_ascii=False, indent=2)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _read_json(path: str) -> Any:
    return parse(Path(path).read_bytes())


def _lab_config(path: str | None, runs_dir: str | None = None):
    from .lab.common import RUNS_DIR_ENV, LabConfig

    cfg = LabConfig.from_json(_read_json(path)) if path else LabConfig()
    runs = runs_dir or cfg.runs_dir or os.environ.get(RUNS_DIR_ENV)
    if runs:
        cfg.runs_dir = runs
    return cfg


# -- keygen -------------------------------------------------------------------------

def cmd_keygen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jwks_path = out / "jwks.json"
    existing: dict[str, VerifyingKey] = {}
    if jwks_path.exists():
        existing = parse_jwks(args.iss, _read_json(str(jwks_path)))
    if args.kid in existing:
        raise AexError(f"kid {args.kid!r} already present in {jwks_path}")
    key = SigningKey.generate(args.iss, args.kid)
    seed_path = out / f"{args.kid}.seed"
    seed_path.write_text(key.seed.hex() + "\n", encoding="ascii")
    os.chmod(seed_path, 0o600)
    doc = jwks_document([*existing.values(), key.verifying_key])
    jwks_path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    _emit({"iss": args.iss, "kid": args.kid, "seed_path": str(seed_path), "jwks_path": str(jwks_path),
           "jwk": key.verifying_key.to_jwk()})
    return 0


def load_signing_key(seed_path: str, iss: str, kid: str) -> SigningKey:
    return SigningKey(iss, kid, bytes.fromhex(Path(seed_path).read_text(encoding="ascii").strip()))


# -- lab ----------------------------------------------------------------------------

def cmd_serve_lab(args: argparse.Namespace) -> int:
    from .lab import LabTopology

    topo = LabTopology(_lab_config(args.config, args.runs_dir)).start()
    _emit({"urls": topo.urls, "issuers": {r: i.iss for r, i in topo.identities.items()},
           "runs_dir": topo.config.runs_dir})
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        topo.stop()
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    from .lab import LabTopology, get_scenario, run_scenario, summarize
    from .lab.trace import save_trace

    scenario = get_scenario(args.scenario)
    cfg = _lab_config(args.config, args.out_dir)
    if args.gateway:
        results = run_scenario(args.gateway, scenario, args.repeat, args.warmup)
    else:
        with LabTopology(cfg) as topo:
            results = run_scenario(topo, scenario, args.repeat, args.warmup)
    if args.out_dir and args.gateway:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        for r in results:
            save_trace(r.trace, args.out_dir)
    summary = summarize(results)
    summary["run_ids"] = [r.run_id for r in results]
    _emit(summary)
    return 0 if summary["expected_matches"] == summary["runs"] else EXIT_ERROR


def cmd_bench(args: argparse.Namespace) -> int:
    from .lab import LabTopology
    from .lab.bench import format_table, run_bench

    with LabTopology(_lab_config(args.config)) as topo:
        report = run_bench(topo, args.scenarios, args.repeat, args.warmup)
    print(format_table(report), file=sys.stderr)
    _emit(report)
    return 0 if report["all_verified"] else EXIT_ERROR


# -- verify -------------------------------------------------------------------------

def _resolver_from_trust(path: str):
    from .trust import IssuerTrustPolicy, JwksCache, KeyResolver, StaticJwksFetcher, httpx_fetcher

    cfg = _read_json(path)
    offline = cfg.pop("offline_jwks", None)
    policy = IssuerTrustPolicy.from_json(cfg)
    if offline is not None:
        fetch = StaticJwksFetcher(offline)
    else:
        import httpx

        fetch = httpx_fetcher(httpx.Client(timeout=10.0))
    return KeyResolver(policy, JwksCache(), fetch)


def _looks_like_sse(path: str, data: bytes) -> bool:
    return path.endswith((".sse", ".txt")) or data.lstrip().startswith((b"data:", b":"))


def verify_files(request_path: str, response_path: str, trust_path: str,
                 config: VerifierConfig | None = None) -> Verdict:
    from .lab.trace import verify_response_text
    from .openai_profile import SseStreamVerifier

    request = _read_json(request_path)
    data = Path(response_path).read_bytes()
    resolver = _resolver_from_trust(trust_path)
    config = config or VerifierConfig()
    if _looks_like_sse(response_path, data):
        verifier = SseStreamVerifier(request, resolver, config)
        verifier.feed(data)
        return verifier.finish()
    return verify_response_text(request, data.decode("utf-8"), resolver, config)


def cmd_verify(args: argparse.Namespace) -> int:
    config = VerifierConfig(require_activation=not args.lenient_activation,
                            strict_profile=not args.lenient_profile)
    if args.trace:
        from .lab.trace import load_trace, replay_trace

        trace = load_trace(args.trace)
        verdict = replay_trace(trace)
        out = verdict.to_json()
        out["matches_recorded"] = out == trace.verdict
        _emit(out)
        return EXIT_CODES[verdict.state]
    if not (args.request and args.response and args.trust):
        raise AexError("verify needs --request, --response and --trust (or --trace)")
    verdict = verify_files(args.request, args.response, args.trust, config)
    _emit(verdict.to_json())
    return EXIT_CODES[verdict.state]


# -- vectors ------------------------------------------------------------------------

def cmd_vectors(args: argparse.Namespace) -> int:
    from . import vectors

    if args.action == "generate":
        paths = vectors.generate(args.path, args.sections)
        _emit({"written": [str(p) for p in paths]})
        return 0
    report = vectors.check(args.path, args.sections)
    _emit(report)
    return 0 if report["ok"] else EXIT_ERROR


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .vectors import SECTIONS

    p = argparse.ArgumentParser(prog="aex", description="Attested request/output exchange tooling.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate an Ed25519 issuer key and add it to a JWKS")
    k.add_argument("--iss", required=True, help="issuer URL")
    k.add_argument("--kid", required=True)
    k.add_argument("--out", required=True, help="directory for <kid>.seed and jwks.json")
    k.set_defaults(func=cmd_keygen)

    s = sub.add_parser("serve-lab", help="boot gateway, proxies and provider on loopback")
    s.add_argument("--config", help="lab config JSON")
    s.add_argument("--runs-dir", help="directory for per-run traces")
    s.set_defaults(func=cmd_serve_lab)

    r = sub.add_parser("run", help="run a named lab scenario")
    r.add_argument("scenario")
    r.add_argument("--repeat", type=int, default=1)
    r.add_argument("--warmup", type=int, default=0)
    r.add_argument("--out-dir", help="where traces are written")
    r.add_argument("--config", help="lab config JSON")
    r.add_argument("--gateway", help="use an already running lab gateway instead of booting one")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="verify a response or SSE capture offline")
    v.add_argument("--request", help="request JSON exactly as sent")
    v.add_argument("--response", help="response JSON or raw SSE capture")
    v.add_argument("--trust", help="trust config JSON (allowlist, pins, optional offline_jwks)")
    v.add_argument("--trace", help="replay a persisted lab run trace instead")
    v.add_argument("--lenient-activation", action="store_true",
                   help="verify even when the request did not activate attestation")
    v.add_argument("--lenient-profile", action="store_true", help="skip non-object SSE payloads")
    v.set_defaults(func=cmd_verify)

    x = sub.add_parser("vectors", help="generate or check conformance vectors")
    x.add_argument("action", choices=("generate", "check"))
    x.add_argument("path", help="vector directory (or single file for check)")
    x.add_argument("--sections", nargs="*", choices=SECTIONS)
    x.set_defaults(func=cmd_vectors)

    b = sub.add_parser("bench", help="benchmark the five success scenarios")
    b.add_argument("--scenarios", nargs="*", default=None)
    b.add_argument("--repeat", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--config", help="lab config JSON")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "scenarios", None) is None and args.command == "bench":
        from .lab.scenarios import BENCH_SCENARIOS

        args.scenarios = list(BENCH_SCENARIOS)
    try:
        return args.func(args)
    except (AexError, OSError, ValueError) as exc:
        log.error("%s", exc)
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
