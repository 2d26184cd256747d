"""Desk-scale microbenchmark over the success scenarios."""

from __future__ import annotations

import time
from typing import Any, Sequence

import httpx

from .scenarios import BENCH_SCENARIOS, get_scenario, run_scenario, summarize


def run_bench(topology_or_url, scenarios: Sequence[str] = BENCH_SCENARIOS, repeat: int = 20,
              warmup: int = 3) -> dict[str, Any]:
    t0 = time.perf_counter()
    rows = []
    with httpx.Client(timeout=30.0) as client:
        for name in scenarios:
            results = run_scenario(topology_or_url, get_scenario(name), repeat, warmup, client)
            rows.append(summarize(results))
    return {
        "repeat": repeat,
        "warmup": warmup,
        "total_seconds": time.perf_counter() - t0,
        "all_verified": all(r["verified_complete"] == r["runs"] for r in rows),
        "scenarios": rows,
    }


def format_table(report: dict[str, Any]) -> str:
    def ms(v):
        return "---" if v is None else f"{v:.3f}"

    lines = [f"{'scenario':32} {'runs':>16} {'client ms':>10} {'first ms':>10} {'verify ms':>10} {'jwks':>5}"]
    for row in report["scenarios"]:
        lines.append(f"{row['scenario']:32} {row['label']:>16} {ms(row['median_client_completion_ms']):>10} "
                     f"{ms(row['median_first_chunk_ms']):>10} {ms(row['median_gateway_verification_ms']):>10} "
                     f"{','.join(map(str, row['jwks_fetches'])):>5}")
    lines.append(f"total {report['total_seconds']:.1f}s")
    return "\n".join(lines)
