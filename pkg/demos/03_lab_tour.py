"""Boot the loopback lab, run every scenario once and replay one trace offline.

Run: python3 demos/03_lab_tour.py   (takes a few seconds)
"""

import tempfile

from aex.lab import SCENARIOS, LabConfig, LabTopology, load_trace, replay_trace, run_scenario

with tempfile.TemporaryDirectory() as runs, LabTopology(LabConfig(runs_dir=runs)) as lab:
    print("topology:", lab.urls)
    print(f"\n{'scenario':36} {'expected':34} {'got':34} jwks")
    last = None
    for name, scenario in SCENARIOS.items():
        (result,) = run_scenario(lab, scenario)
        mark = "" if result.matches else "  <-- unexpected"
        print(f"{name:36} {scenario.expected.value:34} {result.state:34} {result.trace.jwks_fetch_count}{mark}")
        last = result

    trace = load_trace(f"{runs}/{last.run_id}.json")
    print(f"\nreplaying {last.scenario.name} offline from {runs}:")
    print("  live  ", trace.verdict)
    print("  replay", replay_trace(trace).to_json())
