"""End-to-end drift benchmark at demo scale: recall over a streaming scenario.

Builds a drifting scenario from a synthetic mixture, replays it against the
adaptive tree quantizer and a frozen-codebook baseline, and prints the
recall trajectories side by side. The same flow is scriptable through the
command line:

    streamquant gen-stream --synthetic-n 20000 --synthetic-dim 16 --out scen.jsonl
    streamquant bench-recall --scenario scen.jsonl --method codeq,frozenpq \
        --blocks 2 --bits 4 --k 10 --kprime 20 --out recall.csv
"""

import numpy as np

from streamquant.stream import (
    build_method,
    construct_stream,
    make_gaussian_mixture,
    run_scenario,
    scenario_ground_truth,
)

X, _ = make_gaussian_mixture(8000, 16, 10, seed=2)
scenario = construct_stream(X, c=10, n0=800, f_q=0.3, tau=3, alpha=1.0, f_d=1.0, seed=2)
print(f"scenario: {scenario.steps} steps, {len(X)} vectors, params {scenario.params}")

gt = scenario_ground_truth(scenario, 10)
reports = {}
for method in ("codeq", "frozenpq"):
    quant = build_method(method, scenario.X[scenario.initial_ids],
                         scenario.initial_ids, M=2, L=4, seed=3)
    reports[method] = run_scenario(quant, scenario, k=10, kprime=20, gt=gt)
    print(f"ran {method}")

print(f"\n{'t':>3} {'streamed':>9} {'codeq':>7} {'frozen':>7}")
for t in range(scenario.steps):
    c = reports["codeq"].recall_k[t]
    f = reports["frozenpq"].recall_k[t]
    print(f"{t:>3} {reports['codeq'].vectors_streamed[t]:>9} {c:>7.3f} {f:>7.3f}")

third = max(1, scenario.steps // 3)
for m, rep in reports.items():
    med = rep.rolling_median()
    print(f"{m}: first-third median {np.median(med[:third]):.3f} -> "
          f"final-third {np.median(med[-third:]):.3f}; "
          f"query read rounds total {rep.query_read_rounds.sum()}")
