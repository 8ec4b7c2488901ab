"""How single-insert disk cost scales with dataset size, per method.

The tree quantizer's cost is the number of disk-resident queues an insert
touches; it stays flat as the dataset grows. The re-clustering baseline
flags whole clusters for re-reading, so its cost tracks the dataset size.
"""

from streamquant.stream import io_cost_experiment

rows = io_cost_experiment(sizes=[1_000, 4_000, 16_000], L_values=[4], M=4, d=32,
                          trials=5, seed=0)
print(f"{'method':>10} {'n':>7} {'L':>2} {'mean cost':>10} {'stderr':>8}")
for r in rows:
    print(f"{r['method']:>10} {r['n']:>7} {r['L']:>2} {r['mean_cost']:>10.1f} {r['stderr']:>8.2f}")

codeq = {r["n"]: r["mean_cost"] for r in rows if r["method"] == "codeq"}
dd = {r["n"]: r["mean_cost"] for r in rows if r["method"] == "dedriftpq"}
print(f"\ncost ratio (dedrift / codeq) at n=16k: {dd[16_000] / codeq[16_000]:.1f}x")
print(f"codeq growth from 1k to 16k: {codeq[16_000] / codeq[1_000]:.2f}x")
