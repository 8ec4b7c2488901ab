"""Product quantizer: in-memory ADC search plus one-round exact re-ranking."""

import numpy as np

from streamquant import DiskStore, ProductCodeq, ProductConfig
from streamquant.stream import ground_truth, recall_at

rng = np.random.default_rng(3)
n, d = 5000, 32
X = rng.standard_normal((n, d))

cfg = ProductConfig(M=4, L=6, d=d, seed=11)
print(f"config: M={cfg.M} blocks, L={cfg.L} bits/block -> {cfg.bits_per_dim} bits/dim")

store = DiskStore()
pq = ProductCodeq.build(X, cfg, store=store)

q = rng.standard_normal(d)
print("\n== ADC query (no disk access) ==")
before = store.ledger.read_rounds
top = pq.knn_query(q, 10)
print("top-3 by table distance:", [(pid, round(dist, 3)) for pid, dist in top[:3]])
print("read rounds consumed:", store.ledger.read_rounds - before)

print("\n== re-rank: one read round for the candidate batch ==")
before = store.ledger.read_rounds
rr = pq.knn_rerank(q, 10, 50)
print("top-3 after exact re-rank:", [(pid, round(dist, 3)) for pid, dist in rr[:3]])
print("read rounds consumed:", store.ledger.read_rounds - before)

truth = ground_truth(X, np.arange(n), q[None], 10)[0]
print("\nrecall-10@10 :", recall_at([p for p, _ in top], truth, 10))
print("recall-10@50 :", recall_at([p for p, _ in pq.knn_query(q, 50)], truth, 10, 50))

print("\n== updates keep the index fresh ==")
drift = rng.standard_normal(d) * 4
for _ in range(200):
    pq.insert(drift + rng.standard_normal(d))
print(f"after 200 drifted inserts: {len(pq)} points; "
      f"last window: {pq.last_update_report.io.read_rounds} reads / "
      f"{pq.last_update_report.io.write_rounds} write")
q2 = drift + rng.standard_normal(d)
print("query near the new mass:", pq.knn_query(q2, 3))
