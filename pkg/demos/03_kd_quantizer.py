"""Median-tree quantizer: updates that exactly match a fresh rebuild.

Inserts and deletes reassign at most one boundary point per tree node, so
an update touches a handful of disk-resident queues instead of re-reading
the dataset, yet the encodings and codebook afterwards are the ones a
from-scratch build on the surviving points would produce.
"""

import numpy as np

from streamquant import DiskStore, KdQuantizer

rng = np.random.default_rng(7)
d, L = 8, 3
vectors = {i: rng.standard_normal(d) for i in range(256)}

store = DiskStore()
kq = KdQuantizer.build(
    np.array([vectors[i] for i in sorted(vectors)]), L=L, seed=42, store=store
)
print(f"built: {len(kq)} points, {2**L} leaves, leaf counts {kq.leaf_sums()[1]}")

print("\n== stream 200 random updates ==")
for step in range(200):
    live = sorted(vectors)
    if rng.random() < 0.5 or len(live) <= 2**L:
        x = rng.standard_normal(d)
        pid = kq.insert(x)
        vectors[pid] = x
    else:
        victim = live[int(rng.integers(0, len(live)))]
        kq.delete(victim)
        del vectors[victim]
rep = kq.last_update_report
print(f"last update: kind={rep.kind} queues touched={rep.heaps_changed} "
      f"vectors fetched={rep.full_vector_reads} io=({rep.io.read_rounds} reads, {rep.io.write_rounds} write)")

print("\n== compare against a fresh build on the surviving set ==")
ids = np.asarray(sorted(vectors))
fresh = KdQuantizer.build(np.array([vectors[i] for i in ids]), L=L, seed=42,
                          store=DiskStore(), ids=ids)
same = all(kq.encoding_of(int(i)) == fresh.encoding_of(int(i)) for i in ids)
s1, _ = kq.leaf_sums()
s2, _ = fresh.leaf_sums()
print(f"encodings identical: {same}")
print(f"codebook sums relative gap: {np.abs(s1 - s2).max() / max(np.abs(s2).max(), 1e-12):.2e}")

print("\n== encode / proxy ==")
pid = int(ids[0])
print(f"encode(stored point {pid}) = {kq.encode(vectors[pid], point_id=pid)} "
      f"(stored code {kq.encoding_of(pid)})")
print(f"proxy({pid}) ~ leaf mean, first coords: {kq.proxy(pid)[:3].round(3)}")

print("\n== serialization for reproducible restarts ==")
import tempfile, os

with tempfile.TemporaryDirectory() as td:
    path = os.path.join(td, "kq.npz")
    kq.save(path)
    loaded = KdQuantizer.load(path)
    x = rng.standard_normal(d)
    print("loaded encode matches:", loaded.encode(x) == kq.encode(x))
