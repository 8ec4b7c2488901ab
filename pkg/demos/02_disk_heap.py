"""The disk-resident priority queue and its fixed update I/O budget.

Everything but the extremum lives on disk. Watch the ledger: no update
ever needs more than three read rounds and one write round, because each
node's cell stores the whole root-to-leaf path its removal would disturb.
"""

import numpy as np

from streamquant import DiskStore, HeapPq

rng = np.random.default_rng(0)
store = DiskStore()

values = rng.standard_normal(500)
pq = HeapPq.build(store, [(i, float(v)) for i, v in enumerate(values)])
print(f"built a max queue of {len(pq)} elements; peek = {pq.peek()}")
print(f"(sorted oracle says {max((v, i) for i, v in enumerate(values))})")

print("\n== peek costs nothing ==")
before = store.ledger.totals()
for _ in range(1000):
    pq.peek()
print("ledger unchanged:", store.ledger.totals() == before)

print("\n== every update fits in <=3 reads + 1 write ==")
for step in range(6):
    if step % 2 == 0:
        report = pq.insert(1000 + step, float(rng.standard_normal()))
        op = "insert"
    else:
        victim = int(rng.integers(0, 500))
        while victim not in pq:
            victim = int(rng.integers(0, 500))
        report = pq.delete(victim)
        op = "delete"
    print(f"{op:>6}: reads={report.read_rounds} (addrs per round {report.read_addr_counts}) "
          f"writes={report.write_rounds}")

print("\n== replace = delete + insert in one window ==")
victim = next(i for i in range(500) if i in pq)
report = pq.replace(victim, (9999, 42.0))
print(f"replace: reads={report.read_rounds} writes={report.write_rounds} peek={pq.peek()}")

print("\n== ties break by owner id ==")
store2 = DiskStore()
tie = HeapPq.build(store2, [(2, 1.0), (3, 1.0)])
print("max of {(2, 1.0), (3, 1.0)} ->", tie.peek())

print("\n== full-scan validation of stored deletion paths ==")
pq.check_invariants()
print("disk layout consistent")
