"""Tour of the two-tier store: batched reads/writes and the I/O ledger.

The ledger counts dependent rounds, not addresses: a batch of fifty reads
is one round. Words measure transfer volume at 8 bytes per word.
"""

import numpy as np

from streamquant import DiskStore

store = DiskStore()

print("== allocation ==")
addrs = [store.alloc() for _ in range(5)]
print("five fresh addresses:", addrs)

print("\n== one write round for the whole batch ==")
store.write_batch([(a, bytes(24)) for a in addrs])  # 3 words each
print(f"write_rounds={store.ledger.write_rounds}  words_written={store.ledger.words_written}")

print("\n== one read round regardless of batch size ==")
blobs = store.read_batch(addrs)
print(f"read_rounds={store.ledger.read_rounds}  words_read={store.ledger.words_read}")

print("\n== update windows give per-update accounting ==")
store.begin_update()
store.read_batch(addrs[:2])
store.write_batch([(addrs[0], b"overwrite!")], frees=[addrs[4]])
report = store.end_update()
print("window report:", report)

print("\n== dangling access is an error ==")
try:
    store.read_batch([addrs[4]])
except Exception as e:
    print("as expected:", e)

print("\n== per-update history as CSV ==")
import io as _io

buf = _io.StringIO()
store.dump_ledger_csv(buf)
print(buf.getvalue())

print("== file-backed mode has identical ledger semantics ==")
import tempfile, os

with tempfile.TemporaryDirectory() as td:
    disk = DiskStore(path=os.path.join(td, "blobs.bin"))
    a = disk.alloc()
    disk.write_batch([(a, b"hello disk file")])
    print("file-backed roundtrip:", disk.read_batch([a])[0])
    print("totals:", disk.ledger.totals())
