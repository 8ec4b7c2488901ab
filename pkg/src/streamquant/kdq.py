"""Median-split kd-tree quantizer with dynamically consistent updates.

A shallow tree of depth ``L + 1`` is built over rotated points: level ``l``
splits each node's members at the median of one sampled coordinate, lower
half left, upper half right, ordered by (coordinate value, point id) so
every split is unique. The ``2**L`` leaves act as clusters; each leaf's
mean of the *unrotated* member vectors is its codebook entry, and a point's
code is its leaf index.

Median partitions are stable: one insert or delete shifts each node's
boundary by at most one position, so at most one point per node crosses to
the sibling subtree, and the crossing point is always the left child's
maximum or the right child's minimum along the split coordinate. Each
non-root node therefore keeps a disk-resident priority queue (max for left
children, min for right children, keyed by the parent's split coordinate)
whose in-memory extremum, together with its rotated vector carried as the
queue payload, lets an update decide every reassignment without touching
disk. A full update window then costs at most three batched read rounds
(reassigned vectors + all queue fetches) and one write round.

Updates keep the structure exactly equal to a fresh build on the surviving
point set: identical encodings, and codebook sums equal up to accumulated
float error (sums use compensated accumulation).

Disk layout per point: one cell holding the full vector and its rotated
blocks, plus one pointer cell per (block, level) that the queues maintain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .heap import HeapPq, run_plans_window
from .store import DiskStore, RecordTable

SAVE_FORMAT_VERSION = 1


def sample_rotation(seed, d: int) -> np.ndarray:
    """Deterministic uniform-ish random rotation via QR with sign fixing."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def sample_split_sequence(seed, d: int, length: int) -> np.ndarray:
    """Distinct coordinate indices, sampled without replacement."""
    if length > d:
        raise ValueError(f"cannot sample {length} distinct coordinates from {d}")
    rng = np.random.default_rng(seed)
    return rng.choice(d, size=length, replace=False).astype(np.int64)


def median_split(values):
    """Split (value, id) pairs at the median: smallest floor(n/2) go left.

    Ordering is by (value, id), so equal values are split by id and the
    result is unique. Returns (left, right) in sorted order.
    """
    items = sorted((float(v), int(i)) for v, i in values)
    half = len(items) // 2
    return items[:half], items[half:]


def _seed_key(seed, *key):
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


def rotate_rows(rotation: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Apply a rotation to row vectors with a fixed summation order.

    One code path for bulk and single-vector rotation, so the same input
    always yields bitwise-identical output regardless of batch shape.
    """
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    out = np.einsum("ij,nj->ni", rotation, rows[None] if single else rows, optimize=False)
    return out[0] if single else out


@dataclass
class MovedPoint:
    pid: int
    node: int
    from_child: int
    was_extremum: bool = True
    block: int = -1


@dataclass
class CascadeResult:
    """Memory-only plan of one update against one block's tree."""

    ops: list = field(default_factory=list)  # (node, ins_entry|None, del_pid|None)
    moved: list = field(default_factory=list)  # MovedPoint
    count_deltas: dict = field(default_factory=dict)
    leaf_ins: dict = field(default_factory=dict)  # pid -> leaf
    leaf_del: dict = field(default_factory=dict)  # pid -> leaf


@dataclass
class UpdateReport:
    """Instrumentation for one insert/delete: who changed where."""

    kind: str
    point_id: int
    heaps_changed: int
    moved: list
    node_changes: dict  # (block, node) -> (added_pid|None, removed_pid|None)
    full_vector_reads: int
    io: object = None


class _BlockQuantizer:
    """Tree + queues + codebook for one contiguous coordinate block."""

    def __init__(self, block_index, dims_slice, rotation, coords, L, store, ptr_cell):
        self.block_index = block_index
        self.dims = dims_slice
        self.rotation = rotation
        self.coords = np.asarray(coords, dtype=np.int64)
        self.L = L
        self.store = store
        self.ptr_cell = ptr_cell  # (pid, level) -> pointer-cell address
        n_nodes = 1 << (L + 1)
        self.counts = np.zeros(n_nodes, dtype=np.int64)
        self.encodings: dict[int, int] = {}
        d_b = rotation.shape[0]
        self.d_b = d_b
        self.sums = np.zeros((1 << L, d_b))
        self.comp = np.zeros((1 << L, d_b))
        self.leaf_counts = np.zeros(1 << L, dtype=np.int64)
        self.heaps: dict[int, HeapPq] = {}
        self.lite_extrema: dict[int, tuple] = {}

    # -- basics -------------------------------------------------------------

    def rotate(self, sub: np.ndarray) -> np.ndarray:
        return rotate_rows(self.rotation, sub)

    def _extremum_of(self, node):
        """(value, pid, rotated vector) of the node's boundary element."""
        if self.store is not None:
            ext = self.heaps[node].peek_full()
            if ext is None:
                return None
            return (ext[0], ext[1], np.frombuffer(ext[2], dtype="<f8"))
        return self.lite_extrema.get(node)

    def _kahan_add(self, leaf, vec):
        y = vec - self.comp[leaf]
        t = self.sums[leaf] + y
        self.comp[leaf] = (t - self.sums[leaf]) - y
        self.sums[leaf] = t

    def leaf_mean(self, leaf: int) -> np.ndarray:
        if self.leaf_counts[leaf] == 0:
            raise ValueError(f"leaf {leaf} is empty")
        return self.sums[leaf] / self.leaf_counts[leaf]

    def means(self) -> np.ndarray:
        """(2**L, d_b) leaf means; empty leaves get +inf sentinels."""
        out = np.full_like(self.sums, np.inf)
        occ = self.leaf_counts > 0
        out[occ] = self.sums[occ] / self.leaf_counts[occ, None]
        return out

    # -- build ----------------------------------------------------------------

    def build_partition(self, X_sub, ids, payload_writer=None):
        """Median-partition rotated members level by level; fills all state.

        ``X_sub`` is the unrotated block slice, one row per id.
        """
        Xr = rotate_rows(self.rotation, X_sub)
        L = self.L
        members = {1: np.arange(len(ids))}
        for level in range(L):
            c = self.coords[level]
            for node in range(1 << level, 1 << (level + 1)):
                m = members[node]
                order = np.lexsort((ids[m], Xr[m, c]))
                m_sorted = m[order]
                half = len(m) // 2
                members[2 * node] = m_sorted[:half]
                members[2 * node + 1] = m_sorted[half:]
        for node, m in members.items():
            self.counts[node] = len(m)
        for leaf in range(1 << L):
            m = members[(1 << L) + leaf]
            self.leaf_counts[leaf] = len(m)
            if len(m):
                self.sums[leaf] = X_sub[m].sum(axis=0)
            for pos in m:
                self.encodings[int(ids[pos])] = leaf
        if self.store is not None:
            for node in range(2, 1 << (L + 1)):
                level = node.bit_length() - 1
                key_coord = int(self.coords[level - 1])
                m = members[node]
                polarity = "max" if node % 2 == 0 else "min"
                items = []
                payloads = []
                for pos in m:
                    pid = int(ids[pos])
                    items.append((pid, float(Xr[pos, key_coord]), self.ptr_cell(pid, level)))
                    payloads.append(Xr[pos].astype("<f8").tobytes())
                self.heaps[node] = HeapPq.build(self.store, items, polarity, payloads=payloads)
        else:
            for node in range(2, 1 << (L + 1)):
                level = node.bit_length() - 1
                key_coord = int(self.coords[level - 1])
                m = members[node]
                if not len(m):
                    continue
                keys = [(float(Xr[pos, key_coord]), int(ids[pos])) for pos in m]
                best = max(keys) if node % 2 == 0 else min(keys)
                pos = m[keys.index(best)]
                self.lite_extrema[node] = (best[0], best[1], Xr[pos].copy())
        return Xr

    # -- update planning ---------------------------------------------------------

    def cascade(self, ins=None, dele=None) -> CascadeResult:
        """Compute every node change an update causes, without touching disk.

        ``ins`` is (pid, rotated vector); ``dele`` a present pid. Decisions
        use only per-node counts, cached boundary extrema, and encodings.
        """
        res = CascadeResult()
        L = self.L
        pend = {1: [ins, dele]}

        def put(child, slot, value):
            entry = pend.setdefault(child, [None, None])
            if entry[slot] is not None:
                raise AssertionError(f"node {child} received two {'inserts' if slot == 0 else 'deletes'}")
            entry[slot] = value

        for level in range(L + 1):
            lo, hi = 1 << level, 1 << (level + 1)
            for nid in sorted(n for n in pend if lo <= n < hi):
                e_ins, e_del = pend.pop(nid)
                if e_ins is None and e_del is None:
                    continue
                if nid != 1:
                    res.ops.append((nid, e_ins, e_del))
                res.count_deltas[nid] = res.count_deltas.get(nid, 0) + (e_ins is not None) - (e_del is not None)
                if level == L:
                    leaf = nid - (1 << L)
                    if e_del is not None:
                        res.leaf_del[e_del] = leaf
                    if e_ins is not None:
                        res.leaf_ins[e_ins[0]] = leaf
                    continue
                c = int(self.coords[level])
                n_v = int(self.counts[nid])
                left, right = 2 * nid, 2 * nid + 1

                def move(src):
                    ext = self._extremum_of(src)
                    if ext is None:
                        raise AssertionError(f"boundary move from empty node {src}")
                    res.moved.append(MovedPoint(ext[1], nid, src))
                    dst = right if src == left else left
                    put(src, 1, ext[1])
                    put(dst, 0, (ext[1], ext[2]))

                if e_del is not None:
                    bit = (self.encodings[e_del] >> (L - 1 - level)) & 1
                    del_child = left if bit == 0 else right
                    put(del_child, 1, e_del)
                if e_ins is not None:
                    x_key = (float(e_ins[1][c]), e_ins[0])

                if e_ins is not None and e_del is None:
                    if n_v == 0:
                        put(right, 0, e_ins)
                    elif n_v % 2 == 0:
                        lam = self._extremum_of(left)
                        if x_key < (lam[0], lam[1]):
                            put(left, 0, e_ins)
                            move(left)
                        else:
                            put(right, 0, e_ins)
                    else:
                        rho = self._extremum_of(right)
                        if x_key < (rho[0], rho[1]):
                            put(left, 0, e_ins)
                        else:
                            put(right, 0, e_ins)
                            move(right)
                elif e_del is not None and e_ins is None:
                    if n_v % 2 == 0:
                        if del_child == right:
                            move(left)
                    else:
                        if del_child == left:
                            move(right)
                elif e_ins is not None and e_del is not None:
                    if del_child == left:
                        rho = self._extremum_of(right)
                        if x_key < (rho[0], rho[1]):
                            put(left, 0, e_ins)
                        else:
                            put(right, 0, e_ins)
                            move(right)
                    else:
                        lam = self._extremum_of(left)
                        if x_key < (lam[0], lam[1]):
                            put(left, 0, e_ins)
                            move(left)
                        else:
                            put(right, 0, e_ins)
        return res

    def heap_plans(self, res: CascadeResult):
        plans = []
        for nid, e_ins, e_del in res.ops:
            level = nid.bit_length() - 1
            heap = self.heaps[nid]
            if e_ins is not None:
                pid, rot = e_ins
                val = float(rot[int(self.coords[level - 1])])
                cell = self.ptr_cell(pid, level)
                payload = rot.astype("<f8").tobytes()
                if e_del is not None:
                    plans.append(heap.plan_replace(e_del, (pid, val, cell), ins_payload=payload, release_owner_cell=False))
                else:
                    plans.append(heap.plan_insert(pid, val, owner_cell=cell, payload=payload))
            else:
                plans.append(heap.plan_delete(e_del, release_owner_cell=False))
        return plans

    def apply(self, res: CascadeResult, subvec_of):
        """Commit a cascade to the in-memory state. ``subvec_of(pid)`` returns
        the unrotated block slice for every touched pid."""
        for nid, delta in res.count_deltas.items():
            self.counts[nid] += delta
        touched = set(res.leaf_ins) | set(res.leaf_del)
        for pid in sorted(touched):
            old = res.leaf_del.get(pid)
            new = res.leaf_ins.get(pid)
            vec = subvec_of(pid)
            if old is not None:
                self._kahan_add(old, -vec)
                self.leaf_counts[old] -= 1
            if new is not None:
                self._kahan_add(new, vec)
                self.leaf_counts[new] += 1
                self.encodings[pid] = new
            else:
                del self.encodings[pid]

    # -- query-side helpers -----------------------------------------------------

    def encode_vector(self, sub: np.ndarray, tie_id=None) -> int:
        """Leaf reached by descending with the rotated subvector.

        For stored points pass their id so boundary ties resolve exactly;
        otherwise ties route right.
        """
        rot = self.rotate(np.asarray(sub, dtype=float))
        tid = math.inf if tie_id is None else tie_id
        nid = 1
        for level in range(self.L):
            left, right = 2 * nid, 2 * nid + 1
            if self.counts[right] == 0:
                nid = left
                continue
            if self.counts[left] == 0:
                nid = right
                continue
            rho = self._extremum_of(right)
            key = (float(rot[int(self.coords[level])]), tid)
            nid = left if key < (rho[0], rho[1]) else right
        return nid - (1 << self.L)


def _pack_vector_cell(x: np.ndarray, rotated: np.ndarray) -> bytes:
    return x.astype("<f8").tobytes() + rotated.astype("<f8").tobytes()


def _unpack_full(blob: bytes, d: int) -> np.ndarray:
    return np.frombuffer(blob, dtype="<f8", count=d)


class _QuantizerBase:
    """Shared build/update machinery for block quantizers over one store."""

    def __init__(self):
        self.d = 0
        self.M = 0
        self.L = 0
        self.seed = None
        self.store: DiskStore | None = None
        self.records: RecordTable | None = None
        self.blocks: list[_BlockQuantizer] = []
        self._next_id = 0
        self._row_of: dict[int, int] = {}
        self._ids = np.zeros(0, dtype=np.int64)
        self._codes = np.zeros((0, 0), dtype=np.uint32)
        self.last_update_report: UpdateReport | None = None

    # -- shared construction -----------------------------------------------------

    def _init_build(self, X, M, L, d, seed, store, ids, rotations, persist):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != d:
            raise ValueError(f"expected (n, {d}) data, got {X.shape}")
        n = X.shape[0]
        if d % M != 0:
            raise ValueError(f"block count {M} does not divide dimension {d}")
        d_b = d // M
        if L > d_b:
            raise ValueError(f"need L <= d/M distinct split coordinates ({L} > {d_b})")
        if n < (1 << L):
            raise ValueError(f"need at least {1 << L} points to fill every leaf, got {n}")
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if len(set(ids.tolist())) != n:
                raise ValueError("point ids must be distinct")
        self.d, self.M, self.L, self.seed = d, M, L, seed
        self.store = store if persist else None
        if persist and store is None:
            raise ValueError("a DiskStore is required unless persist=False")
        self._next_id = int(ids.max()) + 1 if n else 0
        slots = 1 + M * L
        if self.store is not None:
            self.records = RecordTable(self.store, slots)
        self.blocks = []
        for j in range(M):
            sl = slice(j * d_b, (j + 1) * d_b)
            if rotations is not None:
                rot = np.asarray(rotations[j], dtype=float)
            else:
                rot = sample_rotation(_seed_key(seed, 0, j), d_b)
            coords = sample_split_sequence(_seed_key(seed, 1, j), d_b, L)
            block = _BlockQuantizer(
                j, sl, rot, coords, L, self.store, self._make_ptr_cell(j)
            )
            self.blocks.append(block)
        # persist: records first so queue builds can write pointer cells
        rotated_parts = []
        if self.store is not None:
            for pid in ids:
                self.records.add(int(pid))
        for j, block in enumerate(self.blocks):
            Xr = block.build_partition(X[:, block.dims], ids)
            rotated_parts.append(Xr)
        if self.store is not None:
            writes = []
            rot_all = np.concatenate(rotated_parts, axis=1)
            for pos, pid in enumerate(ids):
                writes.append(
                    (self.records.slot(int(pid), 0), _pack_vector_cell(X[pos], rot_all[pos]))
                )
            self.store.write_batch(writes)
        self._ids = ids.copy()
        self._codes = np.zeros((n, self.M), dtype=np.uint32)
        for row, pid in enumerate(ids):
            self._row_of[int(pid)] = row
            for j, block in enumerate(self.blocks):
                self._codes[row, j] = block.encodings[int(pid)]

    def _make_ptr_cell(self, block_index):
        def ptr_cell(pid, level):
            return self.records.slot(pid, 1 + block_index * self.L + (level - 1))

        return ptr_cell

    # -- code bookkeeping -------------------------------------------------------

    def __len__(self):
        return len(self._row_of)

    def __contains__(self, pid):
        return pid in self._row_of

    @property
    def point_ids(self):
        return self._ids[: len(self._row_of)]

    def _append_row(self, pid, codes):
        n = len(self._row_of)
        if n >= len(self._ids):
            grow = max(64, len(self._ids))
            self._ids = np.concatenate([self._ids, np.zeros(grow, dtype=np.int64)])
            self._codes = np.concatenate(
                [self._codes, np.zeros((grow, self.M), dtype=np.uint32)]
            )
        self._ids[n] = pid
        self._codes[n] = codes
        self._row_of[pid] = n

    def _drop_row(self, pid):
        row = self._row_of.pop(pid)
        last = len(self._row_of)
        if row != last:
            self._ids[row] = self._ids[last]
            self._codes[row] = self._codes[last]
            self._row_of[int(self._ids[row])] = row

    def _set_codes(self, pid, per_block_changes):
        row = self._row_of[pid]
        for j, leaf in per_block_changes:
            self._codes[row, j] = leaf

    # -- updates ------------------------------------------------------------------

    def _require_store(self):
        if self.store is None:
            raise RuntimeError("updates need a persistent store; built with persist=False")

    def insert(self, x, point_id=None) -> int:
        """Add one vector; one update window of <=3 reads and 1 write."""
        self._require_store()
        x = np.asarray(x, dtype=float).reshape(self.d)
        pid = self._next_id if point_id is None else int(point_id)
        if pid in self._row_of:
            raise ValueError(f"point id {pid} already present")
        self._next_id = max(self._next_id, pid + 1)
        rots = [b.rotate(x[b.dims]) for b in self.blocks]
        results = [b.cascade(ins=(pid, rots[j])) for j, b in enumerate(self.blocks)]
        self._run_update("insert", pid, results, new_x=x, new_rots=rots)
        return pid

    def delete(self, point_id: int):
        """Remove one point; symmetric to insert."""
        self._require_store()
        pid = int(point_id)
        if pid not in self._row_of:
            raise KeyError(f"point id {pid} not present")
        results = [b.cascade(dele=pid) for b in self.blocks]
        self._run_update("delete", pid, results)

    def _run_update(self, kind, pid, results, new_x=None, new_rots=None):
        moved_ids = sorted({m.pid for res in results for m in res.moved})
        read_ids = list(moved_ids)
        extra_writes = []
        extra_frees = []
        if kind == "insert":
            self.records.add(pid)
            rot_all = np.concatenate(new_rots)
            extra_writes.append((self.records.slot(pid, 0), _pack_vector_cell(new_x, rot_all)))
            addr_of = {p: self.records.slot(p, 0) for p in read_ids}
        else:
            read_ids = sorted(set(read_ids) | {pid})
            addr_of = {p: self.records.slot(p, 0) for p in read_ids}
            extra_frees = self.records.remove(pid)
        plans = []
        for j, block in enumerate(self.blocks):
            plans.extend(block.heap_plans(results[j]))
        report, m1 = run_plans_window(
            self.store, plans, extra_round1=[addr_of[p] for p in read_ids],
            extra_writes=extra_writes, extra_frees=extra_frees,
        )
        vectors = {p: _unpack_full(m1[addr_of[p]], self.d) for p in read_ids}
        if kind == "insert":
            vectors[pid] = new_x
        changes_per_pid: dict[int, list] = {}
        node_changes = {}
        for j, block in enumerate(self.blocks):
            res = results[j]
            block.apply(res, lambda p, b=block: vectors[p][b.dims])
            for m in res.moved:
                m.block = j
            for touched_pid, leaf in res.leaf_ins.items():
                changes_per_pid.setdefault(touched_pid, []).append((j, leaf))
            for nid, e_ins, e_del in res.ops:
                node_changes[(j, nid)] = (
                    e_ins[0] if e_ins is not None else None,
                    e_del,
                )
        if kind == "insert":
            self._append_row(pid, [block.encodings[pid] for block in self.blocks])
            changes_per_pid.pop(pid, None)
        else:
            self._drop_row(pid)
            changes_per_pid.pop(pid, None)
        for touched_pid, ch in changes_per_pid.items():
            self._set_codes(touched_pid, ch)
        self.last_update_report = UpdateReport(
            kind=kind,
            point_id=pid,
            heaps_changed=sum(len(res.ops) for res in results),
            moved=[m for res in results for m in res.moved],
            node_changes=node_changes,
            full_vector_reads=len(read_ids),
            io=report,
        )

    def plan_insert_stats(self, x) -> dict:
        """Dry-run an insert: how many queues an update would touch.

        Counts one per node whose member set would change, summed over
        blocks; no state is modified and no disk is touched.
        """
        x = np.asarray(x, dtype=float).reshape(self.d)
        pid = self._next_id
        heaps = 0
        moved = []
        for block in self.blocks:
            res = block.cascade(ins=(pid, block.rotate(x[block.dims])))
            heaps += len(res.ops)
            moved.extend(res.moved)
        return {"heaps_changed": heaps, "reassigned": sorted({m.pid for m in moved})}

    # -- persistence ------------------------------------------------------------

    def save(self, path):
        """Serialize the in-memory state (not the disk blobs) to one file."""
        payload = {
            "format_version": np.int64(SAVE_FORMAT_VERSION),
            "d": np.int64(self.d),
            "M": np.int64(self.M),
            "L": np.int64(self.L),
            "seed": np.int64(-1 if self.seed is None else self.seed),
            "next_id": np.int64(self._next_id),
            "ids": self.point_ids.copy(),
            "codes": self._codes[: len(self._row_of)].copy(),
        }
        for j, b in enumerate(self.blocks):
            payload[f"b{j}_rotation"] = b.rotation
            payload[f"b{j}_coords"] = b.coords
            payload[f"b{j}_counts"] = b.counts
            payload[f"b{j}_sums"] = b.sums
            payload[f"b{j}_comp"] = b.comp
            payload[f"b{j}_leaf_counts"] = b.leaf_counts
            ext_nodes = []
            ext_vals = []
            ext_pids = []
            ext_rots = []
            for node in range(2, 1 << (self.L + 1)):
                ext = b._extremum_of(node) if b.counts[node] else None
                if ext is not None:
                    ext_nodes.append(node)
                    ext_vals.append(ext[0])
                    ext_pids.append(ext[1])
                    ext_rots.append(np.asarray(ext[2]))
            payload[f"b{j}_ext_nodes"] = np.asarray(ext_nodes, dtype=np.int64)
            payload[f"b{j}_ext_vals"] = np.asarray(ext_vals, dtype=float)
            payload[f"b{j}_ext_pids"] = np.asarray(ext_pids, dtype=np.int64)
            payload[f"b{j}_ext_rots"] = (
                np.vstack(ext_rots) if ext_rots else np.zeros((0, b.d_b))
            )
        np.savez(path, **payload)

    @classmethod
    def _load_into(cls, self, path):
        data = np.load(path)
        if int(data["format_version"]) != SAVE_FORMAT_VERSION:
            raise ValueError(f"unsupported save format {int(data['format_version'])}")
        d, M, L = int(data["d"]), int(data["M"]), int(data["L"])
        seed = int(data["seed"])
        self.d, self.M, self.L = d, M, L
        self.seed = None if seed == -1 else seed
        self.store = None
        self.records = None
        self._next_id = int(data["next_id"])
        d_b = d // M
        self.blocks = []
        for j in range(M):
            block = _BlockQuantizer(
                j,
                slice(j * d_b, (j + 1) * d_b),
                data[f"b{j}_rotation"],
                data[f"b{j}_coords"],
                L,
                None,
                lambda pid, level: None,
            )
            block.counts = data[f"b{j}_counts"].copy()
            block.sums = data[f"b{j}_sums"].copy()
            block.comp = data[f"b{j}_comp"].copy()
            block.leaf_counts = data[f"b{j}_leaf_counts"].copy()
            rots = data[f"b{j}_ext_rots"]
            for i, node in enumerate(data[f"b{j}_ext_nodes"]):
                block.lite_extrema[int(node)] = (
                    float(data[f"b{j}_ext_vals"][i]),
                    int(data[f"b{j}_ext_pids"][i]),
                    rots[i].copy(),
                )
            self.blocks.append(block)
        ids = data["ids"]
        codes = data["codes"]
        self._ids = ids.copy()
        self._codes = codes.copy()
        self._row_of = {int(pid): row for row, pid in enumerate(ids)}
        for row, pid in enumerate(ids):
            for j, block in enumerate(self.blocks):
                block.encodings[int(pid)] = int(codes[row, j])
        return self

    # -- validation ----------------------------------------------------------------

    def check_invariants(self, deep=False):
        """Full-scan structural validation against the in-memory state.

        Verifies counts, balance, boundary ordering, and leaf sums from the
        stored full-precision vectors; ``deep`` also validates every queue's
        disk layout.
        """
        self._require_store()
        pids = sorted(self._row_of)
        cells = self.store.read_map(self.records.slot(p, 0) for p in pids)
        fulls = {p: _unpack_full(cells[self.records.slot(p, 0)], self.d) for p in pids}
        for j, block in enumerate(self.blocks):
            Xr = {p: block.rotate(fulls[p][block.dims]) for p in pids}
            node_members = {nid: [] for nid in range(1, 1 << (self.L + 1))}
            for p in pids:
                leaf = block.encodings[p]
                nid = (1 << self.L) + leaf
                while nid >= 1:
                    node_members[nid].append(p)
                    nid //= 2
            for nid, mem in node_members.items():
                if block.counts[nid] != len(mem):
                    raise AssertionError(f"block {j} node {nid}: count mismatch")
            for nid in range(1, 1 << self.L):
                l, r = block.counts[2 * nid], block.counts[2 * nid + 1]
                if abs(int(l) - int(r)) > 1:
                    raise AssertionError(f"block {j} node {nid}: unbalanced ({l} vs {r})")
                c = int(block.coords[nid.bit_length() - 1])
                lkeys = [(float(Xr[p][c]), p) for p in node_members[2 * nid]]
                rkeys = [(float(Xr[p][c]), p) for p in node_members[2 * nid + 1]]
                if lkeys and rkeys and max(lkeys) >= min(rkeys):
                    raise AssertionError(f"block {j} node {nid}: boundary order broken")
                for child, keys, kind in ((2 * nid, lkeys, "max"), (2 * nid + 1, rkeys, "min")):
                    if not keys:
                        continue
                    ext = block._extremum_of(child)
                    best = max(keys) if kind == "max" else min(keys)
                    if (ext[0], ext[1]) != best:
                        raise AssertionError(f"block {j} node {child}: stale extremum")
            for leaf in range(1 << self.L):
                mem = node_members[(1 << self.L) + leaf]
                if block.leaf_counts[leaf] != len(mem):
                    raise AssertionError(f"block {j} leaf {leaf}: count mismatch")
                if mem:
                    exact = np.sum([fulls[p][block.dims] for p in mem], axis=0)
                    if not np.allclose(block.sums[leaf], exact, rtol=1e-6, atol=1e-9):
                        raise AssertionError(f"block {j} leaf {leaf}: sums drifted")
            if deep:
                for heap in block.heaps.values():
                    heap.check_invariants()


class KdQuantizer(_QuantizerBase):
    """Single-block tree quantizer over the full vector."""

    @classmethod
    def build(cls, X, L, seed, store=None, ids=None, rotation=None, persist=True):
        self = cls()
        X = np.asarray(X, dtype=float)
        rotations = None if rotation is None else [rotation]
        self._init_build(
            X, M=1, L=L, d=X.shape[1], seed=seed, store=store, ids=ids,
            rotations=rotations, persist=persist,
        )
        return self

    @classmethod
    def load(cls, path):
        return cls._load_into(cls(), path)

    @property
    def rotation(self):
        return self.blocks[0].rotation

    @property
    def split_sequence(self):
        return self.blocks[0].coords

    def encode(self, x, point_id=None) -> int:
        """Leaf index for a vector; pass the id of a stored point for exact ties."""
        return self.blocks[0].encode_vector(np.asarray(x, dtype=float), point_id)

    def encoding_of(self, point_id: int) -> int:
        return self.blocks[0].encodings[int(point_id)]

    def proxy(self, point_id: int) -> np.ndarray:
        """Current mean of the point's leaf."""
        return self.blocks[0].leaf_mean(self.encoding_of(point_id))

    def leaf_mean(self, leaf: int) -> np.ndarray:
        return self.blocks[0].leaf_mean(leaf)

    def codebook(self) -> np.ndarray:
        return self.blocks[0].means()

    def leaf_sums(self):
        return self.blocks[0].sums.copy(), self.blocks[0].leaf_counts.copy()
