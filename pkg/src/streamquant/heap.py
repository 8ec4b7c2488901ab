"""Disk-resident binary priority queue with a fixed per-update I/O budget.

The heap itself lives on disk, one cell per node in a reserved store region
addressed by complete-tree position, so parent/child/sibling addresses are
arithmetic. In memory the queue keeps only its extremum, the element count,
and the owner-id -> pointer-cell map. Each node's cell stores its key and
its *deletion path*: the addresses of the root-to-leaf path that passes
through the node and then descends through the larger child. The root cell
additionally stores the insertion path (root to the parent of the first
vacant leaf) and the address of the last occupied leaf.

Because every path that an update can disturb is either stored in the
touched node's cell or derivable from the heap size, an update needs at
most three dependent read rounds followed by one write round:

* insert: one round fetching the insertion path, the siblings of its
  nodes, and the last leaf; no dependent reads.
* delete/replace: round 1 reads the element's pointer cell, round 2 reads
  its node cell plus the root-to-last-leaf path and siblings (the nodes
  whose stored paths the removal of the last leaf can disturb), round 3
  reads the deletion-path nodes, their siblings, and the last leaf.

Updates restore every stored deletion path eagerly, by re-descending
inside the fetched zone and splicing a sibling's stored suffix at the
first step that leaves it.

Keys order by (value, owner id), so ties are broken by id and the
extremum is always unique. A node cell may carry an opaque payload that
travels with its key; the quantizer uses this for rotated subvectors so a
new extremum's vector is always in the fetched data.

Multiple queues sharing one store can batch their updates into a single
window via ``plan_*`` and ``run_plans_window``: round k of every plan is
merged into one read batch, and all writes land in one write batch.
"""

from __future__ import annotations

import math
import struct

from .store import DiskStore, StoreError

_HDR = struct.Struct("<dqqHH")  # value, owner_id, owner_cell, payload_len, path_len
_EXTRA_LEN = struct.Struct("<H")
_Q = struct.Struct("<q")
_QFMT: dict[int, struct.Struct] = {}


def _qfmt(n: int) -> struct.Struct:
    s = _QFMT.get(n)
    if s is None:
        s = struct.Struct(f"<{n}q")
        _QFMT[n] = s
    return s


def _parent(p: int) -> int:
    return (p - 1) >> 1


def _level(p: int) -> int:
    return (p + 1).bit_length() - 1


def _sibling(p: int) -> int:
    return p + 1 if (p & 1) else p - 1


_ROOT_PATHS: dict[int, tuple[int, ...]] = {0: (0,)}


def _root_path(p: int) -> tuple[int, ...]:
    """Positions on the path root..p, inclusive, top down."""
    cached = _ROOT_PATHS.get(p)
    if cached is None:
        cached = _root_path(_parent(p)) + (p,)
        _ROOT_PATHS[p] = cached
    return cached


def _off_by_one(path_positions, count: int) -> list[int]:
    """The path's positions plus every occupied sibling of a path node."""
    out = []
    for p in path_positions:
        out.append(p)
        if p > 0:
            s = _sibling(p)
            if s < count:
                out.append(s)
    return out


_REC_FMTS: dict[tuple, struct.Struct] = {}


def _rec_fmt(plen: int, pathlen: int, inslen) -> struct.Struct:
    k = (plen, pathlen, inslen)
    st = _REC_FMTS.get(k)
    if st is None:
        fmt = f"<dqqHH{plen}s{pathlen}q"
        if inslen is not None:
            fmt += f"H{inslen}qq"
        st = struct.Struct(fmt)
        _REC_FMTS[k] = st
    return st


def _pack_record(key, payload: bytes, path, extras=None) -> bytes:
    if extras is None:
        st = _rec_fmt(len(payload), len(path), None)
        return st.pack(key[0], key[1], key[2], len(payload), len(path), payload, *path)
    ins_path, last_leaf = extras
    st = _rec_fmt(len(payload), len(path), len(ins_path))
    return st.pack(
        key[0], key[1], key[2], len(payload), len(path), payload, *path,
        len(ins_path), *ins_path, last_leaf,
    )


def _parse_record(blob: bytes, is_root: bool):
    value, owner_id, owner_cell, plen, pathlen = _HDR.unpack_from(blob, 0)
    off = _HDR.size
    payload = blob[off : off + plen]
    off += plen
    path = _qfmt(pathlen).unpack_from(blob, off)
    off += 8 * pathlen
    extras = None
    if is_root:
        (ilen,) = _EXTRA_LEN.unpack_from(blob, off)
        off += _EXTRA_LEN.size
        ins = _qfmt(ilen).unpack_from(blob, off)
        off += 8 * ilen
        (last,) = _Q.unpack_from(blob, off)
        extras = (ins, last)
    return (value, owner_id, owner_cell), payload, path, extras


class HeapPq:
    """Max or min priority queue over (value, owner_id) keys, heap on disk."""

    def __init__(self, store: DiskStore, polarity: str = "max"):
        if polarity not in ("max", "min"):
            raise ValueError(f"polarity must be 'max' or 'min', got {polarity!r}")
        self.store = store
        self.polarity = polarity
        self._is_max = polarity == "max"
        self._base = store.alloc_region()
        self._count = 0
        self._extremum = None  # (value, owner_id, owner_cell)
        self._ext_payload = b""
        self._owner_cells: dict[int, int] = {}
        self._addr_paths: dict[int, tuple] = {}  # pos -> addresses of root..pos

    def _addr_path(self, pos: int) -> tuple:
        t = self._addr_paths.get(pos)
        if t is None:
            base = self._base
            t = tuple(base + p for p in _root_path(pos))
            self._addr_paths[pos] = t
        return t

    # ordering ---------------------------------------------------------

    def _better(self, a, b) -> bool:
        """True if key a should sit above key b."""
        ka, kb = (a[0], a[1]), (b[0], b[1])
        return ka > kb if self._is_max else ka < kb

    @staticmethod
    def _check_value(value: float) -> float:
        value = float(value)
        if math.isnan(value):
            raise ValueError("NaN values are not totally ordered")
        return value

    # construction -------------------------------------------------------

    @classmethod
    def build(cls, store, items, polarity="max", payloads=None) -> "HeapPq":
        """Lay a complete heap out on disk in one write batch.

        ``items`` are (owner_id, value) or (owner_id, value, owner_cell)
        tuples; pointer cells are allocated when not supplied. Every node's
        deletion path and the root bookkeeping are written; nothing but the
        extremum, the count, and the pointer-cell map stays in memory.
        """
        self = cls(store, polarity)
        items = list(items)
        if payloads is None:
            payloads = [b""] * len(items)
        keys = []
        for it in items:
            if len(it) == 2:
                owner_id, value = it
                cell = store.alloc()
            else:
                owner_id, value, cell = it
            value = cls._check_value(value)
            owner_id = int(owner_id)
            if owner_id in self._owner_cells:
                raise ValueError(f"duplicate owner id {owner_id}")
            self._owner_cells[owner_id] = cell
            keys.append((value, owner_id, cell))
        n = len(keys)
        self._count = n
        if n == 0:
            return self
        pays = [bytes(p) for p in payloads]
        # Floyd heapify, deterministic.
        better = self._better

        def sift_down(i):
            while True:
                l = 2 * i + 1
                if l >= n:
                    return
                c = l
                r = l + 1
                if r < n and better(keys[r], keys[l]):
                    c = r
                if better(keys[c], keys[i]):
                    keys[i], keys[c] = keys[c], keys[i]
                    pays[i], pays[c] = pays[c], pays[i]
                    i = c
                else:
                    return

        for i in range(n // 2 - 1, -1, -1):
            sift_down(i)

        base = self._base
        suffix: list[tuple[int, ...] | None] = [None] * n
        for p in range(n - 1, -1, -1):
            l = 2 * p + 1
            if l >= n:
                suffix[p] = (p,)
            else:
                c = l
                r = l + 1
                if r < n and better(keys[r], keys[l]):
                    c = r
                suffix[p] = (p,) + suffix[c]
        writes = []
        for p in range(n):
            path = tuple(base + a for a in _root_path(p)[:-1]) + tuple(base + a for a in suffix[p])
            extras = None
            if p == 0:
                ins_path = tuple(base + a for a in _root_path(_parent(n))) if n >= 1 else ()
                extras = (ins_path, base + n - 1)
            store.claim(base + p)
            writes.append((base + p, _pack_record(keys[p], pays[p], path, extras)))
        for p in range(n):
            writes.append((self._owner_cells[keys[p][1]], _Q.pack(base + p)))
        store.write_batch(writes)
        self._extremum = keys[0]
        self._ext_payload = pays[0]
        return self

    # queries -----------------------------------------------------------

    def __len__(self) -> int:
        return self._count

    def __contains__(self, owner_id) -> bool:
        return owner_id in self._owner_cells

    def peek(self):
        """(value, owner_id) of the extremum, or None. No disk access."""
        if self._extremum is None:
            return None
        return (self._extremum[0], self._extremum[1])

    def peek_full(self):
        """(value, owner_id, payload) of the extremum, or None."""
        if self._extremum is None:
            return None
        return (self._extremum[0], self._extremum[1], self._ext_payload)

    def owner_cell(self, owner_id: int) -> int:
        return self._owner_cells[owner_id]

    # planned updates ------------------------------------------------------

    def plan_insert(self, owner_id, value, owner_cell=None, payload=b""):
        value = self._check_value(value)
        owner_id = int(owner_id)
        if owner_id in self._owner_cells:
            raise ValueError(f"duplicate owner id {owner_id}")
        return _HeapPlan(self, "insert", ins=(value, owner_id, owner_cell), ins_payload=bytes(payload))

    def plan_delete(self, owner_id, release_owner_cell=True):
        owner_id = int(owner_id)
        if owner_id not in self._owner_cells:
            raise KeyError(f"owner id {owner_id} not present")
        return _HeapPlan(self, "delete", del_id=owner_id, release=release_owner_cell)

    def plan_replace(self, delete_id, insert_item, ins_payload=b"", release_owner_cell=True):
        delete_id = int(delete_id)
        if delete_id not in self._owner_cells:
            raise KeyError(f"owner id {delete_id} not present")
        if len(insert_item) == 2:
            ins_id, value = insert_item
            cell = None
        else:
            ins_id, value, cell = insert_item
        value = self._check_value(value)
        ins_id = int(ins_id)
        if ins_id in self._owner_cells:
            raise ValueError(f"duplicate owner id {ins_id}")
        return _HeapPlan(
            self,
            "replace",
            del_id=delete_id,
            ins=(value, ins_id, cell),
            ins_payload=bytes(ins_payload),
            release=release_owner_cell,
        )

    # single-queue convenience: one update window per call

    def insert(self, owner_id, value, owner_cell=None, payload=b""):
        plan = self.plan_insert(owner_id, value, owner_cell, payload)
        return run_plans_window(self.store, [plan])[0]

    def delete(self, owner_id, release_owner_cell=True):
        plan = self.plan_delete(owner_id, release_owner_cell)
        return run_plans_window(self.store, [plan])[0]

    def replace(self, delete_id, insert_item, ins_payload=b""):
        plan = self.plan_replace(delete_id, insert_item, ins_payload=ins_payload)
        return run_plans_window(self.store, [plan])[0]

    # debug / validation ---------------------------------------------------

    def _read_all(self):
        n = self._count
        if n == 0:
            return {}
        blobs = self.store.read_map(self._base + p for p in range(n))
        return {p: _parse_record(blobs[self._base + p], p == 0) for p in range(n)}

    def dump(self):
        """Level-order [(owner_id, value, node_addr)]; reads the whole heap."""
        recs = self._read_all()
        return [(recs[p][0][1], recs[p][0][0], self._base + p) for p in range(self._count)]

    def check_invariants(self):
        """Full-scan validation of the disk layout; raises on any violation."""
        n = self._count
        recs = self._read_all()
        base = self._base
        better = self._better
        keys = {p: recs[p][0] for p in recs}
        for p in range(1, n):
            if not better(keys[_parent(p)], keys[p]):
                raise AssertionError(f"heap property violated at {p}")
        for p in range(n):
            expect = [base + a for a in _root_path(p)[:-1]]
            w = p
            while True:
                expect.append(base + w)
                l = 2 * w + 1
                if l >= n:
                    break
                c = l
                r = l + 1
                if r < n and better(keys[r], keys[l]):
                    c = r
                w = c
            if list(recs[p][2]) != expect:
                raise AssertionError(f"stored deletion path stale at node {p}")
        if n:
            ins, last = recs[0][3]
            if list(ins) != [base + a for a in _root_path(_parent(n))]:
                raise AssertionError("stale insertion path in root record")
            if last != base + n - 1:
                raise AssertionError("stale last-leaf address in root record")
            if keys[0] != self._extremum:
                raise AssertionError("cached extremum does not match root")
            top = max(keys.values(), key=lambda k: (k[0], k[1]))
            if not self._is_max:
                top = min(keys.values(), key=lambda k: (k[0], k[1]))
            if (top[0], top[1]) != self.peek():
                raise AssertionError("extremum is not the multiset extremum")
        elif self._extremum is not None:
            raise AssertionError("extremum cached for empty queue")
        cells = self.store.read_map(self._owner_cells.values()) if self._owner_cells else {}
        pos_of = {keys[p][1]: p for p in range(n)}
        if len(pos_of) != n or set(pos_of) != set(self._owner_cells):
            raise AssertionError("owner ids on disk disagree with the pointer map")
        for oid, cell in self._owner_cells.items():
            (a_v,) = _Q.unpack(cells[cell])
            if a_v != base + pos_of[oid]:
                raise AssertionError(f"pointer cell of {oid} is stale")


class _HeapPlan:
    """One queued update against one HeapPq, split into batchable rounds.

    Fetched records are parsed lazily: keys eagerly (every comparison needs
    them), payloads and stored paths only on demand. All records inside the
    update's zone are rewritten unconditionally, so no change detection is
    needed.
    """

    __slots__ = (
        "heap",
        "kind",
        "del_id",
        "ins",
        "ins_payload",
        "release",
        "_want",
        "_scan",
        "_vals",
        "_pays",
        "_blobs",
        "_pos_v",
        "_done",
    )

    def __init__(self, heap, kind, del_id=None, ins=None, ins_payload=b"", release=True):
        self.heap = heap
        self.kind = kind
        self.del_id = del_id
        self.ins = ins  # (value, owner_id, owner_cell|None)
        self.ins_payload = ins_payload
        self.release = release
        self._want: list[tuple[int, int]] = []  # (pos, addr) parsed on feed
        self._scan = 0
        self._vals: dict[int, tuple] = {}
        self._pays: dict[int, bytes] = {}
        self._blobs: dict[int, bytes] = {}
        self._pos_v = None
        self._done = False

    # -- lazy record access -----------------------------------------------

    def _payload(self, pos):
        pay = self._pays.get(pos)
        if pay is None:
            blob = self._blobs[pos]
            plen = _HDR.unpack_from(blob, 0)[3]
            pay = blob[_HDR.size : _HDR.size + plen]
            self._pays[pos] = pay
        return pay

    def _stored_path(self, pos):
        blob = self._blobs[pos]
        _, _, _, plen, pathlen = _HDR.unpack_from(blob, 0)
        return _qfmt(pathlen).unpack_from(blob, _HDR.size + plen)

    # -- round address lists ------------------------------------------------

    def _want_positions(self, positions):
        base = self.heap._base
        out = []
        seen = set()
        for p in positions:
            if p not in seen:
                seen.add(p)
                self._want.append((p, base + p))
                out.append(base + p)
        return out

    def round_addrs(self, rnd: int) -> list[int]:
        h = self.heap
        n = h._count
        if self.kind == "insert":
            if rnd != 1 or n == 0:
                return []
            q = n
            want = _off_by_one(_root_path(_parent(q)), n)
            want.append(n - 1)  # last occupied leaf
            return self._want_positions(want)
        if rnd == 1:
            return [h._owner_cells[self.del_id]]
        if rnd == 2:
            chain = _off_by_one(_root_path(n - 1), n)
            a_list = self._want_positions(chain)
            a_v = int(self._pos_v) + h._base
            return list(dict.fromkeys([a_v] + a_list))
        if rnd == 3:
            base = h._base
            pv = [a - base for a in self._stored_path(self._pos_v)]
            fetched = self._blobs
            want = [p for p in _off_by_one(pv, n) if p not in fetched]
            want.append(n - 1)  # last leaf rides along; keeps the round non-empty
            return self._want_positions(want)
        return []

    def feed(self, rnd: int, blobmap: dict[int, bytes]):
        h = self.heap
        if self.kind != "insert" and rnd == 1:
            (a_v,) = _Q.unpack(blobmap[h._owner_cells[self.del_id]])
            self._pos_v = a_v - h._base
            if not 0 <= self._pos_v < h._count:
                raise StoreError(f"pointer cell of {self.del_id} is corrupt")
            return
        if self.kind != "insert" and rnd == 2:
            # the node cell of the deleted element rode along with the chain
            pos = self._pos_v
            if pos not in self._blobs:
                self._want.append((pos, h._base + pos))
        blobs = self._blobs
        vals = self._vals
        unpack = _HDR.unpack_from
        for pos, addr in self._want[self._scan :]:
            if pos in blobs:
                continue
            blob = blobmap.get(addr)
            if blob is None:
                continue
            blobs[pos] = blob
            hdr = unpack(blob, 0)
            vals[pos] = (hdr[0], hdr[1], hdr[2])
        self._scan = len(self._want)
        if self.kind != "insert" and rnd == 2:
            rec = vals.get(self._pos_v)
            if rec is None or rec[1] != self.del_id:
                raise StoreError(f"node cell does not hold owner {self.del_id}")

    # -- mutation -------------------------------------------------------------

    def _sift_in(self, z, zpay, pos, newcount):
        """Place key z at pos, restore heap order inside the fetched zone."""
        vals, pays = self._vals, self._pays
        better = self.heap._better
        moved_up = False
        while pos > 0:
            par = _parent(pos)
            if better(z, vals[par]):
                vals[pos], pays[pos] = vals[par], self._payload(par)
                pos = par
                moved_up = True
            else:
                break
        if not moved_up:
            while True:
                l = 2 * pos + 1
                if l >= newcount:
                    break
                c = l
                r = l + 1
                if r < newcount:
                    if l not in vals or r not in vals:
                        raise StoreError("heap fetch invariant violated (sift)")
                    if better(vals[r], vals[l]):
                        c = r
                elif l not in vals:
                    raise StoreError("heap fetch invariant violated (sift)")
                if better(vals[c], z):
                    vals[pos], pays[pos] = vals[c], self._payload(c)
                    pos = c
                else:
                    break
        vals[pos] = z
        pays[pos] = zpay

    def finalize(self):
        """Apply the update in memory; returns (writes, frees) for the batch."""
        if self._done:
            raise StoreError("plan already finalized")
        self._done = True
        h = self.heap
        base = h._base
        store = h.store
        n = h._count
        vals = self._vals
        better = h._better
        writes: dict[int, bytes] = {}
        frees: list[int] = []
        old_owner_at = {p: k[1] for p, k in vals.items()}

        if self.kind == "insert":
            newcount = n + 1
            q = n
            value, owner_id, cell = self.ins
            if cell is None:
                cell = store.alloc()
            z = (value, owner_id, cell)
            store.claim(base + q)
            vals[q] = z
            self._pays[q] = self.ins_payload
            zone = set(_root_path(_parent(q))) | {q} if q else {q}
            self._sift_in(z, self.ins_payload, q, newcount)
            h._owner_cells[owner_id] = cell
        else:
            t = n - 1
            v = self._pos_v
            y, ypay = vals[t], self._payload(t)
            pv = [a - base for a in self._stored_path(v)]
            zone = set(pv) | set(_root_path(t)) | {t}
            del vals[t], self._pays[t]
            if self.kind == "delete":
                newcount = n - 1
                if v != t:
                    self._sift_in(y, ypay, v, newcount)
                frees.append(base + t)
                cell = h._owner_cells.pop(self.del_id)
                if self.release:
                    frees.append(cell)
            else:
                newcount = n
                if v != t:
                    self._sift_in(y, ypay, v, n - 1)
                value, owner_id, cell = self.ins
                if cell is None:
                    cell = store.alloc()
                z = (value, owner_id, cell)
                vals[t] = z
                self._pays[t] = self.ins_payload
                self._sift_in(z, self.ins_payload, t, newcount)
                h._owner_cells[owner_id] = cell
                old_cell = h._owner_cells.pop(self.del_id)
                if self.release:
                    frees.append(old_cell)

        # recompute stored deletion paths for the whole zone; descents are
        # shared, so memoize them bottom-up
        occupied = sorted(u for u in zone if u < newcount)
        descents: dict[int, tuple] = {}

        def descent_of(w):
            out = descents.get(w)
            if out is not None:
                return out
            stack = []
            node = w
            while True:
                memo = descents.get(node)
                if memo is not None:
                    out = memo
                    break
                l = 2 * node + 1
                if l >= newcount:
                    out = (base + node,)
                    descents[node] = out
                    break
                c = l
                r = l + 1
                if r < newcount:
                    kl, kr = vals.get(l), vals.get(r)
                    if kl is None or kr is None:
                        raise StoreError("heap fetch invariant violated (path)")
                    if better(kr, kl):
                        c = r
                if c not in zone:
                    sp = self._stored_path(c)
                    out = (base + node,) + sp[_level(c) :]
                    descents[node] = out
                    break
                stack.append(node)
                node = c
            for nd in reversed(stack):
                out = (base + nd,) + out
                descents[nd] = out
            return out

        ins_path = h._addr_path(_parent(newcount)) if newcount else ()
        extras_new = (ins_path, base + newcount - 1) if newcount else None
        for u in occupied:
            key = vals[u]
            key_moved = old_owner_at.get(u) != key[1]
            prefix = h._addr_path(_parent(u)) if u else ()
            rec_path = prefix + descent_of(u)
            changed = key_moved or u not in self._blobs or rec_path != self._stored_path(u)
            if u == 0 and not changed:
                blob = self._blobs[0]
                plen, pathlen = _HDR.unpack_from(blob, 0)[3:5]
                off = _HDR.size + plen + 8 * pathlen
                (ilen,) = _EXTRA_LEN.unpack_from(blob, off)
                old_ins = _qfmt(ilen).unpack_from(blob, off + _EXTRA_LEN.size)
                (old_last,) = _Q.unpack_from(blob, off + _EXTRA_LEN.size + 8 * ilen)
                changed = (old_ins, old_last) != extras_new
            if changed:
                extras = extras_new if u == 0 else None
                writes[base + u] = _pack_record(key, self._payload(u), rec_path, extras)
            if key_moved:
                writes[key[2]] = _Q.pack(base + u)

        h._count = newcount
        h._extremum = vals.get(0)
        h._ext_payload = self._payload(0) if newcount else b""
        return writes, frees


def run_plans_window(store: DiskStore, plans, extra_round1=(), extra_writes=(), extra_frees=()):
    """Run a batch of heap plans as one update window.

    Round k of every plan is merged into a single read batch, so the window
    costs at most three dependent read rounds and one write round no matter
    how many queues take part. ``extra_round1`` addresses are fetched with
    round 1 and returned to the caller; extra writes and frees join the
    final batch.

    Returns (IoReport, round-1 blob map).
    """
    plans = list(plans)
    if len({id(p.heap) for p in plans}) != len(plans):
        raise StoreError("at most one update per queue per window")
    store.begin_update()
    m1 = {}
    for rnd in (1, 2, 3):
        addrs = []
        for p in plans:
            addrs.extend(p.round_addrs(rnd))
        if rnd == 1:
            addrs.extend(extra_round1)
        addrs = list(dict.fromkeys(addrs))
        blobmap = store.read_map(addrs) if addrs else {}
        for p in plans:
            p.feed(rnd, blobmap)
        if rnd == 1:
            m1 = blobmap
    writes: dict[int, bytes] = {}
    frees: list[int] = []
    for p in plans:
        w, f = p.finalize()
        for a, b in w.items():
            if a in writes:
                raise StoreError(f"two plans wrote address {a}")
            writes[a] = b
        frees.extend(f)
    for a, b in extra_writes:
        if a in writes:
            raise StoreError(f"plan and caller both wrote address {a}")
        writes[a] = b
    frees.extend(extra_frees)
    if writes or frees:
        store.write_batch(sorted(writes.items()), frees)
    return store.end_update(), m1
