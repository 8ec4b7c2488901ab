"""Compressed quadtree sketch with exact rebuild-equivalent updates.

Points are snapped to a randomly shifted power-of-two grid hierarchy; each
tree level splits every cell in half per dimension, so a point's path is a
sequence of d-bit labels read straight off its integer grid coordinates.
The tree keeps only cells that contain points, stops at a fixed depth, and
applies middle-out compression: any single-child chain longer than
``2 * Lambda + 1`` edges keeps only its first and last ``Lambda`` links,
recording how many nodes the long edge hides. Hidden labels are gone from
memory; full-precision vectors live on disk, one cell per point.

An insert descends optimistically (pretending hidden labels match), lands
at some stored point's leaf, and fetches that one vector; its exact grid
bits recover every discarded label on the shared path, which is enough to
splice the new branch in and re-compress. A delete fetches one surviving
cousin instead. Either way the tree after the update is node-identical to
a fresh build on the resulting point set with the same shifts: one read
round and one write round per update (degenerate empty-tree edges have
nothing to fetch).

Queries descend the same way without mutating and return the leaf's point;
they never touch the disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .store import DiskStore, RecordTable


@dataclass(frozen=True)
class GridParams:
    """Shifted grid hierarchy: depth, cell scaling, and per-axis shifts."""

    eps: float
    delta: float
    phi: float
    d: int
    lam: int
    depth: int
    big_delta: float
    shifts: np.ndarray

    @classmethod
    def create(cls, eps, delta, phi, d, seed):
        if not 0 < eps < 1 or not 0 < delta < 1:
            raise ValueError("eps and delta must lie in (0, 1)")
        if phi < 2:
            raise ValueError("aspect ratio bound phi must be >= 2")
        log_phi = math.ceil(math.log2(phi))
        big_delta = float(2**log_phi)
        lam = math.ceil(math.log2(16.0 * d**1.5 * math.log2(phi) / (eps * delta)))
        depth = log_phi + lam
        rng = np.random.default_rng(seed)
        shifts = rng.uniform(-big_delta, big_delta, size=d)
        return cls(eps, delta, phi, d, lam, depth, big_delta, shifts)

    def grid_coords(self, x: np.ndarray) -> np.ndarray:
        """Integer grid coordinates of x at the deepest level."""
        span = 4.0 * self.big_delta
        scaled = (np.asarray(x, dtype=float) + self.shifts + 2.0 * self.big_delta) / span
        u = np.floor(scaled * (1 << self.depth)).astype(np.int64)
        return np.clip(u, 0, (1 << self.depth) - 1)

    def labels(self, x: np.ndarray) -> np.ndarray:
        """d-bit edge labels for depths 1..depth, top down."""
        u = self.grid_coords(x)
        out = np.empty(self.depth, dtype=np.int64)
        for level in range(1, self.depth + 1):
            bits = (u >> (self.depth - level)) & 1
            label = 0
            for dim in range(self.d):
                label |= int(bits[dim]) << dim
            out[level - 1] = label
        return out


class _Node:
    __slots__ = ("level", "children", "long", "pid", "parent")

    def __init__(self, level, parent=None):
        self.level = level
        self.children: dict[int, _Node] = {}
        self.long = None  # (child, skipped) when this node heads a long edge
        self.pid = None  # leaf owner
        self.parent = parent

    def degree(self):
        return (1 if self.long is not None else 0) + len(self.children)

    def only_child(self):
        if self.long is not None:
            return self.long[0]
        (child,) = self.children.values()
        return child


class QuadSketch:
    """Dynamically consistent nearest-neighbor sketch over a point set."""

    def __init__(self, params: GridParams, store: DiskStore | None, projection=None):
        self.params = params
        self.store = store
        self.records = RecordTable(store, 1) if store is not None else None
        self.root: _Node | None = None
        self._leaf_of: dict[int, _Node] = {}
        self._next_id = 0
        self.projection = projection  # optional (jl_dim, d) matrix applied to inputs
        self._input_dim = params.d if projection is None else projection.shape[1]

    def _project(self, x):
        if self.projection is None:
            return np.asarray(x, dtype=float)
        return self.projection @ np.asarray(x, dtype=float)

    # -- construction ----------------------------------------------------

    @classmethod
    def build(cls, X, eps, delta, phi, seed, store=None, ids=None, jl_dim=None):
        """Build the sketch; ``jl_dim`` optionally random-projects inputs first.

        With a projection, ``phi`` must bound the projected coordinates and
        the aspect-ratio convention applies to the projected point set.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, d_in = X.shape
        projection = None
        if jl_dim is not None:
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
            projection = rng.standard_normal((jl_dim, d_in)) / np.sqrt(jl_dim)
            X = X @ projection.T
        d = X.shape[1]
        params = GridParams.create(eps, delta, phi, d, seed)
        if n and np.abs(X).max() > phi:
            raise ValueError("points must satisfy max|coordinate| <= phi")
        self = cls(params, store, projection)
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
        self._next_id = int(ids.max()) + 1 if n else 0
        for pos in range(n):
            self._graft(params.labels(X[pos]), int(ids[pos]))
        self._compress_all()
        if store is not None:
            writes = []
            for pos in range(n):
                pid = int(ids[pos])
                self.records.add(pid)
                writes.append((self.records.slot(pid, 0), X[pos].astype("<f8").tobytes()))
            if writes:
                store.write_batch(writes)
        return self

    def __len__(self):
        return len(self._leaf_of)

    @property
    def point_ids(self):
        return sorted(self._leaf_of)

    # -- tree surgery helpers ------------------------------------------------

    def _graft(self, labels, pid):
        """Insert a fully materialized root-to-leaf path for bit labels."""
        if self.root is None:
            self.root = _Node(0)
        node = self.root
        for level in range(1, self.params.depth + 1):
            if node.long is not None:
                raise AssertionError("graft into a compressed edge")
            label = int(labels[level - 1])
            child = node.children.get(label)
            if child is None:
                child = _Node(level, parent=node)
                node.children[label] = child
            node = child
        if node.pid is not None:
            raise ValueError("coincident points share a deepest grid cell")
        node.pid = pid
        self._leaf_of[pid] = node

    def _compress_all(self):
        """Canonical middle-out compression of every maximal chain.

        Chains that still contain a long edge were not touched by the
        current update and are already canonical, so they are skipped.
        """
        if self.root is None:
            return
        lam = self.params.lam
        stack = [self.root]
        while stack:
            anchor = stack.pop()
            # follow each outgoing chain from this anchor
            heads = list(anchor.children.values())
            if anchor.long is not None:
                heads.append(anchor.long[0])
            for head in heads:
                chain = [anchor]
                node = head
                has_long = anchor.long is not None and head is anchor.long[0]
                while node.degree() == 1 and node.pid is None:
                    chain.append(node)
                    has_long = has_long or node.long is not None
                    node = node.only_child()
                chain.append(node)
                stack.append(node)
                if has_long:
                    continue
                k = len(chain) - 1  # edges on the maximal path
                if k >= 2 * lam + 1:
                    keep_top = chain[lam]
                    keep_bottom = chain[k - lam + 1]
                    removed = k - 2 * lam
                    keep_top.children = {}
                    keep_top.long = (keep_bottom, removed)
                    keep_bottom.parent = keep_top
        # leaves own no chains; nothing else to do

    def _decompress_to(self, labels):
        """Materialize the whole root path for these labels; returns the leaf.

        Every long edge on the path hides exactly these labels, so the
        expansion is exact.
        """
        node = self.root
        level = 0
        while level < self.params.depth:
            if node.long is not None:
                child, removed = node.long
                node.long = None
                cur = node
                for lvl in range(level + 1, child.level):
                    fresh = _Node(lvl, parent=cur)
                    cur.children[int(labels[lvl - 1])] = fresh
                    cur = fresh
                cur.children[int(labels[child.level - 1])] = child
                child.parent = cur
            label = int(labels[level])
            nxt = node.children.get(label)
            if nxt is None:
                raise AssertionError("decompression left the recorded path")
            node = nxt
            level = node.level
        return node

    # -- traversal ----------------------------------------------------------

    def _descend(self, u):
        """Optimistic descent on grid coordinates ``u``: match cell labels,
        pretend through long edges, and on mismatch divert into the child
        subcell geometrically nearest to the query, clamping the coordinates
        into it so deeper levels keep routing toward the query. Returns the
        reached leaf. Ties break toward the lowest label."""
        d = self.params.d
        B = self.params.depth
        u = np.array(u, dtype=np.int64, copy=True)
        node = self.root
        while node.pid is None:
            if node.long is not None:
                node = node.long[0]
                continue
            shift = B - node.level - 1
            qlabel = 0
            for dim in range(d):
                qlabel |= int((u[dim] >> shift) & 1) << dim
            child = node.children.get(qlabel)
            if child is None:
                half = 1 << shift
                mask = (1 << (shift + 1)) - 1
                best = None
                for lbl in sorted(node.children):
                    dist2 = 0
                    for dim in range(d):
                        qb = (int(u[dim]) >> shift) & 1
                        cb = (lbl >> dim) & 1
                        if qb != cb:
                            pos = int(u[dim]) & mask
                            gap = pos - half + 1 if qb else half - pos
                            dist2 += gap * gap
                    if best is None or dist2 < best[0]:
                        best = (dist2, lbl)
                lbl = best[1]
                for dim in range(d):
                    qb = (int(u[dim]) >> shift) & 1
                    cb = (lbl >> dim) & 1
                    if qb != cb:
                        prefix = int(u[dim]) >> (shift + 1)
                        if cb:
                            u[dim] = (prefix << (shift + 1)) | half
                        else:
                            u[dim] = (prefix << (shift + 1)) | (half - 1)
                child = node.children[lbl]
            node = child
        return node

    def _leaf_labels(self, leaf: _Node, x: np.ndarray) -> np.ndarray:
        return self.params.labels(x)

    # -- updates -------------------------------------------------------------

    def _require_store(self):
        if self.store is None:
            raise RuntimeError("updates need a store")

    def _read_point(self, pid: int) -> np.ndarray:
        cell = self.records.slot(pid, 0)
        blob = self.store.read_map([cell])[cell]
        return np.frombuffer(blob, dtype="<f8", count=self.params.d)

    def insert(self, x, point_id=None) -> int:
        """Add one point: one read round (a colliding leaf's vector), one write."""
        self._require_store()
        x = np.asarray(x, dtype=float).reshape(self._input_dim)
        x = self._project(x)
        if np.abs(x).max() > self.params.phi:
            raise ValueError("point outside the grid bounds")
        pid = self._next_id if point_id is None else int(point_id)
        if pid in self._leaf_of:
            raise ValueError(f"point id {pid} already present")
        self._next_id = max(self._next_id, pid + 1)
        labels = self.params.labels(x)
        self.store.begin_update()
        if self.root is not None:
            other = self._descend(self.params.grid_coords(x))
            xj = self._read_point(other.pid)
            labels_j = self.params.labels(xj)
            if np.array_equal(labels, labels_j):
                self.store.end_update()
                raise ValueError("coincident points share a deepest grid cell")
            self._decompress_to(labels_j)
        self._graft(labels, pid)
        self._compress_all()
        self.records.add(pid)
        self.store.write_batch([(self.records.slot(pid, 0), x.astype("<f8").tobytes())])
        report = self.store.end_update()
        return pid

    def delete(self, point_id: int):
        """Remove one point: one read round (a surviving cousin), one write."""
        self._require_store()
        pid = int(point_id)
        leaf = self._leaf_of.get(pid)
        if leaf is None:
            raise KeyError(f"point id {pid} not present")
        self.store.begin_update()
        if len(self._leaf_of) == 1:
            self.root = None
            self._leaf_of.clear()
            self.store.write_batch([], frees=self.records.remove(pid))
            self.store.end_update()
            return
        # deepest branching ancestor and the child heading toward the leaf
        node, via = leaf, None
        while node.parent is not None:
            via = node
            node = node.parent
            if node.degree() >= 2:
                break
        vstar = node
        # a cousin under any other child of vstar
        other_children = [c for lbl, c in sorted(vstar.children.items()) if c is not via]
        if vstar.long is not None and vstar.long[0] is not via:
            other_children.insert(0, vstar.long[0])
        cousin = other_children[0]
        while cousin.pid is None:
            cousin = cousin.long[0] if cousin.long is not None else cousin.children[min(cousin.children)]
        xj = self._read_point(cousin.pid)
        # unlink the deleted branch
        if vstar.long is not None and vstar.long[0] is via:
            vstar.long = None
        else:
            for lbl, c in list(vstar.children.items()):
                if c is via:
                    del vstar.children[lbl]
        del self._leaf_of[pid]
        self._decompress_to(self.params.labels(xj))
        self._compress_all()
        self.store.write_batch([], frees=self.records.remove(pid))
        self.store.end_update()

    # -- queries --------------------------------------------------------------

    def query(self, q) -> int:
        """Nearest-neighbor candidate from the sketch alone (no disk access).

        Best-first descent over cell lower bounds: every reachable node's
        cell is a dyadic box known from its materialized edge labels;
        crossing a long edge fills the hidden levels with the query's own
        bits (clamped into the current box), mirroring the optimistic
        traversal. The first leaf popped is returned. Leaf boxes are a
        factor ~2^-Lambda finer than their nearest branching ancestor, so
        the bound is near-exact at the scales that matter.
        """
        if self.root is None:
            raise ValueError("sketch is empty")
        import heapq

        q = np.asarray(q, dtype=float).reshape(self._input_dim)
        q = self._project(q)
        u = self.params.grid_coords(np.clip(q, -self.params.phi, self.params.phi))
        d = self.params.d
        B = self.params.depth

        def bound2(origin, level):
            side = 1 << (B - level)
            total = 0
            for dim in range(d):
                lo = int(origin[dim])
                hi = lo + side - 1
                v = int(u[dim])
                if v < lo:
                    total += (lo - v) ** 2
                elif v > hi:
                    total += (v - hi) ** 2
            return total

        def clamped_bits(origin, level, target_level):
            """Query offset for hidden levels (level, target_level], inside the box."""
            side = 1 << (B - level)
            off = np.zeros(d, dtype=np.int64)
            for dim in range(d):
                lo = int(origin[dim])
                v = min(max(int(u[dim]), lo), lo + side - 1) - lo
                # keep only the bits for levels level+1 .. target_level
                keep = v >> (B - target_level)
                off[dim] = keep << (B - target_level)
            return off

        seq = 0
        root_origin = np.zeros(d, dtype=np.int64)
        heap = [(bound2(root_origin, 0), 0, self.root, root_origin, 0)]
        while heap:
            _, _, node, origin, level = heapq.heappop(heap)
            if node.pid is not None:
                return node.pid
            if node.long is not None:
                child, _ = node.long
                off = clamped_bits(origin, level, child.level)
                new_origin = origin + off
                seq += 1
                heapq.heappush(heap, (bound2(new_origin, child.level), seq, child, new_origin, child.level))
                continue
            shift = B - level - 1
            for lbl in sorted(node.children):
                child = node.children[lbl]
                new_origin = origin.copy()
                for dim in range(d):
                    if (lbl >> dim) & 1:
                        new_origin[dim] += 1 << shift
                seq += 1
                heapq.heappush(heap, (bound2(new_origin, level + 1), seq, child, new_origin, level + 1))
        raise AssertionError("search exhausted a non-empty tree")

    # -- introspection -----------------------------------------------------------

    def to_dict(self):
        """Structural dump for tree-identity comparisons (parents omitted)."""

        def walk(node):
            out = {"level": node.level}
            if node.pid is not None:
                out["pid"] = node.pid
            if node.long is not None:
                child, removed = node.long
                out["long"] = {"removed": removed, "child": walk(child)}
            if node.children:
                out["children"] = {str(lbl): walk(node.children[lbl]) for lbl in sorted(node.children)}
            return out

        return walk(self.root) if self.root is not None else {}

    def node_count(self) -> int:
        if self.root is None:
            return 0
        total = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            total += 1
            stack.extend(node.children.values())
            if node.long is not None:
                stack.append(node.long[0])
        return total

    def bit_size(self) -> int:
        """Rough stored size in bits: labels, long-edge lengths, leaf ids."""
        if self.root is None:
            return 0
        d = self.params.d
        n = max(2, len(self._leaf_of))
        depth_bits = max(1, math.ceil(math.log2(self.params.depth + 1)))
        id_bits = max(1, math.ceil(math.log2(n)))
        bits = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            bits += d * len(node.children)
            if node.long is not None:
                bits += depth_bits
                stack.append(node.long[0])
            if node.pid is not None:
                bits += id_bits
            stack.extend(node.children.values())
        return bits

    def check_invariants(self):
        """No surviving over-long uncompressed chain; structure consistent."""
        if self.root is None:
            return
        lam = self.params.lam
        stack = [(self.root, None)]
        while stack:
            anchor, _ = stack.pop()
            heads = [(c, False) for c in anchor.children.values()]
            if anchor.long is not None:
                heads.append((anchor.long[0], True))
            for head, via_long in heads:
                chain_edges = 1
                has_long = via_long
                node = head
                while node.degree() == 1 and node.pid is None:
                    has_long = has_long or node.long is not None
                    nxt = node.only_child()
                    chain_edges += nxt.level - node.level if node.long is None else nxt.level - node.level
                    node = nxt
                stack.append((node, None))
                if not has_long and chain_edges >= 2 * lam + 1:
                    raise AssertionError("uncompressed over-long chain survived")
            if anchor.long is not None:
                child, removed = anchor.long
                if child.level - anchor.level - 1 != removed:
                    raise AssertionError("long edge length disagrees with levels")


def min_pairwise_distance(X, chunk=1024) -> float:
    X = np.asarray(X, dtype=float)
    n = len(X)
    x2 = (X**2).sum(axis=1)
    best = np.inf
    for lo in range(0, n, chunk):
        part = X[lo : lo + chunk]
        d2 = x2[lo : lo + chunk, None] - 2.0 * (part @ X.T) + x2[None, :]
        for row in range(len(part)):
            d2[row, lo + row] = np.inf
        m = d2.min()
        if m < best:
            best = m
    return float(np.sqrt(max(best, 0.0)))


def scale_to_grid(X, *extra_sets, margin=1.01):
    """Scale datasets so min pairwise distance >= 1; returns (scaled..., phi).

    The first array determines the scale; extra arrays (e.g. queries) are
    scaled identically. ``phi`` bounds every coordinate of the first array.
    """
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        scale = 1.0
    else:
        dmin = min_pairwise_distance(X)
        if dmin == 0:
            raise ValueError("coincident points: aspect ratio undefined")
        scale = margin / dmin
    out = [X * scale] + [np.asarray(E, dtype=float) * scale for E in extra_sets]
    phi = max(2.0, float(np.abs(out[0]).max()) * 1.001)
    return (*out, phi)
