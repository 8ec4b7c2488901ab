"""Reference product quantizers built on per-block k-means codebooks.

All of them answer queries through the same in-memory ADC path as the tree
quantizer; they differ only in how the codebooks and codes react to stream
updates:

* ``FrozenPq``   - codebooks fixed at build time; updates just encode.
* ``RebuildPq``  - re-learns the codebooks from scratch (a full read of the
  live set, ledger-visible) every ``period`` updates.
* ``OnlinePq``   - moves each centroid to the running mean of its members;
  never reassigns an existing point's membership.
* ``DeDriftPq``  - assigns to frozen centroids until a cluster grows past a
  threshold, then re-clusters the members of the m largest plus m_small
  smallest clusters per block, reading exactly those vectors from disk.

Every insert writes the point's full vector to disk in its update window,
so read traffic is what separates the policies.
"""

from __future__ import annotations

import numpy as np

from .product import _AdcQueryMixin
from .store import DiskStore, RecordTable


class KMeansResult:
    def __init__(self, centroids, assignments, iterations):
        self.centroids = centroids
        self.assignments = assignments
        self.iterations = iterations


def _plus_plus_init(X, k, rng):
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all points coincide with chosen centroids; fall back to round-robin
            centroids[j] = X[j % n]
            continue
        cum = np.cumsum(d2)
        idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
        idx = min(idx, n - 1)
        centroids[j] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def assign_nearest(X, centroids, chunk=8192):
    """Index of each row's nearest centroid; ties go to the lowest index.

    One dimension uses boundary search between sorted centroids; otherwise
    distances run in single precision (centroid counts here make the
    assignment step the dominant cost, and near-ties are resolved the same
    way on every call).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] == 1:
        order = np.argsort(centroids[:, 0], kind="stable")
        sc = centroids[order, 0]
        mids = (sc[:-1] + sc[1:]) / 2
        pos = np.searchsorted(mids, X[:, 0], side="left")
        # among equal centroid values keep the lowest original index
        out = order[pos]
        return out.astype(np.int64)
    c32 = np.ascontiguousarray(centroids, dtype=np.float32)
    x32 = np.ascontiguousarray(X, dtype=np.float32)
    c2 = (c32**2).sum(axis=1)
    out = np.empty(X.shape[0], dtype=np.int64)
    for lo in range(0, X.shape[0], chunk):
        part = x32[lo : lo + chunk]
        d2 = c2[None, :] - 2.0 * (part @ c32.T)
        out[lo : lo + chunk] = np.argmin(d2, axis=1)
    return out


def kmeans(X, k, seed, iters=25, tol=1e-4):
    """Lloyd's algorithm with ++ init; fixed iteration cap or relative-shift stop.

    Deterministic in ``seed``. Empty clusters are reseeded with the point
    farthest from its current centroid (lowest index on ties).
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds {n} points")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(X, k, rng)
    assignments = assign_nearest(X, centroids)
    it = 0
    for it in range(1, iters + 1):
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, X)
        counts = np.bincount(assignments, minlength=k).astype(float)
        occupied = counts > 0
        new = centroids.copy()
        new[occupied] = sums[occupied] / counts[occupied, None]
        empties = np.flatnonzero(~occupied)
        if empties.size:
            d2 = ((X - new[assignments]) ** 2).sum(axis=1)
            for e in empties:
                far = int(np.argmax(d2))
                new[e] = X[far]
                d2[far] = -1.0
        shift = np.linalg.norm(new - centroids) / (np.linalg.norm(centroids) + 1e-30)
        centroids = new
        assignments = assign_nearest(X, centroids)
        if shift < tol:
            break
    return KMeansResult(centroids, assignments, it)


def dedrift_m_for(L: int, fraction: float = 0.02) -> int:
    """Smallest m so at least the given fraction of clusters is repartitioned."""
    return max(1, int(np.ceil(fraction * (1 << L))))


class PqIndex(_AdcQueryMixin):
    """Static product quantizer: per-block k-means codebooks plus codes."""

    kind = "pq"

    def __init__(self, M, L, seed, store=None):
        self.M = M
        self.L = L
        self.k = 1 << L
        self.seed = seed
        self.d = 0
        self.store = store
        self.records: RecordTable | None = None
        self.codebooks: list[np.ndarray] = []
        self._row_of: dict[int, int] = {}
        self._ids = np.zeros(0, dtype=np.int64)
        self._codes = np.zeros((0, M), dtype=np.uint32)
        self._next_id = 0

    # -- construction ---------------------------------------------------

    @classmethod
    def build(cls, X, M, L, seed, store=None, ids=None, iters=25):
        self = cls(M, L, seed, store=store)
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        if d % M != 0:
            raise ValueError(f"M={M} does not divide d={d}")
        if n < self.k:
            raise ValueError(f"need at least {self.k} points for {self.k} centroids")
        self.d = d
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
        self._next_id = int(ids.max()) + 1 if n else 0
        self._fit_codebooks(X, iters=iters)
        codes = self.encode(X)
        self._ids = ids.copy()
        self._codes = codes.astype(np.uint32)
        self._row_of = {int(pid): row for row, pid in enumerate(ids)}
        if store is not None:
            self.records = RecordTable(store, 1)
            writes = []
            for pos, pid in enumerate(ids):
                self.records.add(int(pid))
                writes.append((self.records.slot(int(pid), 0), X[pos].astype("<f8").tobytes()))
            store.write_batch(writes)
        self._after_build(X, ids)
        return self

    def _fit_codebooks(self, X, iters=25):
        d_b = self.d // self.M
        self.codebooks = []
        for j in range(self.M):
            sub = X[:, j * d_b : (j + 1) * d_b]
            km = kmeans(sub, self.k, np.random.SeedSequence(entropy=self.seed, spawn_key=(j,)), iters=iters)
            self.codebooks.append(km.centroids)

    def _after_build(self, X, ids):
        pass

    # -- encoding -----------------------------------------------------------

    def encode(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d_b = self.d // self.M
        codes = np.empty((X.shape[0], self.M), dtype=np.uint32)
        for j in range(self.M):
            codes[:, j] = assign_nearest(X[:, j * d_b : (j + 1) * d_b], self.codebooks[j])
        return codes

    def decompress_code(self, code) -> np.ndarray:
        d_b = self.d // self.M
        out = np.empty(self.d)
        for j in range(self.M):
            out[j * d_b : (j + 1) * d_b] = self.codebooks[j][code[j]]
        return out

    def codes_of(self, point_id: int):
        return tuple(int(c) for c in self._codes[self._row_of[int(point_id)]])

    # -- ADC plumbing shared with the tree quantizer -------------------------

    def _block_means(self):
        return self.codebooks

    def _live_codes(self):
        n = len(self._row_of)
        return self._codes[:n], self._ids[:n]

    def _require_store(self):
        if self.store is None:
            raise RuntimeError("this index was built without a store")

    def __len__(self):
        return len(self._row_of)

    def __contains__(self, pid):
        return pid in self._row_of

    @property
    def point_ids(self):
        return self._ids[: len(self._row_of)]

    def _append_row(self, pid, code):
        n = len(self._row_of)
        if n >= len(self._ids):
            grow = max(64, len(self._ids))
            self._ids = np.concatenate([self._ids, np.zeros(grow, dtype=np.int64)])
            self._codes = np.concatenate([self._codes, np.zeros((grow, self.M), dtype=np.uint32)])
        self._ids[n] = pid
        self._codes[n] = code
        self._row_of[pid] = n

    def _drop_row(self, pid):
        row = self._row_of.pop(pid)
        last = len(self._row_of)
        if row != last:
            self._ids[row] = self._ids[last]
            self._codes[row] = self._codes[last]
            self._row_of[int(self._ids[row])] = row

    # -- streaming interface ----------------------------------------------------

    def _begin(self, pid, x=None):
        self._require_store()
        self.store.begin_update()
        if x is not None:
            self.records.add(pid)
            self.store.write_batch([(self.records.slot(pid, 0), x.astype("<f8").tobytes())])

    def _resolve_insert_id(self, point_id):
        pid = self._next_id if point_id is None else int(point_id)
        if pid in self._row_of:
            raise ValueError(f"point id {pid} already present")
        self._next_id = max(self._next_id, pid + 1)
        return pid

    def insert(self, x, point_id=None) -> int:
        raise NotImplementedError

    def delete(self, point_id: int):
        raise NotImplementedError


class FrozenPq(PqIndex):
    """Codebooks learned once on the initial data and never touched again."""

    kind = "frozenpq"

    def insert(self, x, point_id=None):
        x = np.asarray(x, dtype=float).reshape(self.d)
        pid = self._resolve_insert_id(point_id)
        self._begin(pid, x)
        self._append_row(pid, self.encode(x)[0])
        self.store.end_update()
        return pid

    def delete(self, point_id):
        pid = int(point_id)
        self._require_store()
        self.store.begin_update()
        self.store.write_batch([], frees=self.records.remove(pid))
        self._drop_row(pid)
        self.store.end_update()


class RebuildPq(PqIndex):
    """Re-learns the quantizer from the full live set every ``period`` updates."""

    kind = "rebuildpq"

    def __init__(self, M, L, seed, store=None, period=1):
        super().__init__(M, L, seed, store=store)
        self.period = period
        self._since_rebuild = 0

    @classmethod
    def build(cls, X, M, L, seed, store=None, ids=None, iters=25, period=1):
        self = super().build(X, M, L, seed, store=store, ids=ids, iters=iters)
        self.period = period
        return self

    def _maybe_rebuild(self):
        self._since_rebuild += 1
        if self._since_rebuild < self.period:
            return
        self._since_rebuild = 0
        # canonical ascending-id order so a rebuild equals a fresh build
        ids = np.sort(self.point_ids)
        cells = self.store.read_map(self.records.slot(int(p), 0) for p in ids)
        X = np.vstack(
            [np.frombuffer(cells[self.records.slot(int(p), 0)], dtype="<f8") for p in ids]
        )
        self._fit_codebooks(X)
        codes = self.encode(X)
        for pos, pid in enumerate(ids):
            self._codes[self._row_of[int(pid)]] = codes[pos]

    def insert(self, x, point_id=None):
        x = np.asarray(x, dtype=float).reshape(self.d)
        pid = self._resolve_insert_id(point_id)
        self._begin(pid, x)
        self._append_row(pid, self.encode(x)[0])
        self._maybe_rebuild()
        self.store.end_update()
        return pid

    def delete(self, point_id):
        pid = int(point_id)
        self._require_store()
        self.store.begin_update()
        self.store.write_batch([], frees=self.records.remove(pid))
        self._drop_row(pid)
        self._maybe_rebuild()
        self.store.end_update()


class OnlinePq(PqIndex):
    """Centroids track the running mean of their members; memberships never move.

    Deletes subtract the exact vector, so a private in-memory copy of every
    live vector is kept; the disk ledger stays read-free by construction.
    """

    kind = "onlinepq"

    def _after_build(self, X, ids):
        d_b = self.d // self.M
        self._sums = [np.zeros((self.k, d_b)) for _ in range(self.M)]
        self._counts = [np.zeros(self.k, dtype=np.int64) for _ in range(self.M)]
        self._vectors = {}
        for pos, pid in enumerate(ids):
            self._vectors[int(pid)] = X[pos].copy()
        for j in range(self.M):
            sub = X[:, j * d_b : (j + 1) * d_b]
            np.add.at(self._sums[j], self._codes[: len(ids), j], sub)
            np.add.at(self._counts[j], self._codes[: len(ids), j], 1)

    def _center_of(self, j, cluster):
        if self._counts[j][cluster] == 0:
            return self.codebooks[j][cluster]
        return self._sums[j][cluster] / self._counts[j][cluster]

    def insert(self, x, point_id=None):
        x = np.asarray(x, dtype=float).reshape(self.d)
        pid = self._resolve_insert_id(point_id)
        self._begin(pid, x)
        code = self.encode(x)[0]
        d_b = self.d // self.M
        for j in range(self.M):
            c = int(code[j])
            self._sums[j][c] += x[j * d_b : (j + 1) * d_b]
            self._counts[j][c] += 1
            self.codebooks[j][c] = self._center_of(j, c)
        self._append_row(pid, code)
        self._vectors[pid] = x.copy()
        self.store.end_update()
        return pid

    def delete(self, point_id):
        pid = int(point_id)
        self._require_store()
        x = self._vectors.pop(pid)
        code = self._codes[self._row_of[pid]]
        self.store.begin_update()
        self.store.write_batch([], frees=self.records.remove(pid))
        d_b = self.d // self.M
        for j in range(self.M):
            c = int(code[j])
            self._sums[j][c] -= x[j * d_b : (j + 1) * d_b]
            self._counts[j][c] -= 1
            self.codebooks[j][c] = self._center_of(j, c)
        self._drop_row(pid)
        self.store.end_update()


class DeDriftPq(PqIndex):
    """Frozen assignment until clusters overgrow, then local re-clustering.

    When any cluster in a block exceeds ``(1 + gamma) * n / 2**L`` members,
    the members of that block's ``m`` largest and ``m_small`` smallest
    clusters are fetched from disk, re-clustered into ``m + m_small`` fresh
    centroids, and re-encoded. Updates report how many unique vectors they
    pulled from disk.
    """

    kind = "dedriftpq"

    def __init__(self, M, L, seed, store=None, m=2, m_small=None, gamma=0.5, trigger="auto"):
        super().__init__(M, L, seed, store=store)
        self.m = m
        self.m_small = m if m_small is None else m_small
        self.gamma = gamma
        self.trigger = trigger
        self.last_io_count = 0

    @classmethod
    def build(cls, X, M, L, seed, store=None, ids=None, iters=25, m=2, m_small=None, gamma=0.5, trigger="auto"):
        self = super().build(X, M, L, seed, store=store, ids=ids, iters=iters)
        self.m = m
        self.m_small = m if m_small is None else m_small
        self.gamma = gamma
        self.trigger = trigger
        self.last_io_count = 0
        return self

    def _block_cluster_sizes(self, j):
        n = len(self._row_of)
        return np.bincount(self._codes[:n, j], minlength=self.k)

    def _flagged_clusters(self, j):
        """Indices of the m largest plus m_small smallest clusters of block j."""
        sizes = self._block_cluster_sizes(j)
        by_large = np.lexsort((np.arange(self.k), -sizes))
        large = list(by_large[: self.m])
        by_small = np.lexsort((np.arange(self.k), sizes))
        small = [c for c in by_small if c not in large][: self.m_small]
        return large + list(small)

    def flagged_ids(self) -> list[int]:
        """Union of member ids across blocks' flagged clusters."""
        n = len(self._row_of)
        out = set()
        for j in range(self.M):
            clusters = set(self._flagged_clusters(j))
            mask = np.isin(self._codes[:n, j], list(clusters))
            out.update(int(p) for p in self._ids[:n][mask])
        return sorted(out)

    def count_flagged_after(self, x) -> int:
        """Stored vectors the criterion would flag once x is assigned.

        Counts the union across blocks without mutating any state; used by
        the single-update I/O cost experiment.
        """
        x = np.asarray(x, dtype=float).reshape(self.d)
        code = self.encode(x)[0]
        n = len(self._row_of)
        out: set[int] = set()
        idx = np.arange(self.k)
        for j in range(self.M):
            sizes = self._block_cluster_sizes(j).astype(np.int64)
            sizes[code[j]] += 1
            large = [int(c) for c in np.lexsort((idx, -sizes))[: self.m]]
            small = [int(c) for c in np.lexsort((idx, sizes)) if int(c) not in large][: self.m_small]
            mask = np.isin(self._codes[:n, j], large + small)
            out.update(int(p) for p in self._ids[:n][mask])
        return len(out)

    def _should_fire(self):
        if self.trigger == "never":
            return False
        n = len(self._row_of)
        limit = (1.0 + self.gamma) * n / self.k
        for j in range(self.M):
            if self._block_cluster_sizes(j).max(initial=0) > limit:
                return True
        return False

    def _repartition(self) -> int:
        """Re-cluster flagged members; returns unique vectors fetched."""
        n = len(self._row_of)
        per_block_members = []
        union: set[int] = set()
        for j in range(self.M):
            clusters = self._flagged_clusters(j)
            mask = np.isin(self._codes[:n, j], clusters)
            members = [int(p) for p in self._ids[:n][mask]]
            per_block_members.append((clusters, members))
            union.update(members)
        union_ids = sorted(union)
        if not union_ids:
            return 0
        cells = self.store.read_map(self.records.slot(p, 0) for p in union_ids)
        vecs = {p: np.frombuffer(cells[self.records.slot(p, 0)], dtype="<f8") for p in union_ids}
        d_b = self.d // self.M
        for j, (clusters, members) in enumerate(per_block_members):
            if not members:
                continue
            sub = np.vstack([vecs[p][j * d_b : (j + 1) * d_b] for p in members])
            n_clusters = min(len(clusters), len(members))
            km = kmeans(
                sub,
                n_clusters,
                np.random.SeedSequence(entropy=self.seed, spawn_key=(j, len(self.store.ledger.per_update_history))),
            )
            for slot, cluster in enumerate(clusters[:n_clusters]):
                self.codebooks[j][cluster] = km.centroids[slot]
            reassigned = np.asarray(clusters[:n_clusters])[km.assignments]
            for p, cluster in zip(members, reassigned):
                self._codes[self._row_of[p], j] = cluster
        return len(union_ids)

    def insert(self, x, point_id=None) -> int:
        x = np.asarray(x, dtype=float).reshape(self.d)
        pid = self._resolve_insert_id(point_id)
        self._begin(pid, x)
        self._append_row(pid, self.encode(x)[0])
        fetched = self._repartition() if self._should_fire() else 0
        self.last_io_count = fetched
        self.store.end_update()
        return pid

    def delete(self, point_id):
        pid = int(point_id)
        self._require_store()
        self.store.begin_update()
        self.store.write_batch([], frees=self.records.remove(pid))
        self._drop_row(pid)
        fetched = self._repartition() if self._should_fire() else 0
        self.last_io_count = fetched
        self.store.end_update()
