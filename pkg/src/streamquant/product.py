"""Product-structured tree quantizer and its in-memory ADC query path.

Vectors are split into M contiguous blocks; each block runs its own median
tree quantizer with an independent rotation and split sequence derived from
the shared seed. A point's code is the tuple of its per-block leaf indexes
and all blocks share one disk record per point (full vector, rotated
subvectors, and every block/level pointer cell), so an insert or delete is
a single update window: every block's queue fetches batch into the same
three read rounds, and one write batch commits everything.

Queries never touch the disk. A query builds one squared-distance table per
block between its subvector and the block's leaf means, then scores every
stored code by summing table entries; ties break by point id. Optional
re-ranking fetches the top candidates' full vectors in one read batch and
reorders them by exact distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kdq import _QuantizerBase, _unpack_full


@dataclass(frozen=True)
class ProductConfig:
    """Block structure of a product quantizer: M blocks of L bits each."""

    M: int
    L: int
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.d % self.M != 0:
            raise ValueError(f"M={self.M} does not divide d={self.d}")
        if self.L > self.d // self.M:
            raise ValueError(f"L={self.L} exceeds block dimension {self.d // self.M}")

    @property
    def block_dim(self) -> int:
        return self.d // self.M

    @property
    def bits_per_dim(self) -> float:
        return self.M * self.L / self.d


def adc_tables(block_means, q: np.ndarray, block_dim: int) -> np.ndarray:
    """Per-block squared distances from q's subvectors to the leaf means."""
    M = len(block_means)
    k = block_means[0].shape[0]
    tables = np.empty((M, k))
    for j, means in enumerate(block_means):
        qb = q[j * block_dim : (j + 1) * block_dim]
        diff = means - qb
        tables[j] = np.einsum("ij,ij->i", diff, diff)
    return tables


def adc_topk(tables: np.ndarray, codes: np.ndarray, ids: np.ndarray, k: int):
    """k smallest table-sum distances, ties by id. Returns (ids, dist2)."""
    n = codes.shape[0]
    dist2 = np.zeros(n)
    for j in range(tables.shape[0]):
        dist2 += tables[j, codes[:, j]]
    order = np.lexsort((ids, dist2))[:k]
    return ids[order], dist2[order]


class _AdcQueryMixin:
    """Shared in-memory k-NN path over (block means, codes, ids)."""

    def _block_means(self):
        return [b.means() for b in self.blocks]

    def _live_codes(self):
        n = len(self._row_of)
        return self._codes[:n], self._ids[:n]

    def knn_query(self, q, k: int):
        """Approximate k nearest neighbors, fully in memory.

        Returns [(point_id, approx_distance)] sorted ascending, ties by id.
        """
        q = np.asarray(q, dtype=float).reshape(self.d)
        codes, ids = self._live_codes()
        n = len(ids)
        if n == 0:
            raise ValueError("index is empty")
        if not 1 <= k <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        tables = adc_tables(self._block_means(), q, self.d // self.M)
        top_ids, dist2 = adc_topk(tables, codes, ids, k)
        return [(int(i), float(np.sqrt(d2))) for i, d2 in zip(top_ids, dist2)]

    def knn_query_batch(self, Q, k: int):
        return [self.knn_query(q, k) for q in np.asarray(Q, dtype=float)]

    def knn_rerank(self, q, k: int, kprime: int):
        """ADC shortlist of k' candidates, one read batch, exact re-rank to k."""
        q = np.asarray(q, dtype=float).reshape(self.d)
        n = len(self._row_of)
        if n == 0:
            raise ValueError("index is empty")
        if not 1 <= k <= kprime <= n:
            raise ValueError(f"need 1 <= k <= k' <= {n}, got k={k}, k'={kprime}")
        cand = [pid for pid, _ in self.knn_query(q, kprime)]
        self._require_store()
        cells = self.store.read_map(self.records.slot(p, 0) for p in cand)
        out = []
        for pid in cand:
            x = _unpack_full(cells[self.records.slot(pid, 0)], self.d)
            out.append((float(np.linalg.norm(q - x)), pid))
        out.sort()
        return [(pid, dist) for dist, pid in out[:k]]

    def io_report(self):
        return self.store.ledger if self.store is not None else None


class ProductCodeq(_QuantizerBase, _AdcQueryMixin):
    """Dynamically consistent product quantizer with ADC queries."""

    def __init__(self):
        super().__init__()
        self.config: ProductConfig | None = None

    @classmethod
    def build(cls, X, config: ProductConfig, store=None, ids=None, persist=True):
        self = cls()
        X = np.asarray(X, dtype=float)
        if X.shape[1] != config.d:
            raise ValueError(f"data dimension {X.shape[1]} != config.d {config.d}")
        self.config = config
        self._init_build(
            X, M=config.M, L=config.L, d=config.d, seed=config.seed,
            store=store, ids=ids, rotations=None, persist=persist,
        )
        return self

    @classmethod
    def load(cls, path):
        self = cls._load_into(cls(), path)
        self.config = ProductConfig(M=self.M, L=self.L, d=self.d, seed=self.seed or 0)
        return self

    def codes_of(self, point_id: int) -> tuple[int, ...]:
        row = self._row_of[int(point_id)]
        return tuple(int(c) for c in self._codes[row])

    def decompress(self, point_id: int) -> np.ndarray:
        """Concatenated leaf means the point currently quantizes to."""
        out = np.empty(self.d)
        for j, block in enumerate(self.blocks):
            out[block.dims] = block.leaf_mean(block.encodings[int(point_id)])
        return out

    def count_heap_changes(self, x) -> int:
        """Queues an insert of x would touch, summed over blocks (dry run)."""
        return self.plan_insert_stats(x)["heaps_changed"]

    def read_point_record(self, point_id: int):
        """Debug fetch of a point's disk record: (x, rotated blocks, pointer cells)."""
        self._require_store()
        pid = int(point_id)
        base_cell = self.records.slot(pid, 0)
        blob = self.store.read_map([base_cell])[base_cell]
        x = _unpack_full(blob, self.d).copy()
        rot = np.frombuffer(blob, dtype="<f8", offset=8 * self.d, count=self.d).copy()
        ptr_addrs = [self.records.slot(pid, 1 + s) for s in range(self.M * self.L)]
        ptrs = self.store.read_map(ptr_addrs)
        nodes = [int(np.frombuffer(ptrs[a], dtype="<q")[0]) for a in ptr_addrs]
        return x, rot, nodes
