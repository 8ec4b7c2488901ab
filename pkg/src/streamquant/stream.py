"""Streaming scenario construction, recall measurement, and I/O experiments.

A scenario is a sequence of (update, query) steps built from a static
dataset: the data is clustered, an initial prefix of clusters seeds the
index, and the remaining clusters arrive over time ordered by distance to
the initial mass, so both data and queries drift. Queries at step t are
drawn from held-out candidates of clusters seen so far, weighted toward
recent clusters by the freshness parameter alpha ((1 - alpha) ** age, with
0 ** 0 = 1). Deletes retire the oldest live points, ties broken uniformly
at random under the scenario seed.

``run_scenario`` replays the steps against any quantizer exposing the
insert/delete/knn interface, recording recall and per-update disk traffic.
``io_cost_experiment`` measures the cost of one insert, in full-precision
vectors pulled from disk, for the tree quantizer (queues touched) and the
re-clustering baseline (flagged union), across dataset scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import DeDriftPq, FrozenPq, OnlinePq, PqIndex, RebuildPq, dedrift_m_for, kmeans
from .product import ProductCodeq, ProductConfig
from .store import DiskStore


def make_gaussian_mixture(n, d, clusters, seed, center_scale=8.0, within=1.0, within_rank=None,
                          arrangement="iid"):
    """Synthetic drifting-friendly dataset: well separated Gaussian blobs.

    ``within_rank`` restricts each blob to a random low-dimensional
    subspace, mimicking the low intrinsic dimension of real embedding data
    (quantizers at around one bit per dimension have no headroom on
    isotropic clouds). ``arrangement="walk"`` lays cluster centers along a
    random walk so the drift is gradual rather than a sequence of jumps.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(90,)))
    if arrangement == "walk":
        # centers drift along a direction-biased walk: displacement grows
        # linearly with cluster index (clear monotone drift) while local
        # wander keeps neighborhoods overlapping
        heading = rng.standard_normal(d)
        heading /= np.linalg.norm(heading)
        steps = rng.standard_normal((clusters, d))
        steps /= np.linalg.norm(steps, axis=1, keepdims=True)
        steps = 0.75 * heading + 0.65 * steps
        centers = np.cumsum(steps * center_scale / 2.0, axis=0)
    elif arrangement == "iid":
        centers = rng.standard_normal((clusters, d)) * center_scale
    else:
        raise ValueError(f"unknown arrangement {arrangement!r}")
    labels = rng.integers(0, clusters, size=n)
    if within_rank is None:
        noise = rng.standard_normal((n, d)) * within
    else:
        bases = rng.standard_normal((clusters, d, within_rank)) / np.sqrt(within_rank)
        z = rng.standard_normal((n, within_rank)) * within
        noise = np.einsum("ndr,nr->nd", bases[labels], z)
    X = centers[labels] + noise
    return X, labels


@dataclass
class StreamScenario:
    """Update/query schedule over a fixed vector table (ids = row indices)."""

    X: np.ndarray
    inserts: list  # per step, np arrays of ids; step 0 is the initial set
    deletes: list
    queries: list
    params: dict
    seed: int

    @property
    def steps(self) -> int:
        return len(self.inserts)

    @property
    def initial_ids(self) -> np.ndarray:
        return self.inserts[0]

    def validate(self):
        live: set[int] = set()
        for t in range(self.steps):
            ins = set(int(i) for i in self.inserts[t])
            dels = set(int(i) for i in self.deletes[t])
            if ins & live:
                raise AssertionError(f"step {t}: insert of an already-live id")
            if not dels <= live:
                raise AssertionError(f"step {t}: delete of a non-live id")
            live -= dels
            live |= ins
            qs = set(int(i) for i in self.queries[t])
            if not qs <= set(range(len(self.X))):
                raise AssertionError(f"step {t}: query id out of range")

    def live_after(self, t: int) -> np.ndarray:
        live: set[int] = set()
        for s in range(t + 1):
            live -= set(int(i) for i in self.deletes[s])
            live |= set(int(i) for i in self.inserts[s])
        return np.asarray(sorted(live), dtype=np.int64)


def construct_stream(X, c, n0, f_q, tau, alpha, f_d, seed, cluster_iters=10) -> StreamScenario:
    """Build the drifting (update, query) schedule from a static dataset.

    Clusters the data into c groups, seeds the index with the first shuffled
    clusters covering n0 points, then streams the remaining clusters in
    order of centroid distance to the initial mass, tau insert batches per
    cluster. Per batch: deletes retire the ceil(f_d * batch) oldest live
    points; queries sample ceil(f_q * batch) held-out candidates weighted
    (1 - alpha) ** age by cluster recency, without replacement.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 0 < f_q < 1:
        raise ValueError("f_q must lie in (0, 1)")
    if not 0 <= f_d <= 1:
        raise ValueError("f_d must lie in [0, 1]")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if not 0 < n0 < n:
        raise ValueError("n0 must lie in (0, len(X))")
    if c < 2 or tau < 1:
        raise ValueError("need c >= 2 clusters and tau >= 1 batches")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))
    km = kmeans(X, c, np.random.SeedSequence(entropy=seed, spawn_key=(18,)), iters=cluster_iters)
    order = rng.permutation(c)
    members = [np.flatnonzero(km.assignments == cl) for cl in order]
    sizes = np.array([len(m) for m in members])
    prefix = int(np.searchsorted(np.cumsum(sizes), n0) + 1)
    first_ids = np.concatenate(members[:prefix])
    perm = rng.permutation(first_ids)
    q0 = int(np.ceil(f_q * len(first_ids)))
    Q0, I0 = perm[:q0], perm[q0:]

    rest = members[prefix:]
    if not rest:
        raise ValueError("n0 leaves no clusters to stream")
    centroid0 = X[I0].mean(axis=0)
    rest_centroids = np.array([X[m].mean(axis=0) for m in rest])
    dist_order = np.argsort(np.linalg.norm(rest_centroids - centroid0, axis=1), kind="stable")
    rest = [rest[i] for i in dist_order]

    cand_queries = [Q0]
    batches = []
    for m in rest:
        perm_m = rng.permutation(m)
        qm = int(np.ceil(f_q * len(m)))
        cand_queries.append(perm_m[:qm])
        batches.append(np.array_split(perm_m[qm:], tau))

    inserts = [np.asarray(I0, dtype=np.int64)]
    deletes = [np.zeros(0, dtype=np.int64)]
    queries = [np.asarray(Q0, dtype=np.int64)]
    birth: dict[int, tuple] = {int(i): (0, rng.random()) for i in I0}
    live = set(int(i) for i in I0)

    t = 1
    for i in range(1, len(rest) + 1):
        pool_ids = np.concatenate(cand_queries[: i + 1])
        ages = np.concatenate(
            [np.full(len(cand_queries[j]), abs(j - i)) for j in range(i + 1)]
        )
        weights = (1.0 - alpha) ** ages
        weights[ages == 0] = 1.0  # 0 ** 0 convention
        for k in range(tau):
            I_t = np.asarray(batches[i - 1][k], dtype=np.int64)
            n_del = int(np.ceil(f_d * len(I_t)))
            if n_del > 0:
                oldest = sorted(live, key=lambda pid: birth[pid])[:n_del]
                D_t = np.asarray(oldest, dtype=np.int64)
            else:
                D_t = np.zeros(0, dtype=np.int64)
            n_q = int(np.ceil(f_q * len(I_t)))
            positive = weights > 0
            if positive.sum() < n_q:
                raise ValueError("infeasible sample sizes: not enough weighted query candidates")
            probs = weights / weights.sum()
            Q_t = rng.choice(pool_ids, size=n_q, replace=False, p=probs)
            for pid in D_t:
                live.discard(int(pid))
            for pid in I_t:
                live.add(int(pid))
                birth[int(pid)] = (t, rng.random())
            inserts.append(I_t)
            deletes.append(D_t)
            queries.append(np.asarray(Q_t, dtype=np.int64))
            t += 1

    params = dict(c=c, n0=n0, f_q=f_q, tau=tau, alpha=alpha, f_d=f_d)
    scenario = StreamScenario(X, inserts, deletes, queries, params, seed)
    scenario.validate()
    return scenario


# -- ground truth and recall ---------------------------------------------------


def ground_truth(X, live_ids, queries, k, chunk=512):
    """Exact Euclidean top-k ids per query, ties broken by id."""
    live_ids = np.asarray(live_ids, dtype=np.int64)
    if k > len(live_ids):
        raise ValueError(f"k={k} exceeds {len(live_ids)} live points")
    base = np.asarray(X, dtype=float)[live_ids]
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    out = np.empty((len(queries), k), dtype=np.int64)
    b2 = (base**2).sum(axis=1)
    for lo in range(0, len(queries), chunk):
        q = queries[lo : lo + chunk]
        d2 = b2[None, :] - 2.0 * (q @ base.T) + (q**2).sum(axis=1)[:, None]
        for row in range(len(q)):
            order = np.lexsort((live_ids, d2[row]))[:k]
            out[lo + row] = live_ids[order]
    return out


def scenario_ground_truth(scenario: StreamScenario, k):
    """Per-step exact top-k for every query; computed once, shared by runs."""
    out = []
    live: set[int] = set()
    for t in range(scenario.steps):
        live -= set(int(i) for i in scenario.deletes[t])
        live |= set(int(i) for i in scenario.inserts[t])
        qids = scenario.queries[t]
        if len(qids) == 0:
            out.append(np.zeros((0, k), dtype=np.int64))
            continue
        live_arr = np.asarray(sorted(live), dtype=np.int64)
        out.append(ground_truth(scenario.X, live_arr, scenario.X[qids], k))
    return out


def recall_at(approx_ids, true_ids, k, kprime=None):
    """Fraction of the true top-k present among the first k' candidates.

    Candidates are assumed exact-reranked when k' > k, in which case any
    true top-k member among them would survive the re-rank, so membership
    in the first k' is the right count.
    """
    if kprime is None:
        kprime = k
    truth = set(int(i) for i in list(true_ids)[:k])
    if len(truth) < k:
        raise ValueError("need at least k true neighbors")
    cand = set(int(i) for i in list(approx_ids)[:kprime])
    return len(truth & cand) / k


@dataclass
class RecallReport:
    method: str
    k: int
    kprime: int
    recall_k: np.ndarray
    recall_kprime: np.ndarray
    read_rounds: np.ndarray
    words_read: np.ndarray
    query_read_rounds: np.ndarray
    vectors_streamed: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.recall_k)

    @staticmethod
    def rolling(series, window=5, q=0.5):
        series = np.asarray(series, dtype=float)
        out = np.empty_like(series)
        for t in range(len(series)):
            lo = max(0, t - window + 1)
            out[t] = np.quantile(series[lo : t + 1], q)
        return out

    def rolling_median(self, window=5):
        return self.rolling(self.recall_k, window, 0.5)

    def rolling_quantiles(self, window=5):
        return (
            self.rolling(self.recall_k, window, 0.1),
            self.rolling(self.recall_k, window, 0.9),
        )

    def normalized_by(self, other: "RecallReport"):
        ref = np.where(other.recall_k > 0, other.recall_k, np.nan)
        return self.recall_k / ref


def run_scenario(quantizer, scenario: StreamScenario, k, kprime=None, gt=None, method=None, max_steps=None):
    """Replay a scenario against a built quantizer; returns a RecallReport.

    The quantizer must already hold scenario step 0. Ground truth may be
    precomputed with ``scenario_ground_truth`` and shared across methods.
    Queries are asserted I/O-free; re-ranking reads are counted separately.
    ``max_steps`` truncates the replay.
    """
    if kprime is None:
        kprime = k
    if gt is None:
        gt = scenario_ground_truth(scenario, k)
    store = quantizer.store
    name = method or getattr(quantizer, "kind", type(quantizer).__name__)
    rec_k, rec_kp, reads, words, qreads, streamed = [], [], [], [], [], []
    total_streamed = len(scenario.inserts[0])
    last = scenario.steps if max_steps is None else min(scenario.steps, max_steps + 1)
    for t in range(last):
        r0 = store.ledger.read_rounds
        w0 = store.ledger.words_read
        if t > 0:
            # inserts first: the step replaces sets atomically, and this
            # keeps the live size from dipping below build minima mid-step
            for pid in scenario.inserts[t]:
                quantizer.insert(scenario.X[pid], point_id=int(pid))
            for pid in scenario.deletes[t]:
                quantizer.delete(int(pid))
            total_streamed += len(scenario.inserts[t])
        reads.append(store.ledger.read_rounds - r0)
        words.append(store.ledger.words_read - w0)
        q_r0 = store.ledger.read_rounds
        hits_k = []
        hits_kp = []
        for row, qid in enumerate(scenario.queries[t]):
            res = quantizer.knn_query(scenario.X[qid], kprime)
            approx = [pid for pid, _ in res]
            hits_k.append(recall_at(approx, gt[t][row], k, k))
            hits_kp.append(recall_at(approx, gt[t][row], k, kprime))
        query_reads = store.ledger.read_rounds - q_r0
        qreads.append(query_reads)
        rec_k.append(float(np.mean(hits_k)) if hits_k else np.nan)
        rec_kp.append(float(np.mean(hits_kp)) if hits_kp else np.nan)
        streamed.append(total_streamed)
    return RecallReport(
        method=name,
        k=k,
        kprime=kprime,
        recall_k=np.asarray(rec_k),
        recall_kprime=np.asarray(rec_kp),
        read_rounds=np.asarray(reads, dtype=np.int64),
        words_read=np.asarray(words, dtype=np.int64),
        query_read_rounds=np.asarray(qreads, dtype=np.int64),
        vectors_streamed=np.asarray(streamed, dtype=np.int64),
        params=dict(scenario.params),
    )


METHODS = ("codeq", "frozenpq", "rebuildpq", "onlinepq", "dedriftpq")


def build_method(method, X0, ids, M, L, seed, store=None, **kwargs):
    """Construct one quantizer by name on the initial set."""
    if store is None:
        store = DiskStore()
    if method == "codeq":
        cfg = ProductConfig(M=M, L=L, d=X0.shape[1], seed=seed)
        return ProductCodeq.build(X0, cfg, store=store, ids=ids)
    if method == "frozenpq":
        return FrozenPq.build(X0, M, L, seed, store=store, ids=ids, **kwargs)
    if method == "rebuildpq":
        return RebuildPq.build(X0, M, L, seed, store=store, ids=ids, **kwargs)
    if method == "onlinepq":
        return OnlinePq.build(X0, M, L, seed, store=store, ids=ids, **kwargs)
    if method == "dedriftpq":
        return DeDriftPq.build(X0, M, L, seed, store=store, ids=ids, **kwargs)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# -- single-update I/O cost across scales -------------------------------------


def io_cost_experiment(sizes, L_values, M=8, d=96, trials=10, seed=0, data=None, clusters=16):
    """Cost of one insert, in full-precision vectors required from disk.

    For the tree quantizer the cost of an insert is the number of queues
    whose contents change (each changed queue fetch carries one stored
    vector payload); counted by a dry-run cascade. For the re-clustering
    baseline it is the union of vector ids its criterion flags across
    blocks once the insert is assigned. Returns one row per
    (method, n, L) with mean and standard error over ``trials`` inserts.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(55,)))
    rows = []
    for n in sizes:
        n = int(n)
        if data is not None:
            if len(data) < n:
                raise ValueError(f"provided data has fewer than {n} rows")
            X = np.asarray(data[:n], dtype=float)
        else:
            X, _ = make_gaussian_mixture(n, d, clusters, seed)
        probes = rng.standard_normal((trials, X.shape[1])) + X[rng.integers(0, n, size=trials)]
        for L in L_values:
            L = int(L)
            cfg = ProductConfig(M=M, L=L, d=X.shape[1], seed=seed)
            codeq = ProductCodeq.build(X, cfg, persist=False)
            costs = np.array([codeq.count_heap_changes(p) for p in probes], dtype=float)
            rows.append(_io_row("codeq", n, L, costs))
            m = dedrift_m_for(L)
            dd = DeDriftPq.build(X, M, L, seed, store=None, m=m)
            costs = np.array([dd.count_flagged_after(p) for p in probes], dtype=float)
            rows.append(_io_row("dedriftpq", n, L, costs))
    return rows


def _io_row(method, n, L, costs):
    return {
        "method": method,
        "n": n,
        "L": L,
        "mean_cost": float(costs.mean()),
        "stderr": float(costs.std(ddof=1) / np.sqrt(len(costs))) if len(costs) > 1 else 0.0,
        "trials": len(costs),
    }
