"""Acceptance gate: one test per numbered criterion, stated tolerances only.

Heavy shared runs (the heap op battery, the consistency battery, the two
streaming experiments) live in module-scoped fixtures; each criterion
asserts its own slice and prints one pass line (visible with ``-s``).
"""

import time
from bisect import insort

import numpy as np
import pytest

from streamquant import dataio
from streamquant.baselines import FrozenPq, PqIndex, dedrift_m_for
from streamquant.heap import HeapPq
from streamquant.kdq import rotate_rows
from streamquant.product import ProductCodeq, ProductConfig, adc_tables
from streamquant.quadsketch import QuadSketch, scale_to_grid
from streamquant.store import DiskStore
from streamquant.stream import (
    construct_stream,
    ground_truth,
    io_cost_experiment,
    make_gaussian_mixture,
    recall_at,
    run_scenario,
    scenario_ground_truth,
)


def _pass(n, detail):
    print(f"\ncriterion {n}: PASS - {detail}")


# -- criteria 1 + 2: heap oracle equivalence and I/O bounds ----------------------


@pytest.fixture(scope="module")
def heap_battery():
    rng = np.random.default_rng(20240001)
    store = DiskStore()
    n0 = 2048
    values = rng.standard_normal(n0)
    pq = HeapPq.build(store, [(i, float(v)) for i, v in enumerate(values)])
    oracle = []  # sorted (value, id)
    for i, v in enumerate(values):
        insort(oracle, (float(v), i))
    live = list(range(n0))
    next_id = n0
    io_records = []
    mismatches = 0
    t0 = time.perf_counter()
    for step in range(10_000):
        n_pre = len(pq)
        can_insert = n_pre < 4096
        op = int(rng.integers(0, 3))
        if (op == 0 and can_insert) or not live:
            v = float(rng.standard_normal())
            report = pq.insert(next_id, v)
            insort(oracle, (v, next_id))
            live.append(next_id)
            next_id += 1
            kind = "insert"
        elif op == 1 or not can_insert:
            victim = live.pop(int(rng.integers(0, len(live))))
            report = pq.delete(victim)
            vv = next(val for val, i in oracle if i == victim)
            oracle.remove((vv, victim))
            kind = "delete"
        else:
            victim = live.pop(int(rng.integers(0, len(live))))
            v = float(rng.standard_normal())
            report = pq.replace(victim, (next_id, v))
            vv = next(val for val, i in oracle if i == victim)
            oracle.remove((vv, victim))
            insort(oracle, (v, next_id))
            live.append(next_id)
            next_id += 1
            kind = "replace"
        expect = (oracle[-1][0], oracle[-1][1]) if oracle else None
        if pq.peek() != expect:
            mismatches += 1
        io_records.append((kind, n_pre, report))
    elapsed = time.perf_counter() - t0
    return {"mismatches": mismatches, "elapsed": elapsed, "io": io_records, "ops": 10_000}


def test_criterion_01_heap_oracle_equivalence(heap_battery):
    assert heap_battery["mismatches"] == 0
    assert heap_battery["elapsed"] < 30.0
    _pass(1, f"{heap_battery['ops']} mixed ops, 0 peek mismatches, "
             f"{heap_battery['elapsed']:.1f}s < 30s")


def test_criterion_02_heap_io_bounds(heap_battery):
    worst_r3 = 0
    for kind, n_pre, report in heap_battery["io"]:
        assert report.read_rounds <= 3, (kind, report)
        assert report.write_rounds <= 1, (kind, report)
        if kind in ("delete", "replace"):
            assert report.read_rounds == 3
            height = max(1, int(n_pre).bit_length())
            r3 = report.read_addr_counts[2]
            assert r3 <= 2 * height - 1 + 1, (kind, n_pre, report.read_addr_counts)
            worst_r3 = max(worst_r3, r3 - (2 * height - 1 + 1))
    _pass(2, f"all {heap_battery['ops']} windows: reads<=3, writes<=1, "
             f"round-3 set within 2*height-1+1")


# -- criteria 3 + 4: tree quantizer consistency and stability --------------------


class _RotatedShadow:
    """Test-side mirror of one block's rotated coordinates, for verifying
    that every reassigned point really was its side's boundary extremum."""

    def __init__(self, block):
        self.block = block
        self.rows: dict[int, int] = {}
        self.mat = np.zeros((64, block.d_b))
        self.n = 0

    def add(self, pid, x):
        if self.n >= len(self.mat):
            self.mat = np.vstack([self.mat, np.zeros_like(self.mat)])
        self.mat[self.n] = self.block.rotate(np.asarray(x, dtype=float)[self.block.dims])
        self.rows[pid] = self.n
        self.n += 1

    def snapshot(self):
        enc = self.block.encodings
        pids = np.fromiter(enc.keys(), dtype=np.int64, count=len(enc))
        leaves = np.fromiter(enc.values(), dtype=np.int64, count=len(enc))
        rows = np.fromiter((self.rows[int(p)] for p in pids), dtype=np.int64, count=len(pids))
        return pids, leaves, rows

    def check_move(self, mv, L, snap):
        pids, leaves, rows = snap
        level = mv.from_child.bit_length() - 1
        coord = int(self.block.coords[level - 1])
        mask = ((leaves + (1 << L)) >> (L - level)) == mv.from_child
        sel_p, sel_r = pids[mask], rows[mask]
        vals = self.mat[sel_r, coord]
        order = np.lexsort((sel_p, vals))
        best = sel_p[order[-1]] if mv.from_child % 2 == 0 else sel_p[order[0]]
        return int(best) == mv.pid


@pytest.fixture(scope="module")
def consistency_battery():
    t0 = time.perf_counter()
    results = []
    for trial in range(50):
        rng = np.random.default_rng(31_000 + trial)
        while True:
            d = int(rng.choice([4, 16]))
            M = int(rng.choice([1, 2]))
            L = int(rng.choice([2, 4]))
            if L <= d // M:
                break
        n = int(rng.integers(64, 2049))
        seed = int(rng.integers(0, 2**31))
        vectors = {i: rng.standard_normal(d) for i in range(n)}
        ids = np.arange(n)
        cfg = ProductConfig(M=M, L=L, d=d, seed=seed)
        pq = ProductCodeq.build(np.array([vectors[i] for i in range(n)]), cfg,
                                store=DiskStore(), ids=ids)
        shadows = [_RotatedShadow(b) for b in pq.blocks]
        for i in range(n):
            for sh in shadows:
                sh.add(i, vectors[i])
        stability_violations = 0
        non_extreme_moves = 0
        for _ in range(200):
            live = sorted(vectors)
            snaps = [sh.snapshot() for sh in shadows]
            grow = rng.random() < 0.5 or len(live) <= (1 << L) + 4
            if grow:
                x = rng.standard_normal(d)
                pid = pq.insert(x)
            else:
                victim = live[int(rng.integers(0, len(live)))]
                pq.delete(victim)
            rep = pq.last_update_report
            # independent per-node set diff: <=1 addition and <=1 removal
            for j in range(M):
                pre_p, pre_l, _ = snaps[j]
                pre_map = dict(zip(pre_p.tolist(), pre_l.tolist()))
                enc = pq.blocks[j].encodings
                changed = {pid} if grow else {victim}
                changed |= {mv.pid for mv in rep.moved if mv.block == j}
                adds, rems = {}, {}
                for p in changed:
                    old_leaf = pre_map.get(p)
                    new_leaf = enc.get(p)
                    olds = {(old_leaf + (1 << L)) >> k for k in range(L + 1)} if old_leaf is not None else set()
                    news = {(new_leaf + (1 << L)) >> k for k in range(L + 1)} if new_leaf is not None else set()
                    for nid in olds - news:
                        rems[nid] = rems.get(nid, 0) + 1
                    for nid in news - olds:
                        adds[nid] = adds.get(nid, 0) + 1
                if any(c > 1 for c in adds.values()) or any(c > 1 for c in rems.values()):
                    stability_violations += 1
            for mv in rep.moved:
                if not shadows[mv.block].check_move(mv, L, snaps[mv.block]):
                    non_extreme_moves += 1
            if grow:
                vectors[pid] = x
                for sh in shadows:
                    sh.add(pid, x)
            else:
                del vectors[victim]
        live = sorted(vectors)
        fresh = ProductCodeq.build(np.array([vectors[i] for i in live]), cfg,
                                   store=DiskStore(), ids=np.asarray(live))
        enc_equal = all(pq.codes_of(p) == fresh.codes_of(p) for p in live)
        sums_ok = all(
            np.allclose(pq.blocks[j].sums, fresh.blocks[j].sums, rtol=1e-5, atol=1e-8)
            for j in range(M)
        )
        results.append({
            "trial": trial, "n": n, "d": d, "M": M, "L": L,
            "enc_equal": enc_equal, "sums_ok": sums_ok,
            "stability_violations": stability_violations,
            "non_extreme_moves": non_extreme_moves,
        })
    return {"results": results, "elapsed": time.perf_counter() - t0}


def test_criterion_03_dynamic_consistency(consistency_battery):
    bad = [r for r in consistency_battery["results"] if not (r["enc_equal"] and r["sums_ok"])]
    assert not bad, bad
    assert consistency_battery["elapsed"] < 300.0
    _pass(3, f"50 seeds x 200 updates: encodings exact, sums within 1e-5 rel "
             f"({consistency_battery['elapsed']:.0f}s < 300s)")


def test_criterion_04_stability(consistency_battery):
    v = sum(r["stability_violations"] for r in consistency_battery["results"])
    m = sum(r["non_extreme_moves"] for r in consistency_battery["results"])
    assert v == 0
    assert m == 0
    _pass(4, "per-node changes <= 1 add and 1 remove; every reassigned point "
             "was its side's boundary extremum (0 violations)")


# -- criterion 5: quadsketch rebuild identity and exact I/O --------------------


def test_criterion_05_quadsketch_consistency():
    t0 = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(51_000 + seed)
        d = int(rng.integers(2, 5))
        n0 = int(rng.integers(8, 33))
        pool = rng.standard_normal((64, d))
        X, phi = scale_to_grid(pool)
        store = DiskStore()
        qs = QuadSketch.build(X[:n0], eps=0.5, delta=0.2, phi=phi, seed=seed, store=store)
        vectors = {i: X[i] for i in range(n0)}
        nxt = n0
        for _ in range(16):
            live = sorted(vectors)
            if (rng.random() < 0.5 and nxt < 64) or len(live) <= 2:
                pid = qs.insert(X[nxt], point_id=nxt)
                vectors[pid] = X[nxt]
                nxt += 1
            else:
                victim = live[int(rng.integers(0, len(live)))]
                qs.delete(victim)
                del vectors[victim]
            rep = store.ledger.per_update_history[-1]
            assert rep.read_rounds == 1 and rep.write_rounds == 1, rep
            ids = np.asarray(sorted(vectors))
            fresh = QuadSketch.build(X[ids], eps=0.5, delta=0.2, phi=phi,
                                     seed=seed, store=DiskStore(), ids=ids)
            assert qs.to_dict() == fresh.to_dict(), f"seed {seed}: tree diverged"
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _pass(5, f"20 seeds, node-identical after every update, exactly 1 read + "
             f"1 write per update ({elapsed:.0f}s < 120s)")


# -- criterion 6: quadsketch statistical accuracy ----------------------------------


def test_criterion_06_quadsketch_accuracy():
    rng = np.random.default_rng(61_000)
    Xr = rng.standard_normal((500, 8))
    Qr = rng.standard_normal((1000, 8))
    X, Q, phi = scale_to_grid(Xr, Qr)
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=6, store=DiskStore())
    truth = ground_truth(X, np.arange(500), Q, 1)
    ok = 0
    for row, q in enumerate(Q):
        got = qs.query(q)
        opt = np.linalg.norm(q - X[truth[row, 0]])
        if np.linalg.norm(q - X[got]) <= 1.5 * opt + 1e-12:
            ok += 1
    frac = ok / len(Q)
    floor = 0.90 - 3.0 * np.sqrt(0.9 * 0.1 / len(Q))
    assert frac >= floor, (frac, floor)
    _pass(6, f"fraction within 1.5x optimal = {frac:.3f} >= {floor:.4f} "
             f"(n=500, d=8, eps=0.5, delta=0.1, 1000 queries)")


# -- criteria 8 + 9 (+7): streaming experiments ---------------------------------


@pytest.fixture(scope="module")
def freshness_experiment():
    t0 = time.perf_counter()
    T, M, L, k = 20, 8, 12, 10
    deficits = {0.0: [], 0.1: [], 1.0: []}
    for seed in range(5):
        X, _ = make_gaussian_mixture(100_000, 96, 12, seed=80_000 + seed, center_scale=6.0)
        scens = {a: construct_stream(X, c=10, n0=5000, f_q=0.1, tau=40,
                                     alpha=a, f_d=0.0, seed=seed)
                 for a in deficits}
        sc = scens[1.0]
        X0_ids = sc.initial_ids
        live_T = sc.live_after(T)
        frozen = FrozenPq.build(X[X0_ids], M, L, seed=seed, store=DiskStore(), ids=X0_ids)
        rebuild_T = PqIndex.build(X[live_T], M, L, seed=seed, store=DiskStore(), ids=live_T)
        live = set(int(i) for i in X0_ids)
        for t in range(1, T + 1):
            live |= set(int(i) for i in sc.inserts[t])
        ids_f = np.asarray(sorted(live), dtype=np.int64)
        fcodes = frozen.encode(X[ids_f]).astype(np.uint32)
        rcodes = rebuild_T.encode(X[live_T]).astype(np.uint32)
        d_b = 96 // M
        for alpha in deficits:
            qids = scens[alpha].queries[T]
            truth = ground_truth(X, live_T, X[qids], k)
            rec = {}
            for name, (cb, codes, ids) in {
                "frozen": (frozen.codebooks, fcodes, ids_f),
                "rebuild": (rebuild_T.codebooks, rcodes, live_T),
            }.items():
                hits = []
                for row, qid in enumerate(qids):
                    tabs = adc_tables(cb, X[qid], d_b)
                    dist2 = np.zeros(len(ids))
                    for j in range(M):
                        dist2 += tabs[j, codes[:, j]]
                    order = np.lexsort((ids, dist2))[:k]
                    hits.append(recall_at(ids[order], truth[row], k))
                rec[name] = float(np.mean(hits))
            deficits[alpha].append(rec["rebuild"] - rec["frozen"])
    return {"deficits": deficits, "elapsed": time.perf_counter() - t0}


def test_criterion_08_freshness_gap_grows_with_alpha(freshness_experiment):
    med = {a: float(np.median(v)) for a, v in freshness_experiment["deficits"].items()}
    assert med[0.0] < med[0.1] < med[1.0], med
    assert freshness_experiment["elapsed"] < 1200.0
    _pass(8, f"median frozen-vs-rebuild deficit strictly increasing in alpha: "
             f"{med[0.0]:.3f} < {med[0.1]:.3f} < {med[1.0]:.3f} "
             f"({freshness_experiment['elapsed']:.0f}s < 1200s)")


@pytest.fixture(scope="module")
def streaming_trend():
    t0 = time.perf_counter()
    rows = {"codeq": [], "frozenpq": []}
    query_reads = 0
    for seed in range(5):
        X, _ = make_gaussian_mixture(100_000, 16, 30, seed=90_000 + seed,
                                     center_scale=4.0, within_rank=2, arrangement="walk")
        sc = construct_stream(X, c=30, n0=10_000, f_q=0.65, tau=2,
                              alpha=1.0, f_d=1.0, seed=seed)
        gt = scenario_ground_truth(sc, 10)
        for method in ("codeq", "frozenpq"):
            if method == "codeq":
                quant = ProductCodeq.build(
                    X[sc.initial_ids], ProductConfig(M=2, L=5, d=16, seed=seed),
                    store=DiskStore(), ids=sc.initial_ids,
                )
            else:
                quant = FrozenPq.build(X[sc.initial_ids], 2, 5, seed=seed,
                                       store=DiskStore(), ids=sc.initial_ids)
            rep = run_scenario(quant, sc, k=10, gt=gt, method=method)
            query_reads += int(rep.query_read_rounds.sum())
            med = rep.rolling_median(5)
            third = rep.steps // 3
            rows[method].append((float(np.nanmedian(med[:third])),
                                 float(np.nanmedian(med[-third:]))))
        print(f"  [trend seed {seed}] codeq {rows['codeq'][-1]} "
              f"frozen {rows['frozenpq'][-1]} ({time.perf_counter()-t0:.0f}s)", flush=True)
    return {"rows": rows, "query_reads": query_reads, "elapsed": time.perf_counter() - t0}


def test_criterion_09_streaming_recall_trend(streaming_trend):
    codeq = np.array(streaming_trend["rows"]["codeq"])
    frozen = np.array(streaming_trend["rows"]["frozenpq"])
    codeq_first, codeq_last = np.median(codeq[:, 0]), np.median(codeq[:, 1])
    frozen_first, frozen_last = np.median(frozen[:, 0]), np.median(frozen[:, 1])
    assert codeq_last >= codeq_first - 0.03, (codeq_first, codeq_last)
    assert frozen_last < frozen_first - 0.03, (frozen_first, frozen_last)
    _pass(9, f"codeq rolling-median recall {codeq_first:.3f}->{codeq_last:.3f} "
             f"(within -0.03); frozen {frozen_first:.3f}->{frozen_last:.3f} "
             f"(decayed > 0.03); medians over 5 seeds, "
             f"{streaming_trend['elapsed']/60:.0f} min")


def test_criterion_07_queries_do_no_io(streaming_trend):
    assert streaming_trend["query_reads"] == 0
    # direct check on a small index as well
    store = DiskStore()
    X = np.random.default_rng(7).standard_normal((200, 8))
    pq = ProductCodeq.build(X, ProductConfig(M=2, L=3, d=8, seed=1), store=store)
    before = store.ledger.read_rounds
    for q in np.random.default_rng(8).standard_normal((100, 8)):
        pq.knn_query(q, 10)
    assert store.ledger.read_rounds == before
    _pass(7, "zero read rounds attributed to in-memory queries across all "
             "recall runs and a direct 100-query check")


# -- criterion 10: I/O scaling --------------------------------------------------


def test_criterion_10_io_scaling():
    rows = io_cost_experiment([1_000, 10_000, 100_000], [4, 6], M=8, d=96,
                              trials=10, seed=3)
    assert all(r["trials"] == 10 for r in rows)
    assert all("stderr" in r for r in rows)
    by = {(r["method"], r["n"], r["L"]): r["mean_cost"] for r in rows}
    gaps, growths = {}, {}
    for L in (4, 6):
        assert dedrift_m_for(L) == {4: 1, 6: 2}[L]
        gaps[L] = by[("dedriftpq", 100_000, L)] / by[("codeq", 100_000, L)]
        growths[L] = by[("codeq", 100_000, L)] / by[("codeq", 1_000, L)]
        assert gaps[L] >= 10.0, (L, gaps[L])
        assert growths[L] <= 4.0 * np.log10(100.0) ** 2, (L, growths[L])
    _pass(10, f"at n=1e5 re-clustering costs {gaps[4]:.0f}x (L=4) / {gaps[6]:.0f}x (L=6) "
              f"the tree quantizer; tree cost growth 1e3->1e5 = "
              f"{growths[4]:.2f}x / {growths[6]:.2f}x <= 16")


# -- criterion 11: ADC correctness ------------------------------------------------


def test_criterion_11_adc_equals_reconstruction():
    rng = np.random.default_rng(110_000)
    X = rng.standard_normal((400, 16))
    pq = ProductCodeq.build(X, ProductConfig(M=4, L=3, d=16, seed=5), store=DiskStore())
    checked = 0
    while checked < 1000:
        q = rng.standard_normal(16)
        res = pq.knn_query(q, 25)
        for pid, dist in res:
            direct = float(np.linalg.norm(q - pq.decompress(pid)))
            assert abs(dist - direct) <= 1e-6 * max(direct, 1e-9), (pid, dist, direct)
            checked += 1
            if checked >= 1000:
                break
    _pass(11, "table distances equal decompress-and-norm within 1e-6 relative "
              "on 1000 query/point pairs")


# -- criterion 12: format fidelity -------------------------------------------------


def test_criterion_12_vector_file_roundtrips(tmp_path):
    rng = np.random.default_rng(120_000)
    for trial in range(10):
        n, d = int(rng.integers(1, 40)), int(rng.integers(1, 24))
        fv = (tmp_path / f"a{trial}.fvecs")
        A = rng.standard_normal((n, d)).astype("<f4")
        dataio.fvecs_write(fv, A)
        assert dataio.fvecs_read(fv).tobytes() == A.tobytes()
        bv = (tmp_path / f"b{trial}.bvecs")
        B = rng.integers(0, 256, size=(n, d)).astype(np.uint8)
        dataio.bvecs_write(bv, B)
        assert dataio.bvecs_read(bv).tobytes() == B.tobytes()
    _pass(12, "fvecs and bvecs write-then-read byte-identical on 10 random files each")
