import numpy as np
import pytest

from streamquant.quadsketch import GridParams, QuadSketch, scale_to_grid
from streamquant.store import DiskStore
from streamquant.stream import ground_truth


def random_instance(seed, n, d):
    rng = np.random.default_rng(seed)
    Xr = rng.standard_normal((n, d))
    X, phi = scale_to_grid(Xr)
    return X, phi


def test_grid_params_validation():
    with pytest.raises(ValueError):
        GridParams.create(eps=0.0, delta=0.1, phi=8, d=2, seed=0)
    with pytest.raises(ValueError):
        GridParams.create(eps=0.5, delta=1.5, phi=8, d=2, seed=0)
    with pytest.raises(ValueError):
        GridParams.create(eps=0.5, delta=0.1, phi=1.0, d=2, seed=0)
    p = GridParams.create(eps=0.5, delta=0.1, phi=32, d=4, seed=0)
    assert p.depth == int(np.ceil(np.log2(32))) + p.lam


@pytest.mark.parametrize("phi_exp", [2, 40])
def test_build_single_point_path(phi_exp):
    X = np.array([[1.0, -0.5, 0.25]])
    phi = float(2**phi_exp)
    qs = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=1, store=DiskStore())
    assert len(qs) == 1
    d = qs.to_dict()
    # walk down: exactly one hop chain to the leaf, compressed iff long enough
    node, hops, saw_long = d, 0, False
    while "pid" not in node:
        assert ("children" in node) ^ ("long" in node)
        if "long" in node:
            saw_long = True
            hops += node["long"]["removed"] + 1
            node = node["long"]["child"]
        else:
            (node,) = node["children"].values()
            hops += 1
    assert hops == qs.params.depth
    assert saw_long == (qs.params.depth >= 2 * qs.params.lam + 1)
    qs.check_invariants()


def test_branching_level_matches_bit_grid():
    X, phi = random_instance(3, 2, 2)
    qs = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=2, store=DiskStore())
    la, lb = qs.params.labels(X[0]), qs.params.labels(X[1])
    split = int(np.flatnonzero(la != lb)[0])
    node = qs.root
    while node.degree() == 1 and node.pid is None:
        node = node.only_child()
    assert node.level == split
    assert len(node.children) == 2


def test_rebuild_same_seed_node_identical():
    X, phi = random_instance(4, 30, 4)
    a = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=5, store=DiskStore())
    b = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=5, store=DiskStore())
    assert a.to_dict() == b.to_dict()


def test_coincident_points_rejected():
    X = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 5.0]])
    with pytest.raises(ValueError):
        QuadSketch.build(X, eps=0.5, delta=0.2, phi=8.0, seed=0, store=DiskStore())


@pytest.mark.parametrize("seed", range(6))
def test_insert_matches_fresh_build(seed):
    rng = np.random.default_rng(100 + seed)
    Xr = rng.standard_normal((48, 4))
    X, phi = scale_to_grid(Xr)
    base, extra = X[:32], X[32:]
    store = DiskStore()
    qs = QuadSketch.build(base, eps=0.5, delta=0.2, phi=phi, seed=seed, store=store)
    vectors = {i: base[i] for i in range(32)}
    for i, x in enumerate(extra):
        pid = qs.insert(x, point_id=32 + i)
        vectors[pid] = x
        rep = store.ledger.per_update_history[-1]
        assert rep.read_rounds == 1 and rep.write_rounds == 1
        ids = np.asarray(sorted(vectors))
        fresh = QuadSketch.build(
            np.array([vectors[j] for j in ids]), eps=0.5, delta=0.2,
            phi=phi, seed=seed, store=DiskStore(), ids=ids,
        )
        assert qs.to_dict() == fresh.to_dict()
        qs.check_invariants()


def test_delete_matches_fresh_build_and_involution():
    rng = np.random.default_rng(42)
    Xr = rng.standard_normal((40, 3))
    X, phi = scale_to_grid(Xr)
    store = DiskStore()
    qs = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=7, store=store)
    before = qs.to_dict()
    pid = qs.insert(np.zeros(3), point_id=99)
    qs.delete(pid)
    assert qs.to_dict() == before
    vectors = {i: X[i] for i in range(40)}
    for victim in [5, 17, 0, 39, 21]:
        qs.delete(victim)
        del vectors[victim]
        rep = store.ledger.per_update_history[-1]
        assert rep.read_rounds == 1 and rep.write_rounds == 1
        ids = np.asarray(sorted(vectors))
        fresh = QuadSketch.build(
            np.array([vectors[j] for j in ids]), eps=0.5, delta=0.2,
            phi=phi, seed=7, store=DiskStore(), ids=ids,
        )
        assert qs.to_dict() == fresh.to_dict()


def test_delete_last_point_empties_tree():
    X, phi = random_instance(8, 1, 2)
    store = DiskStore()
    qs = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=1, store=store)
    qs.delete(0)
    assert len(qs) == 0 and qs.to_dict() == {}
    # empty-tree edges: nothing to fetch, still one write each
    rep = store.ledger.per_update_history[-1]
    assert rep.read_rounds == 0 and rep.write_rounds == 1
    qs.insert(X[0], point_id=3)
    rep = store.ledger.per_update_history[-1]
    assert rep.read_rounds == 0 and rep.write_rounds == 1
    assert qs.query(X[0]) == 3


def test_random_update_stream_matches_rebuild():
    rng = np.random.default_rng(9)
    Xr = rng.standard_normal((64, 4))
    X, phi = scale_to_grid(Xr)
    store = DiskStore()
    qs = QuadSketch.build(X[:40], eps=0.5, delta=0.2, phi=phi, seed=11, store=store)
    vectors = {i: X[i] for i in range(40)}
    nxt = 40
    for _ in range(40):
        live = sorted(vectors)
        if (rng.random() < 0.5 and nxt < 64) or len(live) < 3:
            pid = qs.insert(X[nxt], point_id=nxt)
            vectors[pid] = X[nxt]
            nxt += 1
        else:
            victim = live[int(rng.integers(0, len(live)))]
            qs.delete(victim)
            del vectors[victim]
    ids = np.asarray(sorted(vectors))
    fresh = QuadSketch.build(
        np.array([vectors[j] for j in ids]), eps=0.5, delta=0.2,
        phi=phi, seed=11, store=DiskStore(), ids=ids,
    )
    assert qs.to_dict() == fresh.to_dict()


def test_query_stored_point_returns_it():
    X, phi = random_instance(10, 40, 4)
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=2, store=DiskStore())
    for i in range(40):
        assert qs.query(X[i]) == i


def test_query_well_separated_clusters():
    rng = np.random.default_rng(11)
    centers = np.array([[0.0, 0.0], [50.0, 50.0], [-50.0, 40.0]])
    Xr = np.vstack([c + 0.5 * rng.standard_normal((20, 2)) for c in centers])
    X, phi = scale_to_grid(Xr)
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=4, store=DiskStore())
    scale = np.linalg.norm(X[0]) / np.linalg.norm(Xr[0])
    for c_idx, c in enumerate(centers):
        q = (c + 0.1 * rng.standard_normal(2)) * scale
        got = qs.query(q)
        assert c_idx * 20 <= got < (c_idx + 1) * 20


def test_queries_do_no_io():
    X, phi = random_instance(12, 30, 3)
    store = DiskStore()
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=6, store=store)
    before = store.ledger.totals()
    for i in range(30):
        qs.query(X[i] * 0.99)
    assert store.ledger.totals() == before


def test_memory_bound_sane():
    X, phi = random_instance(13, 60, 4)
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=8, store=DiskStore())
    n, d, lam = 60, 4, qs.params.lam
    assert qs.bit_size() <= 8 * (n * d * lam + n * np.log2(n))


def test_out_of_bounds_insert_rejected():
    X, phi = random_instance(14, 8, 2)
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=1, store=DiskStore())
    with pytest.raises(ValueError):
        qs.insert(np.full(2, phi * 3))


def test_jl_projection_flag():
    rng = np.random.default_rng(16)
    X = rng.standard_normal((30, 24)) * 3
    phi = float(np.abs(X).max()) * 4 + 8
    store = DiskStore()
    qs = QuadSketch.build(X, eps=0.5, delta=0.2, phi=phi, seed=4, store=store, jl_dim=6)
    assert qs.params.d == 6
    assert qs.projection.shape == (6, 24)
    assert qs.query(X[7]) == 7
    qs.insert(X[0] + 0.01, point_id=99)
    rep = store.ledger.per_update_history[-1]
    assert (rep.read_rounds, rep.write_rounds) == (1, 1)
    qs.delete(99)
    qs.check_invariants()


def test_accuracy_small_statistical():
    # smaller cousin of the acceptance check: most answers near-optimal
    rng = np.random.default_rng(15)
    Xr = rng.standard_normal((200, 4))
    Qr = rng.standard_normal((200, 4))
    X, Q, phi = scale_to_grid(Xr, Qr)
    qs = QuadSketch.build(X, eps=0.5, delta=0.1, phi=phi, seed=3, store=DiskStore())
    truth = ground_truth(X, np.arange(200), Q, 1)
    ok = 0
    for row, q in enumerate(Q):
        got = qs.query(q)
        opt = np.linalg.norm(q - X[truth[row, 0]])
        if np.linalg.norm(q - X[got]) <= 1.5 * opt + 1e-9:
            ok += 1
    assert ok / len(Q) >= 0.85
