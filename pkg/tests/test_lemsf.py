import numpy as np
import pytest

from ldsf import nn
from ldsf.asc_model import Kind, ScatteringCenter, ScatterSet
from ldsf.graph_build import build_graph, make_graph
from ldsf.lemsf import (METAPATHS, GraphBatch, LemsfConfig, _heads, aggregate_metapath,
                        graph_readout, init_lemsf, lemsf_forward, node_attention,
                        semantic_attention, set_input_stats, type_project)
from ldsf.nn import Tensor
from ldsf.nn.gradcheck import max_relative_error

L, D = Kind.LOCAL, Kind.DISTRIBUTED
SMALL = LemsfConfig(heads=2, hidden=4, semantic_dim=3)


def random_graph(rng, n, p_dist=0.4):
    cs = []
    for _ in range(n):
        x, y = rng.normal(size=2) * 2
        if rng.random() < p_dist:
            cs.append(ScatteringCenter(A=rng.random() + 0.2, alpha=float(rng.choice([-1, 0, 1])), L=rng.random() + 0.3,
                                       phi_bar=rng.normal() * 0.01, x=x, y=y, kind=D))
        else:
            cs.append(ScatteringCenter(A=rng.random() + 0.2, alpha=float(rng.choice([-0.5, 0, 0.5])),
                                       gamma=rng.normal() * 1e-10, x=x, y=y))
    return build_graph(ScatterSet(cs))


def make_store(cfg, seed=0, graphs=None):
    store = nn.ParamStore(seed)
    init_lemsf(store, cfg)
    if graphs is not None:
        set_input_stats(store, graphs)
    return store


# --- independent single-graph oracle -----------------------------------------------

def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def leaky(x):
    return np.where(x > 0, x, 0.2 * x)


def softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def oracle_forward(g, store, cfg):
    P = {k: t.data for k, t in store.items()}
    tau = [0 if t is L else 1 for t in g.node_types]
    n = len(tau)
    K, d = cfg.heads, cfg.head_dim
    H = (np.asarray(g.X) - P["lemsf/input_mean"]) * P["lemsf/input_scale"]
    for layer in range(cfg.layers):
        b = f"lemsf/l{layer}"
        Hp = np.stack([H[i] @ P[f"{b}/W_type{tau[i]}"] for i in range(n)])
        if n == 1:
            H = Hp
            continue
        present = sorted(set(tau))
        emb = {}
        for (s, t) in [(s, t) for s in present for t in present]:
            mp = f"{b}/mp{s}{t}"
            Z = (Hp @ P[f"{mp}/W_head"]).reshape(n, K, d)
            v = P[f"{mp}/v"]
            out = {}
            for i in range(n):
                if tau[i] != t:
                    continue
                nbrs = [i] + [j for j in range(n) if j != i and tau[j] == s]
                row = []
                for k in range(K):
                    e = np.array([leaky(v[k, :d] @ Z[i, k] + v[k, d:] @ Z[j, k]) for j in nbrs])
                    eta = softmax(e)
                    m = cfg.alpha_lesf * sum(eta[q] * Z[j, k] for q, j in enumerate(nbrs)) \
                        + (1 - cfg.alpha_lesf) * Z[i, k]
                    row.append(elu(m))
                out[i] = np.concatenate(row)
            emb[(s, t)] = out
        newH = np.zeros((n, cfg.hidden))
        for t in present:
            paths = [p for p in emb if p[1] == t]
            nodes = [i for i in range(n) if tau[i] == t]
            w = np.array([np.mean([P[f"{b}/sem_mu"] @ np.tanh(emb[p][i] @ P[f"{b}/sem_W"] + P[f"{b}/sem_b"])
                                   for i in nodes]) for p in paths])
            att = softmax(w)
            for i in nodes:
                newH[i] = sum((cfg.beta_lesf * att[q] + (1 - cfg.beta_lesf) / len(paths)) * emb[p][i]
                              for q, p in enumerate(paths))
        H = newH
    u = H @ P["lemsf/theta_att"][:, 0]
    z = softmax(g.A_norm @ u)
    gvec = sum((cfg.gamma_lesf * z[i] + (1 - cfg.gamma_lesf) / n) * H[i] for i in range(n))
    return gvec, z


# --- stage examples ------------------------------------------------------------------

def test_type_project_examples(rng):
    cfg = LemsfConfig(heads=1, hidden=7)
    store = make_store(cfg)
    g = make_graph([L, D, L], rng.normal(size=(3, 7)), np.zeros((3, 3)))
    batch = GraphBatch.from_graphs([g])
    H = Tensor(g.X)
    store["lemsf/l0/W_type0"].data = np.eye(7)
    store["lemsf/l0/W_type1"].data = np.eye(7)
    np.testing.assert_array_equal(type_project(batch, H, store, "lemsf/l0").data, g.X)
    store["lemsf/l0/W_type0"].data = 2 * np.eye(7)
    store["lemsf/l0/W_type1"].data = 3 * np.eye(7)
    np.testing.assert_allclose(type_project(batch, H, store, "lemsf/l0").data, g.X * np.array([[2], [3], [2]]))


def test_type_project_row_oracle(rng):
    store = make_store(LemsfConfig())
    g = random_graph(rng, 6)
    batch = GraphBatch.from_graphs([g])
    out = type_project(batch, Tensor(g.X), store, "lemsf/l0").data
    for i, t in enumerate(batch.type_id):
        np.testing.assert_allclose(out[i], g.X[i] @ store[f"lemsf/l0/W_type{t}"].data, rtol=1e-13)


def test_node_attention_equal_neighbours_third():
    store = make_store(SMALL)
    g = make_graph([L, L, L], np.ones((3, 7)), np.ones((3, 3)) - np.eye(3))
    batch = GraphBatch.from_graphs([g])
    Z = _heads(type_project(batch, Tensor(g.X), store, "lemsf/l0"), store, "lemsf/l0/mp00", SMALL)
    eta = node_attention(batch, Z, store, "lemsf/l0/mp00", (0, 0), SMALL).data
    np.testing.assert_allclose(eta, np.full((9, 2), 1 / 3), rtol=1e-14)


def test_node_attention_single_node_is_one():
    store = make_store(SMALL)
    g = make_graph([D], np.ones((1, 7)), np.zeros((1, 1)))
    batch = GraphBatch.from_graphs([g])
    Z = _heads(type_project(batch, Tensor(g.X), store, "lemsf/l0"), store, "lemsf/l0/mp11", SMALL)
    eta = node_attention(batch, Z, store, "lemsf/l0/mp11", (1, 1), SMALL).data
    np.testing.assert_array_equal(eta, [[1.0, 1.0]])


def test_node_attention_is_asymmetric_and_matches_script(rng):
    store = make_store(SMALL, seed=3)
    g = make_graph([L, L], rng.normal(size=(2, 7)), [[0, 1.0], [1.0, 0]])
    batch = GraphBatch.from_graphs([g])
    Hp = type_project(batch, Tensor(g.X), store, "lemsf/l0")
    Z = _heads(Hp, store, "lemsf/l0/mp00", SMALL)
    eta = node_attention(batch, Z, store, "lemsf/l0/mp00", (0, 0), SMALL).data
    src, dst = batch.edges[(0, 0)]
    v = store["lemsf/l0/mp00/v"].data
    Zd = Z.data
    for k in range(2):
        for i in range(2):
            j = 1 - i
            e_self = leaky(v[k, :2] @ Zd[i, k] + v[k, 2:] @ Zd[i, k])
            e_other = leaky(v[k, :2] @ Zd[i, k] + v[k, 2:] @ Zd[j, k])
            expect = softmax(np.array([e_self, e_other]))[1]
            e_idx = np.flatnonzero((src == j) & (dst == i))[0]
            assert eta[e_idx, k] == pytest.approx(expect, rel=1e-12)
    e01 = eta[np.flatnonzero((src == 0) & (dst == 1))[0]]
    e10 = eta[np.flatnonzero((src == 1) & (dst == 0))[0]]
    assert not np.allclose(e01, e10)


def test_aggregate_limits_and_loop_oracle(rng):
    g = random_graph(rng, 4, p_dist=0.0)
    batch = GraphBatch.from_graphs([g])
    for alpha in (0.0, 1.0, 0.37):
        cfg = LemsfConfig(heads=2, hidden=4, semantic_dim=3, alpha_lesf=alpha)
        store = make_store(cfg, seed=5)
        Z = _heads(type_project(batch, Tensor(g.X), store, "lemsf/l0"), store, "lemsf/l0/mp00", cfg)
        eta = node_attention(batch, Z, store, "lemsf/l0/mp00", (0, 0), cfg)
        out = aggregate_metapath(batch, Z, eta, (0, 0), cfg).data
        src, dst = batch.edges[(0, 0)]
        Zd, ed = Z.data, eta.data
        for i in range(4):
            for k in range(2):
                m = sum(alpha * ed[e, k] * Zd[src[e], k] for e in np.flatnonzero(dst == i)) + (1 - alpha) * Zd[i, k]
                np.testing.assert_allclose(out[i, 2 * k:2 * k + 2], elu(m), rtol=1e-12, atol=1e-15)
        if alpha == 0.0:
            np.testing.assert_allclose(out, elu(Zd).reshape(4, 4), rtol=1e-15)


def test_semantic_single_metapath_is_identity(rng):
    g = random_graph(rng, 4, p_dist=0.0)
    batch = GraphBatch.from_graphs([g])
    for beta in (0.0, 0.6, 1.0):
        cfg = LemsfConfig(heads=2, hidden=4, semantic_dim=3, beta_lesf=beta)
        store = make_store(cfg)
        emb = {(0, 0): Tensor(rng.normal(size=(4, 4)))}
        fused, att = semantic_attention(batch, emb, store, "lemsf/l0", cfg)
        np.testing.assert_allclose(att.data[:, 0], 1.0)
        np.testing.assert_allclose(fused.data, emb[(0, 0)].data, rtol=1e-15)


def test_semantic_identical_embeddings_split_evenly(rng):
    g = make_graph([L, D, L], rng.normal(size=(3, 7)), np.ones((3, 3)) - np.eye(3))
    batch = GraphBatch.from_graphs([g])
    store = make_store(SMALL)
    same = rng.normal(size=(3, 4))
    emb = {p: Tensor(same) for p in METAPATHS}
    _, att = semantic_attention(batch, emb, store, "lemsf/l0", SMALL)
    local_rows = att.data[[0, 2]]
    np.testing.assert_allclose(local_rows[:, [0, 2]], 0.5, rtol=1e-14)
    np.testing.assert_allclose(local_rows[:, [1, 3]], 0.0)
    np.testing.assert_allclose(att.data.sum(axis=1), 1.0, atol=1e-12)


def test_readout_examples(rng):
    store = make_store(SMALL)
    one = make_graph([L], rng.normal(size=(1, 7)), np.zeros((1, 1)))
    b1 = GraphBatch.from_graphs([one])
    h = Tensor(rng.normal(size=(1, 4)))
    gv, z = graph_readout(b1, h, store, SMALL)
    np.testing.assert_array_equal(z.data, [1.0])
    np.testing.assert_allclose(gv.data[0], h.data[0], rtol=1e-15)
    two = make_graph([L, L], rng.normal(size=(2, 7)), [[0, 0.7], [0.7, 0]])
    b2 = GraphBatch.from_graphs([two])
    row = rng.normal(size=4)
    gv, z = graph_readout(b2, Tensor(np.stack([row, row])), store, SMALL)
    np.testing.assert_allclose(z.data, [0.5, 0.5], rtol=1e-15)
    np.testing.assert_allclose(gv.data[0], row, rtol=1e-14)


def test_readout_dense_oracle(rng):
    store = make_store(SMALL, seed=2)
    g = random_graph(rng, 5)
    batch = GraphBatch.from_graphs([g])
    H = rng.normal(size=(5, 4))
    gv, z = graph_readout(batch, Tensor(H), store, SMALL)
    zz = softmax(g.A_norm @ H @ store["lemsf/theta_att"].data[:, 0])
    np.testing.assert_allclose(z.data, zz, rtol=1e-13)
    np.testing.assert_allclose(gv.data[0], ((0.8 * zz + 0.2 / 5)[:, None] * H).sum(0), rtol=1e-13)


# --- full forward --------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_forward_matches_scripted_oracle(seed):
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, int(n)) for n in rng.integers(1, 7, size=5)]
    cfg = LemsfConfig()
    store = make_store(cfg, seed=seed, graphs=graphs)
    out = lemsf_forward(GraphBatch.from_graphs(graphs), store, cfg)
    for gi, g in enumerate(graphs):
        gv, z = oracle_forward(g, store, cfg)
        np.testing.assert_allclose(out.v.data[gi], gv, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(out.z.data[out.batch.graph_id == gi], z, rtol=1e-10, atol=1e-14)


def test_single_node_output_depends_only_on_node(rng):
    cfg = LemsfConfig()
    store = make_store(cfg)
    g = random_graph(rng, 1)
    a = lemsf_forward(g, store, cfg).v.data
    b = lemsf_forward(GraphBatch.from_graphs([random_graph(rng, 4), g]), store, cfg).v.data[1]
    np.testing.assert_allclose(a[0], b, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cfg = LemsfConfig()
    g = random_graph(rng, int(rng.integers(2, 12)))
    store = make_store(cfg, seed=seed, graphs=[g])
    v = lemsf_forward(g, store, cfg).v.data
    w = lemsf_forward(g.permuted(rng.permutation(g.n)), store, cfg).v.data
    np.testing.assert_allclose(v, w, atol=1e-9, rtol=0)


def test_attention_distributions_sum_to_one(rng):
    cfg = LemsfConfig()
    graphs = [random_graph(rng, 1), random_graph(rng, 5, p_dist=0.0), random_graph(rng, 7)]
    store = make_store(cfg, graphs=graphs)
    out = lemsf_forward(GraphBatch.from_graphs(graphs), store, cfg)
    b = out.batch
    for atts, sem in zip(out.node_attention, out.semantic_attention):
        for p, eta in atts.items():
            sums = np.zeros((b.n_nodes, cfg.heads))
            np.add.at(sums, b.edges[p][1], eta.data)
            assert np.all(np.abs(sums[b.receives[p]] - 1) < 1e-12)
        assert np.all(np.abs(sem.data.sum(axis=1) - 1) < 1e-12)
    zs = np.bincount(b.graph_id, weights=out.z.data)
    assert np.all(np.abs(zs - 1) < 1e-12)


def test_pure_blend_is_bitwise_unblended(rng):
    g = random_graph(rng, 5)
    cfg = LemsfConfig(alpha_lesf=1.0, beta_lesf=1.0, gamma_lesf=1.0)
    store = make_store(cfg, graphs=[g])
    out = lemsf_forward(g, store, cfg)
    gv, _ = oracle_forward(g, store, cfg)
    np.testing.assert_allclose(out.v.data[0], gv, rtol=1e-10)


def test_every_node_receives_gradient(rng):
    cfg = LemsfConfig()
    g = random_graph(rng, 6)
    store = make_store(cfg, graphs=[g])
    X = Tensor((g.X - store["lemsf/input_mean"].data) * store["lemsf/input_scale"].data, requires_grad=True)
    out = lemsf_forward(GraphBatch.from_graphs([g]), store, cfg, features=X)
    (out.v * Tensor(rng.normal(size=out.v.shape))).sum().backward()
    assert np.all(np.abs(X.grad).sum(axis=1) > 0)


def test_forward_gradient_check(rng):
    cfg = LemsfConfig(heads=2, hidden=4, semantic_dim=3)
    graphs = [random_graph(rng, 4), random_graph(rng, 3), random_graph(rng, 1)]
    store = make_store(cfg, seed=9, graphs=graphs)
    batch = GraphBatch.from_graphs(graphs)
    w = Tensor(rng.normal(size=(3, 4)))
    wz = Tensor(rng.normal(size=batch.n_nodes))
    params = [t for _, t in store.trainable()]

    def loss():
        out = lemsf_forward(batch, store, cfg)
        return (out.v * w).sum() + (out.z * wz).sum()

    assert max_relative_error(loss, params) < 1e-4
