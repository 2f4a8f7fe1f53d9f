"""Local-EM-scattering-feature stream: heterogeneous graph attention over ASC graphs.

Graphs are processed as a batch: nodes of all graphs are stacked and every
per-graph or per-node normalization becomes a segment operation, so a whole
minibatch shares one tape.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .asc_model import Kind
from .errors import InvalidGraphError, InvalidParameterError
from .graph_build import ATTR_NAMES, NODE_TYPES, HeteroGraph
from .nn import Tensor

# ordered (source type, destination type) meta-paths
METAPATHS = tuple((a, b) for a in range(len(NODE_TYPES)) for b in range(len(NODE_TYPES)))
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LemsfConfig:
    layers: int = 2
    heads: int = 8
    hidden: int = 32
    semantic_dim: int = 128
    dropout: float = 0.1
    alpha_lesf: float = 0.8
    beta_lesf: float = 0.8
    gamma_lesf: float = 0.8
    lr: float = 0.005
    in_dim: int = len(ATTR_NAMES)

    def __post_init__(self):
        if self.hidden % self.heads:
            raise InvalidParameterError("hidden must be divisible by heads")
        for name in ("alpha_lesf", "beta_lesf", "gamma_lesf"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise InvalidParameterError(f"{name} must be in [0, 1], got {v}")
        if self.layers < 1:
            raise InvalidParameterError("at least one layer is required")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GraphBatch:
    """Disjoint union of graphs with the index arrays the forward pass needs."""

    X: np.ndarray  # (N, 7) raw attributes
    type_id: np.ndarray  # (N,)
    graph_id: np.ndarray  # (N,)
    sizes: np.ndarray  # (G,)
    # per meta-path: (src, dst) global pairs including self-pairs
    edges: dict = field(default_factory=dict)
    # per meta-path: (N,) bool, node receives this meta-path
    receives: dict = field(default_factory=dict)
    # readout pairs (row, col, weight) from the normalized adjacency
    norm_pairs: tuple = ()

    @property
    def n_nodes(self) -> int:
        return len(self.type_id)

    @property
    def n_graphs(self) -> int:
        return len(self.sizes)

    @classmethod
    def from_graphs(cls, graphs) -> GraphBatch:
        xs, tids, gids, sizes = [], [], [], []
        edges = {p: ([], []) for p in METAPATHS}
        rows, cols, weights = [], [], []
        offset = 0
        for gi, g in enumerate(graphs):
            try:
                tid = np.array([NODE_TYPES.index(Kind(t)) for t in g.node_types], dtype=np.int64)
            except ValueError as e:
                raise InvalidGraphError(f"unknown node type in graph {gi}") from e
            n = len(tid)
            xs.append(np.asarray(g.X, dtype=np.float64))
            tids.append(tid)
            gids.append(np.full(n, gi, dtype=np.int64))
            sizes.append(n)
            present = set(tid.tolist())
            for p in METAPATHS:
                src_t, dst_t = p
                if src_t not in present or dst_t not in present:
                    continue
                for i in np.flatnonzero(tid == dst_t):
                    edges[p][0].append(offset + i)
                    edges[p][1].append(offset + i)
                    for j in np.flatnonzero(tid == src_t):
                        if j != i:
                            edges[p][0].append(offset + j)
                            edges[p][1].append(offset + i)
            r, c = np.nonzero(g.A_norm)
            rows.append(r + offset)
            cols.append(c + offset)
            weights.append(g.A_norm[r, c])
            offset += n
        tid = np.concatenate(tids)
        out_edges, receives = {}, {}
        for p in METAPATHS:
            src = np.asarray(edges[p][0], dtype=np.int64)
            dst = np.asarray(edges[p][1], dtype=np.int64)
            out_edges[p] = (src, dst)
            rec = np.zeros(len(tid), dtype=bool)
            rec[dst] = True
            receives[p] = rec
        return cls(np.concatenate(xs), tid, np.concatenate(gids), np.asarray(sizes),
                   out_edges, receives,
                   (np.concatenate(rows), np.concatenate(cols), np.concatenate(weights)))


# --- parameters -------------------------------------------------------------------

def init_lemsf(store: nn.ParamStore, cfg: LemsfConfig, prefix: str = "lemsf") -> None:
    store.add(f"{prefix}/input_mean", (cfg.in_dim,), init="zeros", trainable=False)
    store.add(f"{prefix}/input_scale", (cfg.in_dim,), init="ones", trainable=False)
    d_in = cfg.in_dim
    for layer in range(cfg.layers):
        base = f"{prefix}/l{layer}"
        for t in range(len(NODE_TYPES)):
            store.add(f"{base}/W_type{t}", (d_in, cfg.hidden))
        for p in METAPATHS:
            mp = f"{base}/mp{p[0]}{p[1]}"
            store.add(f"{mp}/W_head", (cfg.hidden, cfg.hidden))
            store.add(f"{mp}/v", (cfg.heads, 2 * cfg.head_dim))
        store.add(f"{base}/sem_W", (cfg.hidden, cfg.semantic_dim))
        store.add(f"{base}/sem_b", (cfg.semantic_dim,), init="zeros")
        store.add(f"{base}/sem_mu", (cfg.semantic_dim,))
        d_in = cfg.hidden
    store.add(f"{prefix}/theta_att", (cfg.hidden, 1))


def set_input_stats(store: nn.ParamStore, graphs, prefix: str = "lemsf") -> None:
    """Standardize node attributes with statistics of ``graphs`` (the training set)."""
    X = np.concatenate([np.asarray(g.X) for g in graphs])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    store[f"{prefix}/input_mean"].data = mu
    store[f"{prefix}/input_scale"].data = np.where(sd > 0, 1.0 / np.where(sd > 0, sd, 1.0), 1.0)


# --- stages -----------------------------------------------------------------------

def type_project(batch: GraphBatch, H: Tensor, store, base: str) -> Tensor:
    """Route every node through the projection matrix of its own type."""
    out = None
    for t in range(len(NODE_TYPES)):
        sel = (batch.type_id == t).astype(np.float64)[:, None]
        if not sel.any():
            continue
        term = nn.mul(nn.matmul(H, store[f"{base}/W_type{t}"]), Tensor(sel))
        out = term if out is None else out + term
    return out


def _heads(Hp: Tensor, store, mp: str, cfg: LemsfConfig) -> Tensor:
    Z = nn.matmul(Hp, store[f"{mp}/W_head"])
    return nn.reshape(Z, (Hp.shape[0], cfg.heads, cfg.head_dim))


def node_attention(batch: GraphBatch, Z: Tensor, store, mp: str, p, cfg: LemsfConfig) -> Tensor:
    """Per-edge, per-head attention weights normalized over each destination's
    in-bucket neighbourhood (self-pair included). Shape (E, K)."""
    src, dst = batch.edges[p]
    if len(dst) == 0:
        return Tensor(np.zeros((0, cfg.heads)))
    v = store[f"{mp}/v"]
    d = cfg.head_dim
    s_dst = nn.tsum(nn.mul(Z, v[:, :d]), axis=2)
    s_src = nn.tsum(nn.mul(Z, v[:, d:]), axis=2)
    e = nn.leaky_relu(nn.gather_rows(s_dst, dst) + nn.gather_rows(s_src, src), LEAKY_SLOPE)
    return nn.segment_softmax(e, dst, batch.n_nodes)


def aggregate_metapath(batch: GraphBatch, Z: Tensor, eta: Tensor, p, cfg: LemsfConfig) -> Tensor:
    """Blend the attended neighbour sum with the node's own head features, then ELU."""
    src, dst = batch.edges[p]
    n, K, d = Z.shape
    if len(dst):
        w = nn.reshape(eta, (len(dst), K, 1))
        msg = nn.segment_sum(nn.mul(w, nn.gather_rows(Z, src)), dst, n)
        m = cfg.alpha_lesf * msg + (1.0 - cfg.alpha_lesf) * Z
    else:
        m = (1.0 - cfg.alpha_lesf) * Z
    return nn.reshape(nn.elu(m), (n, K * d))


def semantic_attention(batch: GraphBatch, embeds: dict, store, base: str, cfg: LemsfConfig):
    """Fuse per-meta-path embeddings; returns (fused (N, hidden), weights (N, P))."""
    G = batch.n_graphs
    scores, avail = [], []
    for p in METAPATHS:
        rec = batch.receives[p]
        avail.append(rec)
        if p not in embeds:
            scores.append(Tensor(np.zeros(batch.n_nodes)))
            continue
        s = nn.matmul(nn.tanh(nn.matmul(embeds[p], store[f"{base}/sem_W"]) + store[f"{base}/sem_b"]),
                      store[f"{base}/sem_mu"])
        recf = rec.astype(np.float64)
        count = np.bincount(batch.graph_id, weights=recf, minlength=G)
        inv = np.where(count > 0, 1.0 / np.maximum(count, 1.0), 0.0)
        per_graph = nn.mul(nn.segment_sum(nn.mul(s, Tensor(recf)), batch.graph_id, G), Tensor(inv))
        scores.append(nn.gather_rows(per_graph, batch.graph_id))
    avail = np.stack(avail, axis=1)
    S = nn.stack(scores, axis=1)
    att = nn.softmax(S, axis=1, mask=avail)
    n_avail = avail.sum(axis=1, keepdims=True)
    uniform = np.where(avail, 1.0 / np.maximum(n_avail, 1), 0.0)
    coef = cfg.beta_lesf * att + Tensor((1.0 - cfg.beta_lesf) * uniform)
    fused = None
    for k, p in enumerate(METAPATHS):
        if p not in embeds:
            continue
        term = nn.mul(embeds[p], nn.reshape(coef[:, k], (batch.n_nodes, 1)))
        fused = term if fused is None else fused + term
    return fused, att


def graph_readout(batch: GraphBatch, H: Tensor, store, cfg: LemsfConfig, prefix: str = "lemsf"):
    """Attention readout; returns (graph vectors (G, hidden), node scores (N,))."""
    rows, cols, w = batch.norm_pairs
    u = nn.matmul(H, store[f"{prefix}/theta_att"])
    z_raw = nn.segment_sum(nn.mul(nn.gather_rows(u, cols), Tensor(w[:, None])), rows, batch.n_nodes)
    z = nn.segment_softmax(z_raw, batch.graph_id, batch.n_graphs)
    inv_size = (1.0 / batch.sizes)[batch.graph_id][:, None]
    coef = cfg.gamma_lesf * z + Tensor((1.0 - cfg.gamma_lesf) * inv_size)
    g = nn.segment_sum(nn.mul(H, coef), batch.graph_id, batch.n_graphs)
    return g, nn.reshape(z, (batch.n_nodes,))


@dataclass
class LemsfOutput:
    v: Tensor  # (G, hidden)
    z: Tensor  # (N,)
    batch: GraphBatch
    node_attention: list = field(default_factory=list)  # per layer: {p: (E, K) weights}
    semantic_attention: list = field(default_factory=list)  # per layer: (N, P)


def lemsf_forward(batch: GraphBatch, store, cfg: LemsfConfig, training: bool = False,
                  rng: np.random.Generator | None = None, prefix: str = "lemsf",
                  features: Tensor | None = None) -> LemsfOutput:
    """``features`` overrides the standardized node attributes (for input gradients)."""
    if isinstance(batch, HeteroGraph):
        batch = GraphBatch.from_graphs([batch])
    if features is None:
        X = (batch.X - store[f"{prefix}/input_mean"].data) * store[f"{prefix}/input_scale"].data
        features = Tensor(X)
    H = features
    single = (batch.sizes[batch.graph_id] == 1).astype(np.float64)[:, None]
    out = LemsfOutput(None, None, batch)
    for layer in range(cfg.layers):
        base = f"{prefix}/l{layer}"
        Hp = type_project(batch, H, store, base)
        embeds, atts = {}, {}
        for p in METAPATHS:
            if not batch.receives[p].any():
                continue
            mp = f"{base}/mp{p[0]}{p[1]}"
            Z = _heads(Hp, store, mp, cfg)
            eta = node_attention(batch, Z, store, mp, p, cfg)
            atts[p] = eta
            embeds[p] = aggregate_metapath(batch, Z, eta, p, cfg)
        fused, sem = semantic_attention(batch, embeds, store, base, cfg)
        # a lone node has no meta-path instances and keeps its projected features
        H = nn.mul(fused, Tensor(1.0 - single)) + nn.mul(Hp, Tensor(single)) if single.any() else fused
        if layer == 0 and training:
            H = nn.dropout(H, cfg.dropout, True, rng)
        out.node_attention.append(atts)
        out.semantic_attention.append(sem)
    out.v, out.z = graph_readout(batch, H, store, cfg, prefix)
    return out
