"""Low-rank bilinear fusion of the two streams, the classifier, and the training losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import DimensionError, InvalidInputError, InvalidParameterError
from .nn import Tensor

FUSION_MODES = ("subnet", "concat", "max", "min", "mean")


@dataclass(frozen=True)
class FusionConfig:
    rank: int = 64  # d
    fused_dim: int = 32  # c
    mode: str = "subnet"

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise InvalidParameterError(f"unknown fusion mode {self.mode!r}")
        if self.rank < 1 or self.fused_dim < 1:
            raise InvalidParameterError("rank and fused_dim must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossConfig:
    lambda_g: float = 0.1

    def __post_init__(self):
        if self.lambda_g < 0:
            raise InvalidParameterError("lambda_g must be non-negative")


# --- reference forms -----------------------------------------------------------------

def _vec(v, n=None, what="vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or (n is not None and a.shape[0] != n):
        raise DimensionError(f"{what} has shape {a.shape}, expected ({n},)")
    return a


def bilinear_reference(vL, vG, W, b: float = 0.0) -> float:
    """Full bilinear form vL^T W vG + b."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise DimensionError("W must be a matrix")
    vL = _vec(vL, W.shape[0], "vL")
    vG = _vec(vG, W.shape[1], "vG")
    return float(vL @ W @ vG + b)


def low_rank_reference(vL, vG, U, V, b: float = 0.0) -> float:
    """Factored form (U^T vL) . (V^T vG) + b, equal to the bilinear form with W = U V^T."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise DimensionError(f"factor shapes {U.shape} and {V.shape} do not share a rank")
    vL = _vec(vL, U.shape[0], "vL")
    vG = _vec(vG, V.shape[0], "vG")
    return float(np.dot(U.T @ vL, V.T @ vG) + b)


def low_rank_param_count(d: int, c: int, N: int, M: int) -> int:
    return d * (N + M) + d * c + c


def full_bilinear_param_count(c: int, N: int, M: int) -> int:
    return c * (N * M + 1)


# --- production path ---------------------------------------------------------------------

def fused_dim(cfg: FusionConfig, N: int, M: int) -> int:
    if cfg.mode == "subnet":
        return cfg.fused_dim
    if cfg.mode == "concat":
        return N + M
    if N != M:
        raise DimensionError(f"element-wise fusion needs equal widths, got {N} and {M}")
    return N


def init_fusion(store: nn.ParamStore, cfg: FusionConfig, N: int, M: int, n_classes: int,
                prefix: str = "fusion") -> None:
    if cfg.mode == "subnet":
        store.add(f"{prefix}/U", (N, cfg.rank))
        store.add(f"{prefix}/V", (M, cfg.rank))
        store.add(f"{prefix}/P", (cfg.rank, cfg.fused_dim))
        store.add(f"{prefix}/b", (cfg.fused_dim,), init="zeros")
    c = fused_dim(cfg, N, M)
    store.add(f"{prefix}/cls_W", (c, n_classes))
    store.add(f"{prefix}/cls_b", (n_classes,), init="zeros")


def fuse(vL, vG, store: nn.ParamStore, cfg: FusionConfig | None = None, prefix: str = "fusion") -> Tensor:
    """Fused feature for (B, N) and (B, M) inputs, or single vectors.

    subnet: P^T (ReLU(U^T vL) * ReLU(V^T vG)) + b; the other modes are the
    plain comparators used in ablations.
    """
    cfg = cfg or FusionConfig()
    vL, vG = nn.as_tensor(vL), nn.as_tensor(vG)
    if vL.ndim != vG.ndim or (vL.ndim == 2 and vL.shape[0] != vG.shape[0]):
        raise DimensionError(f"stream batches {vL.shape} and {vG.shape} do not align")
    if cfg.mode == "subnet":
        U, V = store[f"{prefix}/U"], store[f"{prefix}/V"]
        if vL.shape[-1] != U.shape[0] or vG.shape[-1] != V.shape[0]:
            raise DimensionError(f"inputs {vL.shape}, {vG.shape} do not match U {U.shape}, V {V.shape}")
        h = nn.relu(nn.matmul(vL, U)) * nn.relu(nn.matmul(vG, V))
        return nn.matmul(h, store[f"{prefix}/P"]) + store[f"{prefix}/b"]
    if cfg.mode == "concat":
        return nn.concat([vL, vG], axis=-1)
    if vL.shape != vG.shape:
        raise DimensionError(f"element-wise fusion needs equal shapes, got {vL.shape} and {vG.shape}")
    if cfg.mode == "mean":
        return (vL + vG) * 0.5
    pick = vL.data >= vG.data if cfg.mode == "max" else vL.data <= vG.data
    return vL * Tensor(pick.astype(np.float64)) + vG * Tensor((~pick).astype(np.float64))


def classify(v: Tensor, store: nn.ParamStore, prefix: str = "fusion") -> Tensor:
    return nn.dense(v, store[f"{prefix}/cls_W"], store[f"{prefix}/cls_b"])


def cross_entropy(logits, labels, n_classes: int) -> Tensor:
    """Mean negative log-likelihood of the true classes."""
    logits = nn.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape != (len(labels), n_classes):
        raise DimensionError(f"logits {logits.shape} do not match {len(labels)} labels x {n_classes} classes")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise InvalidInputError(f"labels must lie in [0, {n_classes})")
    onehot = np.zeros((len(labels), n_classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    return nn.mean(nn.tsum(nn.log_softmax(logits, axis=1) * Tensor(-onehot), axis=1))


# --- topology loss ------------------------------------------------------------------------

def edge_distribution(a_norm) -> np.ndarray:
    """Off-diagonal normalized adjacency rescaled to sum to one (zeros if no edges)."""
    a = np.array(a_norm, dtype=np.float64)
    np.fill_diagonal(a, 0.0)
    tot = a.sum()
    return a / tot if tot > 0 else a


def _rank(z: np.ndarray) -> np.ndarray:
    # descending score, ties broken by node index
    return np.lexsort((np.arange(len(z)), -z))


def _aligned(z, beta, n: int) -> tuple[np.ndarray, np.ndarray]:
    order = _rank(z)
    zz = np.zeros(n)
    bb = np.zeros((n, n))
    k = len(z)
    zz[:k] = z[order]
    bb[:k, :k] = beta[np.ix_(order, order)]
    return zz, bb


def cut_distance(zA, a_normA, zB, a_normB) -> float:
    """Squared-difference cut distance between two graphs with node scores.

    Nodes are matched by descending score; the smaller graph is padded with
    isolated zero-score nodes. Both sums run over the padded size and are
    divided by it.
    """
    zA = np.asarray(zA, dtype=np.float64)
    zB = np.asarray(zB, dtype=np.float64)
    bA, bB = edge_distribution(a_normA), edge_distribution(a_normB)
    if bA.shape != (len(zA), len(zA)) or bB.shape != (len(zB), len(zB)):
        raise DimensionError("node scores and adjacency sizes disagree")
    n = max(len(zA), len(zB))
    za, ba = _aligned(zA, bA, n)
    zb, bb = _aligned(zB, bB, n)
    node = float(np.sum((za - zb) ** 2))
    edge = float(np.sum((np.outer(za, za) * ba - np.outer(zb, zb) * bb) ** 2))
    return (node + edge) / n


def _pair_weights(labels: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Upper-triangular weights 1 / (n_pairs * padded size) over intra-class pairs."""
    G = len(labels)
    same = (labels[:, None] == labels[None, :]) & np.triu(np.ones((G, G), dtype=bool), 1)
    n_pairs = int(same.sum())
    if n_pairs == 0:
        return np.zeros((G, G))
    pad = np.maximum(sizes[:, None], sizes[None, :])
    return np.where(same, 1.0 / (n_pairs * pad), 0.0)


def topology_loss(z: Tensor, batch, labels) -> Tensor:
    """Mean cut distance over all intra-class pairs of a batch; 0 if there are none.

    ``z`` holds the readout node scores of every node of ``batch`` (a
    GraphBatch). The pairwise squared differences are expanded through a Gram
    matrix so the batch costs one matrix product.
    """
    labels = np.asarray(labels)
    sizes = np.asarray(batch.sizes)
    W = _pair_weights(labels, sizes)
    if not W.any():
        return Tensor(0.0)
    G, n = len(sizes), int(sizes.max())
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    idx = np.full((G, n), batch.n_nodes, dtype=np.int64)  # padding points at an appended zero
    beta = np.zeros((G, n, n))
    rows, cols, vals = batch.norm_pairs
    graph_of = batch.graph_id[rows]
    for g in range(G):
        k, off = int(sizes[g]), int(offsets[g])
        sel = (graph_of == g) & (rows != cols)
        a = np.zeros((k, k))
        a[rows[sel] - off, cols[sel] - off] = vals[sel]
        order = _rank(z.data[off:off + k])
        idx[g, :k] = off + order
        b = edge_distribution(a)
        beta[g, :k, :k] = b[np.ix_(order, order)]
    zp = nn.concat([z, Tensor(np.zeros(1))], axis=0)
    Z = nn.index(zp, idx)  # (G, n)
    S = nn.reshape(Z, (G, n, 1)) * nn.reshape(Z, (G, 1, n)) * Tensor(beta)
    F = nn.concat([Z, nn.reshape(S, (G, n * n))], axis=1)
    gram = nn.matmul(F, nn.transpose(F))
    sq = nn.tsum(F * F, axis=1)
    d = nn.reshape(sq, (G, 1)) + nn.reshape(sq, (1, G)) - gram * 2.0
    return nn.tsum(d * Tensor(W))


def total_loss(cls_loss, topo_loss, lambda_g: float):
    if lambda_g < 0:
        raise InvalidParameterError("lambda_g must be non-negative")
    if lambda_g == 0:
        return cls_loss
    return cls_loss + topo_loss * lambda_g
