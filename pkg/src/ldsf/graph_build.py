"""Heterogeneous scattering-center graphs: typed nodes, distance weights, meta-paths."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .asc_model import Kind, ScatteringCenter, ScatterSet
from .errors import EmptyGraphError, InvalidGraphError, InvalidInputError

# node attribute order, as (A, alpha, gamma, L, phi_bar, x, y)
ATTR_NAMES = ("A", "alpha", "gamma", "L", "phi_bar", "x", "y")
NODE_TYPES = (Kind.LOCAL, Kind.DISTRIBUTED)
EPS_DISTANCE = 1e-3  # metres


@dataclass(frozen=True)
class Geometry:
    depression: float = math.radians(17.0)
    squint: float = 0.0


def _geom(g) -> tuple[float, float]:
    return float(getattr(g, "depression", 0.0)), float(getattr(g, "squint", 0.0))


def slant_to_ground(xs, ys, depression: float, squint: float):
    """Project slant-plane coordinates to the ground plane; only range is scaled."""
    return np.multiply(xs, math.cos(depression) * math.cos(squint)), ys


def edge_weight(ci: ScatteringCenter, cj: ScatteringCenter, geom) -> float:
    """Reciprocal ground-plane distance, clamped at EPS_DISTANCE."""
    dep, sq = _geom(geom)
    xi, yi = slant_to_ground(ci.x, ci.y, dep, sq)
    xj, yj = slant_to_ground(cj.x, cj.y, dep, sq)
    d = math.hypot(float(xi) - float(xj), float(yi) - float(yj))
    return 1.0 / max(d, EPS_DISTANCE)


def normalize_adjacency(a_adj: np.ndarray) -> np.ndarray:
    """(D+I)^-1/2 (I+A) (D+I)^-1/2 with D the diagonal of row sums."""
    a = np.asarray(a_adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-12, atol=0.0):
        raise InvalidInputError("adjacency is not symmetric")
    if np.any(a < 0):
        raise InvalidInputError("adjacency has negative weights")
    d = a.sum(axis=1) + 1.0
    s = 1.0 / np.sqrt(d)
    return s[:, None] * (a + np.eye(len(a))) * s[None, :]


def metapath_buckets(types) -> dict[tuple[Kind, Kind], list[tuple[int, int]]]:
    """Directed node pairs grouped by (source type, target type).

    Only pairs of types that occur in the graph get a bucket.
    """
    present = [t for t in NODE_TYPES if t in set(types)]
    buckets = {(a, b): [] for a in present for b in present}
    for i, ti in enumerate(types):
        for j, tj in enumerate(types):
            if i != j:
                buckets[(ti, tj)].append((i, j))
    return buckets


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    node_types: tuple[Kind, ...]
    X: np.ndarray
    A_adj: np.ndarray
    A_norm: np.ndarray
    metapaths: dict

    @property
    def n(self) -> int:
        return len(self.node_types)

    def type_ids(self) -> np.ndarray:
        return np.array([NODE_TYPES.index(t) for t in self.node_types], dtype=np.int64)

    def permuted(self, perm) -> HeteroGraph:
        """Relabel nodes so that new node k is old node perm[k]."""
        p = np.asarray(perm)
        return make_graph([self.node_types[i] for i in p], self.X[p], self.A_adj[np.ix_(p, p)])


def make_graph(node_types, X, a_adj) -> HeteroGraph:
    types = tuple(Kind(t) for t in node_types)
    X = np.array(X, dtype=np.float64).reshape(len(types), len(ATTR_NAMES))
    a = np.array(a_adj, dtype=np.float64).reshape(len(types), len(types))
    if len(types) == 0:
        raise EmptyGraphError("graph has no nodes")
    if np.any(np.diag(a) != 0):
        raise InvalidGraphError("adjacency diagonal must be zero")
    a_norm = normalize_adjacency(a)
    for arr in (X, a, a_norm):
        arr.setflags(write=False)
    return HeteroGraph(types, X, a, a_norm, metapath_buckets(types))


def node_attributes(c: ScatteringCenter) -> list[float]:
    return [c.A, c.alpha, c.gamma, c.L, c.phi_bar, c.x, c.y]


def build_graph(s: ScatterSet, geom=None) -> HeteroGraph:
    if len(s) == 0:
        raise EmptyGraphError("cannot build a graph from an empty scatter set")
    geom = geom if geom is not None else Geometry()
    n = len(s)
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            a[i, j] = a[j, i] = edge_weight(s[i], s[j], geom)
    return make_graph([c.kind for c in s], [node_attributes(c) for c in s], a)


# --- JSON -------------------------------------------------------------------

def graph_to_json(g: HeteroGraph) -> str:
    doc = {
        "nodes": [{"type": t.value, "attrs": [float(v) for v in row]}
                  for t, row in zip(g.node_types, g.X)],
        "adj": [[float(v) for v in row] for row in g.A_adj],
    }
    return json.dumps(doc) + "\n"


def graph_from_json(text: str) -> HeteroGraph:
    doc = json.loads(text)
    try:
        nodes = doc["nodes"]
        return make_graph([nd["type"] for nd in nodes], [nd["attrs"] for nd in nodes], doc["adj"])
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidInputError):
            raise
        raise InvalidGraphError(f"malformed graph document: {e}") from e


def write_graph(path, g: HeteroGraph) -> None:
    Path(path).write_text(graph_to_json(g))


def read_graph(path) -> HeteroGraph:
    return graph_from_json(Path(path).read_text())
