"""Joint training and evaluation of the dual-stream classifier and its ablations."""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .. import nn
from ..errors import InvalidCheckpointError, InvalidParameterError
from ..fusion_loss import (FusionConfig, classify, cross_entropy, fuse, init_fusion,
                           topology_loss, total_loss)
from ..gvf import (GvfConfig, PruneState, calibrate_gvf, chi_names, gvf_forward, init_gvf, preprocess,
                   sparsity_loss)
from ..lemsf import GraphBatch, LemsfConfig, init_lemsf, lemsf_forward, set_input_stats
from ..nn import Tensor
from .dataset import Sample

log = logging.getLogger(__name__)

ABLATIONS = ("full", "lemsf-only", "gvf-only", "no-topology")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch: int = 256
    patience: int = 30
    min_delta: float = 1e-4
    lr_lemsf: float = 0.005
    lr_gvf: float = 0.001
    lr_fusion: float = 0.005
    lambda_g: float = 0.1
    alpha_sparsity: float = 1e-4
    ablation: str = "full"
    eval_every: int = 1
    lemsf: LemsfConfig = field(default_factory=LemsfConfig)
    gvf: GvfConfig = field(default_factory=GvfConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise InvalidParameterError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.epochs < 1 or self.batch < 1 or self.patience < 1 or self.eval_every < 1:
            raise InvalidParameterError("epochs, batch, patience and eval_every must be positive")
        if self.lambda_g < 0 or self.alpha_sparsity < 0:
            raise InvalidParameterError("loss weights must be non-negative")

    @property
    def uses_lemsf(self) -> bool:
        return self.ablation != "gvf-only"

    @property
    def uses_gvf(self) -> bool:
        return self.ablation != "lemsf-only"

    @property
    def effective_lambda(self) -> float:
        if not self.uses_lemsf or self.ablation == "no-topology":
            return 0.0
        return self.lambda_g

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("lemsf", "gvf", "fusion")}
        d["lemsf"] = self.lemsf.to_dict()
        d["gvf"] = self.gvf.to_dict()
        d["fusion"] = self.fusion.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown training options {sorted(unknown)}")
        sub = {"lemsf": LemsfConfig, "gvf": GvfConfig, "fusion": FusionConfig}
        for k, typ in sub.items():
            if k in d:
                v = dict(d[k])
                if k == "gvf" and "channels" in v:
                    v["channels"] = tuple(v["channels"])
                d[k] = typ(**v)
        return cls(**d)


# --- data ------------------------------------------------------------------------------

@dataclass
class Prepared:
    ids: list[str]
    labels: np.ndarray
    images: np.ndarray  # (n, size, size) network inputs
    graphs: list

    def __len__(self) -> int:
        return len(self.ids)


def prepare(samples: list[Sample], cfg: TrainConfig) -> Prepared:
    if cfg.uses_lemsf and any(s.graph is None for s in samples):
        raise InvalidParameterError("graph stream requested but some samples have no extracted graph")
    images = np.stack([preprocess(s.image, cfg.gvf) for s in samples]) if cfg.uses_gvf else np.zeros((len(samples), 0, 0))
    return Prepared([s.id for s in samples], np.array([s.label for s in samples], dtype=np.int64),
                    images, [s.graph for s in samples])


# --- model -------------------------------------------------------------------------------

def init_model(cfg: TrainConfig, n_classes: int, train: Prepared, seed: int) -> nn.ParamStore:
    store = nn.ParamStore(seed)
    if cfg.uses_lemsf:
        init_lemsf(store, cfg.lemsf)
        set_input_stats(store, train.graphs)
    if cfg.uses_gvf:
        init_gvf(store, cfg.gvf)
        calibrate_gvf(train.images[:cfg.batch], store, cfg.gvf)
    if cfg.uses_lemsf and cfg.uses_gvf:
        init_fusion(store, cfg.fusion, cfg.lemsf.hidden, cfg.gvf.feature_dim, n_classes)
    else:
        dim = cfg.lemsf.hidden if cfg.uses_lemsf else cfg.gvf.feature_dim
        store.add("fusion/cls_W", (dim, n_classes))
        store.add("fusion/cls_b", (n_classes,), init="zeros")
    return store


@dataclass
class Forward:
    logits: Tensor
    z: Tensor | None
    batch: GraphBatch | None


def forward(store: nn.ParamStore, cfg: TrainConfig, data: Prepared, idx, training: bool = False,
            rng: np.random.Generator | None = None, state: PruneState | None = None) -> Forward:
    idx = np.asarray(idx)
    vL = vG = z = batch = None
    if cfg.uses_lemsf:
        batch = GraphBatch.from_graphs([data.graphs[i] for i in idx])
        out = lemsf_forward(batch, store, cfg.lemsf, training=training, rng=rng)
        vL, z = out.v, out.z
    if cfg.uses_gvf:
        vG = gvf_forward(data.images[idx], store, cfg.gvf, state)
    if vL is not None and vG is not None:
        feat = fuse(vL, vG, store, cfg.fusion)
    else:
        feat = vL if vL is not None else vG
    return Forward(classify(feat, store), z, batch)


def batch_loss(store, cfg: TrainConfig, fw: Forward, labels, n_classes: int):
    """Returns (total loss Tensor, components dict of floats)."""
    cls = cross_entropy(fw.logits, labels, n_classes)
    parts = {"L_cls": cls.item()}
    lam = cfg.effective_lambda
    loss = cls
    if lam > 0:
        topo = topology_loss(fw.z, fw.batch, labels)
        parts["L_g"] = topo.item()
        loss = total_loss(cls, topo, lam)
    if cfg.uses_gvf and cfg.alpha_sparsity > 0:
        with_sparse = sparsity_loss(loss, [store[n] for n in chi_names(cfg.gvf)], cfg.alpha_sparsity)
        parts["L_sparse"] = with_sparse.item() - loss.item()
        loss = with_sparse
    return loss, parts


# --- metrics -------------------------------------------------------------------------------

@dataclass
class Metrics:
    confusion: np.ndarray

    @classmethod
    def from_predictions(cls, pred, labels, n_classes: int) -> Metrics:
        m = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(m, (np.asarray(labels), np.asarray(pred)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def pcc(self) -> float:
        return float(np.trace(self.confusion)) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {"pcc": self.pcc, "confusion": self.confusion.tolist()}


def predict(store, cfg: TrainConfig, data: Prepared, state: PruneState | None = None,
            chunk: int = 256) -> np.ndarray:
    preds = []
    for s in range(0, len(data), chunk):
        idx = np.arange(s, min(s + chunk, len(data)))
        preds.append(forward(store, cfg, data, idx, state=state).logits.data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate_store(store, cfg: TrainConfig, data: Prepared, n_classes: int,
                   state: PruneState | None = None) -> Metrics:
    return Metrics.from_predictions(predict(store, cfg, data, state), data.labels, n_classes)


def mean_intra_class_cut(store, cfg: TrainConfig, data: Prepared, chunk: int = 512) -> float | None:
    """Mean cut distance over all same-class pairs, from eval-mode node scores."""
    if not cfg.uses_lemsf:
        return None
    zs = []
    for s in range(0, len(data), chunk):
        batch = GraphBatch.from_graphs(data.graphs[s:s + chunk])
        zs.append(lemsf_forward(batch, store, cfg.lemsf).z.data)
    batch = GraphBatch.from_graphs(data.graphs)
    return topology_loss(Tensor(np.concatenate(zs)), batch, data.labels).item()


# --- training ------------------------------------------------------------------------------

@dataclass
class TrainResult:
    store: nn.ParamStore
    config: TrainConfig
    n_classes: int
    class_names: list[str]
    history: list[dict]
    test_metrics: Metrics | None
    cut_initial: float | None
    cut_final: float | None
    seconds: float

    @property
    def final_pcc(self) -> float | None:
        return self.test_metrics.pcc if self.test_metrics is not None else None

    def hyper(self) -> dict:
        return {"train": self.config.to_dict(), "n_classes": self.n_classes,
                "class_names": self.class_names}


def class_names_of(samples: list[Sample]) -> list[str]:
    names = {}
    for s in samples:
        names.setdefault(s.label, s.class_name)
    return [names.get(i, f"class{i}") for i in range(max(names) + 1)] if names else []


def train_ldsf(train: list[Sample], test: list[Sample] | None, cfg: TrainConfig, seed: int = 0,
               store: nn.ParamStore | None = None, state: PruneState | None = None,
               n_classes: int | None = None, prepared=None) -> TrainResult:
    """Train from scratch, or continue ``store`` (fine-tuning) when given.

    Early stopping watches the training loss only; the test split is scored
    for the history but never steers training.
    """
    t0 = time.time()
    names = class_names_of(list(train) + list(test or []))
    n_classes = n_classes or len(names)
    tr, te = prepared if prepared is not None else (prepare(train, cfg), prepare(test, cfg) if test else None)
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seq, drop_seq = ss.generate_state(1)[0], *ss.spawn(2)
    if store is None:
        store = init_model(cfg, n_classes, tr, int(init_seed))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq)
    rates = {"lemsf/": cfg.lr_lemsf, "gvf/": cfg.lr_gvf, "fusion/": cfg.lr_fusion}
    cut_initial = mean_intra_class_cut(store, cfg, tr)
    history = []
    best, stale = math.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(tr))
        sums: dict[str, float] = {}
        hits = 0
        for s in range(0, len(order), cfg.batch):
            idx = order[s:s + cfg.batch]
            store.zero_grad()
            fw = forward(store, cfg, tr, idx, training=True, rng=drop_rng, state=state)
            loss, parts = batch_loss(store, cfg, fw, tr.labels[idx], n_classes)
            loss.backward()
            nn.adam_step(store, lr=rates)
            hits += int((fw.logits.data.argmax(axis=1) == tr.labels[idx]).sum())
            parts["loss"] = loss.item()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
        rec = {"epoch": epoch, **{k: v / len(tr) for k, v in sums.items()}, "train_pcc": hits / len(tr)}
        last = epoch == cfg.epochs
        if rec["loss"] < best - cfg.min_delta * abs(best if math.isfinite(best) else 1.0):
            best, stale = rec["loss"], 0
        else:
            stale += 1
        stop = stale >= cfg.patience
        if te is not None and (epoch % cfg.eval_every == 0 or last or stop):
            rec["test_pcc"] = evaluate_store(store, cfg, te, n_classes, state).pcc
        history.append(rec)
        if stop:
            break
    test_metrics = evaluate_store(store, cfg, te, n_classes, state) if te is not None else None
    return TrainResult(store, cfg, n_classes, names, history, test_metrics, cut_initial,
                       mean_intra_class_cut(store, cfg, tr), time.time() - t0)


# --- checkpoints -------------------------------------------------------------------------

def save_result(result: TrainResult, path) -> str:
    """Write the checkpoint pair and return the manifest's SHA-256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(path, result.store, result.hyper())
    return checkpoint_hash(path)


def checkpoint_hash(path) -> str:
    path = Path(path)
    h = hashlib.sha256(path.read_bytes())
    h.update(path.with_suffix(".bin").read_bytes())
    return h.hexdigest()


def load_model(path) -> tuple[nn.ParamStore, TrainConfig, int, list[str]]:
    store = nn.load_checkpoint(path)
    hyper = store.meta
    try:
        cfg = TrainConfig.from_dict(hyper["train"])
        n_classes = int(hyper["n_classes"])
    except (KeyError, TypeError, InvalidParameterError) as e:
        raise InvalidCheckpointError(f"checkpoint lacks a usable training configuration: {e}") from e
    return store, cfg, n_classes, list(hyper.get("class_names", []))


def evaluate(checkpoint, samples: list[Sample], state: PruneState | None = None) -> Metrics:
    """Confusion and PCC of a saved model on ``samples``."""
    store, cfg, n_classes, _ = load_model(checkpoint)
    labels = [s.label for s in samples]
    if labels and max(labels) >= n_classes:
        raise InvalidCheckpointError(
            f"checkpoint was trained for {n_classes} classes but the data has label {max(labels)}")
    return evaluate_store(store, cfg, prepare(samples, cfg), n_classes, state)
