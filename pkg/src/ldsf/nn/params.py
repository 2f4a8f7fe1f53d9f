"""Parameter storage, initialization, Adam and checkpoints."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..errors import InvalidCheckpointError, InvalidParameterError
from .tensor import Tensor

CHECKPOINT_FORMAT = "ldsf-checkpoint-1"


def glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        field = int(np.prod(shape[2:]))
        fan_in, fan_out = shape[1] * field, shape[0] * field
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Named tensors in lexicographic order, plus Adam state and frozen-zero masks."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.params: dict[str, Tensor] = {}
        self.masks: dict[str, np.ndarray] = {}
        self.meta: dict = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, shape, init: str = "glorot", value=None, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise InvalidParameterError(f"duplicate parameter name {name!r}")
        if value is not None:
            data = np.array(value, dtype=np.float64).reshape(shape)
        elif init == "glorot":
            data = glorot_uniform(self.rng, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise InvalidParameterError(f"unknown initializer {init!r}")
        t = Tensor(data, requires_grad=trainable, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def items(self):
        return [(n, self.params[n]) for n in self.names()]

    def trainable(self):
        return [(n, t) for n, t in self.items() if t.requires_grad]

    def count(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self.items() if n.startswith(prefix) and t.requires_grad)

    def zero_grad(self):
        for _, t in self.items():
            t.zero_grad()

    def set_mask(self, name: str, mask) -> None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), self.params[name].shape).copy()
        self.masks[name] = m
        self.params[name].data = np.where(m, self.params[name].data, 0.0)

    def apply_masks(self):
        for name, m in self.masks.items():
            t = self.params[name]
            t.data = np.where(m, t.data, 0.0)
            if t.grad is not None:
                t.grad = np.where(m, t.grad, 0.0)

    def copy(self) -> ParamStore:
        out = ParamStore(self.seed)
        for n, t in self.items():
            out.add(n, t.shape, value=t.data.copy(), trainable=t.requires_grad)
        out.masks = {k: v.copy() for k, v in self.masks.items()}
        out.meta = json.loads(json.dumps(self.meta))
        return out


def adam_step(store: ParamStore, lr=1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
              prefix: str = "") -> None:
    """One bias-corrected Adam update of every trainable parameter under ``prefix``.

    ``lr`` may also map name prefixes to rates; parameters matching none of
    them are left alone. The step counter advances once per call either way.
    """
    b1, b2 = betas
    store.apply_masks()
    store.step_count += 1
    t = store.step_count
    rates = lr if isinstance(lr, dict) else None
    for name, p in store.trainable():
        if not name.startswith(prefix):
            continue
        if rates is not None:
            rate = next((r for pre, r in rates.items() if name.startswith(pre)), None)
            if rate is None:
                continue
        else:
            rate = lr
        g = p.grad
        m = store._m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
        v = store._v[name]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        store._m[name], store._v[name] = m, v
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p.data = p.data - rate * mh / (np.sqrt(vh) + eps)
    store.apply_masks()


# --- checkpoints -----------------------------------------------------------------

def checkpoint_bytes(store: ParamStore, hyper: dict | None = None) -> tuple[bytes, bytes]:
    """Return (manifest JSON, parameter blob)."""
    entries = []
    blobs = []
    for name, t in store.items():
        entries.append({"name": name, "shape": list(t.shape), "trainable": t.requires_grad})
        blobs.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    masks = {k: np.flatnonzero(~v.ravel()).tolist() for k, v in sorted(store.masks.items())}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "seed": store.seed,
        "hyperparameters": hyper if hyper is not None else store.meta,
        "params": entries,
        "masked_out": masks,
    }
    text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    return text.encode("utf-8"), b"".join(blobs)


def store_from_bytes(manifest: bytes, blob: bytes) -> ParamStore:
    try:
        doc = json.loads(manifest.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidCheckpointError(f"unreadable manifest: {e}") from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidCheckpointError(f"unknown checkpoint format {doc.get('format')!r}")
    store = ParamStore(doc["seed"])
    store.meta = doc.get("hyperparameters", {})
    data = np.frombuffer(blob, dtype="<f8")
    pos = 0
    for e in doc["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if pos + n > data.size:
            raise InvalidCheckpointError("parameter blob is shorter than the manifest")
        store.add(e["name"], tuple(e["shape"]), value=data[pos:pos + n].copy(),
                  trainable=e.get("trainable", True))
        pos += n
    if pos != data.size:
        raise InvalidCheckpointError("parameter blob is longer than the manifest")
    for name, off in doc.get("masked_out", {}).items():
        m = np.ones(store[name].data.size, dtype=bool)
        m[np.asarray(off, dtype=np.int64)] = False
        store.masks[name] = m.reshape(store[name].shape)
    return store


def save_checkpoint(path, store: ParamStore, hyper: dict | None = None) -> None:
    """Writes ``path`` (manifest) and ``path`` with a ``.bin`` suffix (blob)."""
    path = Path(path)
    manifest, blob = checkpoint_bytes(store, hyper)
    path.write_bytes(manifest)
    path.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(path) -> ParamStore:
    path = Path(path)
    try:
        return store_from_bytes(path.read_bytes(), path.with_suffix(".bin").read_bytes())
    except FileNotFoundError as e:
        raise InvalidCheckpointError(str(e)) from e
