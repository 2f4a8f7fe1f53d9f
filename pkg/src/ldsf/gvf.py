"""Global-visual-feature stream: a small SE-residual CNN with prunable channel scaling.

Every convolution is followed by a per-channel affine (a batch-norm stand-in),
then by the scaling factors ``chi * y + zeta`` that the sparsity penalty acts
on. Channel and block pruning work through masks in a :class:`PruneState`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .core_types import ComplexImage, MagnitudeImage, crop_center, gamma_transform, magnitude
from .errors import DimensionError, InvalidParameterError, InvalidTopologyError
from .nn import Tensor


@dataclass(frozen=True)
class GvfConfig:
    channels: tuple[int, ...] = (8, 16, 32)
    se_reduction: int = 4
    input_size: int = 32
    lr: float = 0.001
    alpha_sparsity: float = 1e-4
    gamma: float = 0.6

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "channels", ch)
        if not ch or any(b < a for a, b in zip(ch, ch[1:])):
            raise InvalidParameterError("channel plan must be non-empty and non-decreasing")
        if any(c % self.se_reduction for c in ch):
            raise InvalidParameterError("se_reduction must divide every stage width")
        if self.input_size < 2 ** len(ch):
            raise InvalidParameterError("input too small for the number of stages")

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def block_names(cfg: GvfConfig) -> list[str]:
    return [f"b{i}" for i in range(len(cfg.channels))]


def _has_projection(cfg: GvfConfig, i: int) -> bool:
    # block 0 keeps the stem resolution and width; later blocks downsample
    return i > 0


def layer_names(cfg: GvfConfig) -> list[str]:
    """Affine layers carrying scaling factors, in forward order."""
    out = ["stem"]
    for i, b in enumerate(block_names(cfg)):
        out += [f"{b}/c1", f"{b}/c2"]
        if _has_projection(cfg, i):
            out.append(f"{b}/sc")
    return out


def layer_widths(cfg: GvfConfig) -> dict[str, int]:
    w = {"stem": cfg.channels[0]}
    for i, b in enumerate(block_names(cfg)):
        for part in ("c1", "c2", "sc"):
            w[f"{b}/{part}"] = cfg.channels[i]
    return {k: w[k] for k in layer_names(cfg)}


def shortcut_groups(cfg: GvfConfig) -> list[list[str]]:
    """Affine layers whose outputs are summed by a residual connection."""
    groups = []
    prev = "stem"
    for i, b in enumerate(block_names(cfg)):
        groups.append([prev if not _has_projection(cfg, i) else f"{b}/sc", f"{b}/c2"])
        prev = groups[-1][0]
    return groups


@dataclass
class PruneState:
    channel_mask: dict[str, np.ndarray] = field(default_factory=dict)
    layer_mask: dict[str, bool] = field(default_factory=dict)

    @classmethod
    def full(cls, cfg: GvfConfig) -> PruneState:
        return cls({k: np.ones(w, dtype=bool) for k, w in layer_widths(cfg).items()},
                   {b: True for b in block_names(cfg)})

    def kept_fraction(self) -> float:
        total = sum(m.size for m in self.channel_mask.values())
        return sum(int(m.sum()) for m in self.channel_mask.values()) / max(total, 1)

    def to_dict(self) -> dict:
        return {"channel_mask": {k: v.astype(int).tolist() for k, v in sorted(self.channel_mask.items())},
                "layer_mask": dict(sorted(self.layer_mask.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> PruneState:
        return cls({k: np.asarray(v, dtype=bool) for k, v in d["channel_mask"].items()},
                   {k: bool(v) for k, v in d["layer_mask"].items()})


# --- parameters -------------------------------------------------------------------

def _add_affine(store: nn.ParamStore, name: str, c: int, prefix: str) -> None:
    store.add(f"{prefix}/{name}/scale", (c,), init="ones")
    store.add(f"{prefix}/{name}/shift", (c,), init="zeros")
    store.add(f"{prefix}/{name}/chi", (c,), init="ones")
    store.add(f"{prefix}/{name}/zeta", (c,), init="zeros")


def init_gvf(store: nn.ParamStore, cfg: GvfConfig, prefix: str = "gvf") -> None:
    ch = cfg.channels
    store.add(f"{prefix}/stem/k", (ch[0], 1, 3, 3))
    _add_affine(store, "stem", ch[0], prefix)
    cin = ch[0]
    for i, b in enumerate(block_names(cfg)):
        c = ch[i]
        store.add(f"{prefix}/{b}/c1/k", (c, cin, 3, 3))
        _add_affine(store, f"{b}/c1", c, prefix)
        store.add(f"{prefix}/{b}/c2/k", (c, c, 3, 3))
        _add_affine(store, f"{b}/c2", c, prefix)
        nn.add_se(store, f"{prefix}/{b}/se", c, cfg.se_reduction)
        if _has_projection(cfg, i):
            store.add(f"{prefix}/{b}/sc/k", (c, cin, 1, 1))
            _add_affine(store, f"{b}/sc", c, prefix)
        cin = c


def chi_names(cfg: GvfConfig, prefix: str = "gvf") -> list[str]:
    return [f"{prefix}/{name}/chi" for name in layer_names(cfg)]


# --- forward ----------------------------------------------------------------------

def preprocess(img, cfg: GvfConfig) -> np.ndarray:
    """Magnitude, center crop, then the gamma curve; returns (size, size)."""
    mag = magnitude(img) if isinstance(img, ComplexImage) else img
    if not isinstance(mag, MagnitudeImage):
        mag = MagnitudeImage(np.asarray(mag, dtype=np.float64))
    mag = crop_center(mag, cfg.input_size, cfg.input_size)
    return np.array(gamma_transform(mag, 1.0, cfg.gamma).data)


def _scaled(x: Tensor, store: nn.ParamStore, prefix: str, name: str,
            state: PruneState | None, calibrate: bool = False) -> Tensor:
    c = x.shape[1]
    if calibrate:
        # frozen batch statistics: the inference-time form of batch norm
        mu = x.data.mean(axis=(0, 2, 3))
        sd = x.data.std(axis=(0, 2, 3)) + 1e-8
        store[f"{prefix}/{name}/scale"].data[...] = 1.0 / sd
        store[f"{prefix}/{name}/shift"].data[...] = -mu / sd
    chi = store[f"{prefix}/{name}/chi"]
    # (x * scale + shift) * chi + zeta, folded so the full maps are touched twice
    scale = store[f"{prefix}/{name}/scale"] * chi
    shift = store[f"{prefix}/{name}/shift"] * chi + store[f"{prefix}/{name}/zeta"]
    y = nn.channel_affine(x, scale, shift)
    if state is not None:
        y = y * Tensor(state.channel_mask[name].astype(np.float64).reshape(1, c, 1, 1))
    return y


def gvf_forward(images, store: nn.ParamStore, cfg: GvfConfig,
                state: PruneState | None = None, prefix: str = "gvf", calibrate: bool = False) -> Tensor:
    """(B, H, W) preprocessed images, or a Tensor of shape (B, 1, H, W) -> (B, M) features.

    With ``calibrate`` every affine layer first sets its scale and shift so
    its output is zero-mean, unit-variance over this batch.
    """
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    if x.ndim == 3:
        x = nn.reshape(x, (x.shape[0], 1) + x.shape[1:])
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise DimensionError(f"expected (B, 1, {cfg.input_size}, {cfg.input_size}) input, got {x.shape}")
    h = nn.relu(_scaled(nn.conv(x, store[f"{prefix}/stem/k"], stride=2), store, prefix, "stem", state, calibrate))
    for i, b in enumerate(block_names(cfg)):
        stride = 2 if _has_projection(cfg, i) else 1
        if _has_projection(cfg, i):
            short = _scaled(nn.conv(h, store[f"{prefix}/{b}/sc/k"], stride=stride), store, prefix, f"{b}/sc", state, calibrate)
        else:
            short = h
        if state is not None and not state.layer_mask.get(b, True):
            # a dropped block keeps only its shortcut path
            h = nn.relu(short)
            continue
        r = nn.relu(_scaled(nn.conv(h, store[f"{prefix}/{b}/c1/k"], stride=stride), store, prefix, f"{b}/c1", state, calibrate))
        r = _scaled(nn.conv(r, store[f"{prefix}/{b}/c2/k"]), store, prefix, f"{b}/c2", state, calibrate)
        r = nn.se_block(r, store, f"{prefix}/{b}/se")
        h = nn.relu(r + short)
    return nn.global_avg_pool(h)


def calibrate_gvf(images, store: nn.ParamStore, cfg: GvfConfig, prefix: str = "gvf") -> None:
    """Data-dependent init of the affine layers, one layer at a time in forward order."""
    gvf_forward(images, store, cfg, prefix=prefix, calibrate=True)


def gvf_logits(images, store: nn.ParamStore, cfg: GvfConfig, state: PruneState | None = None) -> Tensor:
    """Standalone classifier head, used when the visual stream is trained alone."""
    return nn.dense(gvf_forward(images, store, cfg, state), store["gvf_head/W"], store["gvf_head/b"])


def init_gvf_head(store: nn.ParamStore, cfg: GvfConfig, n_classes: int) -> None:
    store.add("gvf_head/W", (cfg.feature_dim, n_classes))
    store.add("gvf_head/b", (n_classes,), init="zeros")


# --- sparsity and pruning --------------------------------------------------------------

def sparsity_loss(classify_loss, chi, alpha_sparsity: float):
    """classify_loss + alpha * sum |chi| over all scaling factors.

    ``chi`` may be a list of Tensors (differentiable path) or arrays.
    """
    terms = chi if isinstance(chi, (list, tuple)) else [chi]
    if any(isinstance(t, Tensor) for t in terms):
        pen = None
        for t in terms:
            t = nn.as_tensor(t)
            a = nn.tsum(t * Tensor(np.sign(t.data)))
            pen = a if pen is None else pen + a
        return nn.as_tensor(classify_loss) + pen * float(alpha_sparsity)
    return classify_loss + alpha_sparsity * float(sum(np.abs(np.asarray(t, dtype=float)).sum() for t in terms))


def _count(frac: float, n: int) -> int:
    if not 0 <= frac <= 1:
        raise InvalidParameterError(f"fraction must be in [0, 1], got {frac}")
    # guard against 3 * (1/3) landing just below 1
    return int(math.floor(frac * n + 1e-9))


def select_channels(chi: dict[str, np.ndarray], delta_global: float,
                    delta_local: float) -> dict[str, np.ndarray]:
    """Keep-masks from scaling factors.

    Layers are ranked by mean |chi|; the lowest ``delta_global`` fraction are
    prunable, and in each of those the lowest ``delta_local`` fraction of
    channels by |chi| are dropped, always leaving at least one channel.
    """
    names = sorted(chi)
    mags = {k: np.abs(np.asarray(chi[k], dtype=np.float64)) for k in names}
    means = np.array([mags[k].mean() for k in names])
    order = np.argsort(means, kind="stable")
    prunable = {names[i] for i in order[:_count(delta_global, len(names))]}
    masks = {}
    for k in names:
        m = np.ones(mags[k].size, dtype=bool)
        if k in prunable:
            n_drop = min(_count(delta_local, m.size), m.size - 1)
            m[np.argsort(mags[k], kind="stable")[:n_drop]] = False
        masks[k] = m
    return masks


def harmonize_shortcut_masks(channel_mask: dict[str, np.ndarray],
                             topology: list[list[str]]) -> dict[str, np.ndarray]:
    """OR the keep-masks of every shortcut group, repeated until nothing changes."""
    out = {k: np.asarray(v, dtype=bool).copy() for k, v in channel_mask.items()}
    for group in topology:
        sizes = {out[k].size for k in group}
        if len(sizes) > 1:
            raise InvalidTopologyError(f"shortcut group {group} mixes channel counts {sorted(sizes)}")
    changed = True
    while changed:
        changed = False
        for group in topology:
            union = np.logical_or.reduce([out[k] for k in group])
            for k in group:
                if not np.array_equal(out[k], union):
                    out[k] = union.copy()
                    changed = True
    return out


def block_means(chi: dict[str, np.ndarray], cfg: GvfConfig) -> dict[str, float]:
    """Mean |chi| over the residual-branch layers of each block."""
    return {b: float(np.mean(np.abs(np.concatenate([chi[f"{b}/c1"], chi[f"{b}/c2"]]))))
            for b in block_names(cfg)}


def select_layers(layer_means: dict[str, float], delta_layer: float,
                  topology=None) -> dict[str, bool]:
    """Drop the residual branches of the lowest ``delta_layer`` fraction of blocks.

    ``topology`` optionally restricts the candidates to those names; the stem
    and any classifier head are never candidates.
    """
    names = sorted(layer_means) if topology is None else [b for b in sorted(layer_means) if b in set(topology)]
    order = sorted(names, key=lambda b: (layer_means[b], b))
    drop = set(order[:_count(delta_layer, len(names))])
    return {b: b not in drop for b in sorted(layer_means)}


def chi_values(store: nn.ParamStore, cfg: GvfConfig, prefix: str = "gvf") -> dict[str, np.ndarray]:
    return {name: store[f"{prefix}/{name}/chi"].data.copy() for name in layer_names(cfg)}


def prune(store: nn.ParamStore, cfg: GvfConfig, delta_global: float, delta_local: float,
          delta_layer: float, prefix: str = "gvf") -> PruneState:
    """Build a prune state from the current scaling factors and freeze masked
    parameters at zero in ``store``."""
    chi = chi_values(store, cfg, prefix)
    masks = harmonize_shortcut_masks(select_channels(chi, delta_global, delta_local),
                                     shortcut_groups(cfg))
    state = PruneState(masks, select_layers(block_means(chi, cfg), delta_layer))
    apply_prune_state(store, cfg, state, prefix)
    return state


def apply_prune_state(store: nn.ParamStore, cfg: GvfConfig, state: PruneState,
                      prefix: str = "gvf") -> None:
    """Register frozen-zero masks for every parameter owned by a pruned channel
    or a dropped block."""
    for name, keep in state.channel_mask.items():
        for part in ("scale", "shift", "chi", "zeta"):
            store.set_mask(f"{prefix}/{name}/{part}", keep)
        k = store[f"{prefix}/{name}/k"] if f"{prefix}/{name}/k" in store else None
        if k is not None:
            store.set_mask(f"{prefix}/{name}/k", keep.reshape(-1, 1, 1, 1))
    for b, kept in state.layer_mask.items():
        if kept:
            continue
        for n, t in store.items():
            if n.startswith(f"{prefix}/{b}/") and not n.startswith(f"{prefix}/{b}/sc/"):
                store.set_mask(n, np.zeros(t.shape, dtype=bool))


# --- cost accounting ---------------------------------------------------------------

def complexity(cfg: GvfConfig, state: PruneState | None = None) -> dict[str, int]:
    """Parameter count and multiply-accumulate estimate of the conv trunk.

    Pruned channels remove their output slice and the matching input slice of
    the next convolution; dropped blocks remove their residual branch.
    """
    state = state or PruneState.full(cfg)
    kept = {k: int(v.sum()) for k, v in state.channel_mask.items()}
    size = cfg.input_size // 2
    params = 9 * kept["stem"] + 4 * kept["stem"]
    flops = 9 * kept["stem"] * size * size
    cin = kept["stem"]
    for i, b in enumerate(block_names(cfg)):
        if _has_projection(cfg, i):
            size //= 2
            cout = kept[f"{b}/sc"]
            params += cin * cout + 4 * cout
            flops += cin * cout * size * size
        if state.layer_mask.get(b, True):
            c1, c2 = kept[f"{b}/c1"], kept[f"{b}/c2"]
            hidden = max(1, cfg.channels[i] // cfg.se_reduction)
            params += 9 * cin * c1 + 4 * c1 + 9 * c1 * c2 + 4 * c2 + 2 * c2 * hidden + hidden + c2
            flops += 9 * (cin * c1 + c1 * c2) * size * size + 2 * c2 * hidden
        cin = kept[f"{b}/sc"] if _has_projection(cfg, i) else kept["stem"]
    return {"params": int(params), "macs": int(flops)}


# --- standalone training --------------------------------------------------------------

def accuracy(store: nn.ParamStore, cfg: GvfConfig, images, labels,
             state: PruneState | None = None, batch: int = 256) -> float:
    images = np.asarray(images)
    labels = np.asarray(labels)
    hits = 0
    for s in range(0, len(images), batch):
        logits = gvf_logits(images[s:s + batch], store, cfg, state).data
        hits += int((logits.argmax(axis=1) == labels[s:s + batch]).sum())
    return hits / max(len(images), 1)


def train_gvf(store: nn.ParamStore, cfg: GvfConfig, images, labels, epochs: int,
              batch: int = 256, seed: int = 0, state: PruneState | None = None,
              alpha_sparsity: float | None = None) -> list[float]:
    """Adam on the visual stream and its head; returns the mean loss per epoch.

    Parameters with registered masks stay at zero throughout.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    alpha = cfg.alpha_sparsity if alpha_sparsity is None else alpha_sparsity
    n_classes = store["gvf_head/b"].shape[0]
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(images))
        tot = 0.0
        for s in range(0, len(order), batch):
            idx = order[s:s + batch]
            store.zero_grad()
            logits = gvf_logits(images[idx], store, cfg, state)
            ce = nn.mean(nn.tsum(nn.log_softmax(logits) * Tensor(-np.eye(n_classes)[labels[idx]]), axis=1))
            loss = sparsity_loss(ce, [store[n] for n in chi_names(cfg)], alpha) if alpha else ce
            loss.backward()
            nn.adam_step(store, lr=cfg.lr, prefix="gvf")
            tot += loss.item() * len(idx)
        losses.append(tot / len(images))
    return losses


def finetune(store: nn.ParamStore, state: PruneState, images, labels, cfg: GvfConfig,
             epochs: int = 20, batch: int = 256, seed: int = 0) -> dict:
    """Retrain a pruned visual stream with masked parameters frozen at zero.

    Returns accuracy on the given set before and after, plus the loss curve.
    """
    apply_prune_state(store, cfg, state)
    before = accuracy(store, cfg, images, labels, state)
    losses = train_gvf(store, cfg, images, labels, epochs, batch, seed, state)
    return {"accuracy_before": before, "accuracy_after": accuracy(store, cfg, images, labels, state),
            "losses": losses}
