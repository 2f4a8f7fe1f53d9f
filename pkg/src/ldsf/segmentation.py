"""2-D Otsu target segmentation and distance-constrained watershed regions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .asc_model import Kind
from .core_types import MagnitudeImage, write_pgm
from .errors import DegenerateInputError, DimensionError, NoRegionError

LEVELS = 256
# a maximum whose saddle to a stronger one stays above this fraction of its
# own peak is part of the same object (sidelobe ripple, plate plateau)
MERGE_RATIO = 0.5
# region = basin pixels within this many dB of the region peak
REGION_FLOOR_DB = -6.0
# pixels this far below the masked max are never flooded
FLOOD_FLOOR_DB = -60.0
DISTRIBUTED_CELLS = 3.0

_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=bool)
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def shape(self):
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())

    def to_pgm(self, path) -> None:
        write_pgm(path, self.data.astype(np.float64))


@dataclass(frozen=True)
class Region:
    pixels: np.ndarray  # (n, 2) int array of (row, col), sorted
    peak: tuple[int, int]
    peak_value: float
    extent: tuple[float, float]  # major, minor axis length in pixels
    orientation: float  # major axis angle from the cross-range axis (rad)

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.pixels[:, 0], self.pixels[:, 1]] = True
        return m

    def __len__(self):
        return len(self.pixels)


# --- 2-D Otsu ------------------------------------------------------------

def quantize(values: np.ndarray) -> np.ndarray:
    """Equal-width 256-bin quantization between the image min and max."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    q = np.floor((values - lo) / (hi - lo) * LEVELS).astype(np.int64)
    return np.clip(q, 0, LEVELS - 1)


def neighborhood_mean_levels(q: np.ndarray) -> np.ndarray:
    """Rounded 3x3 mean of quantized levels, edges replicated."""
    p = np.pad(q.astype(np.float64), 1, mode="edge")
    acc = np.zeros(q.shape, dtype=np.float64)
    rows, cols = q.shape
    for dr in range(3):
        for dc in range(3):
            acc += p[dr:dr + rows, dc:dc + cols]
    return np.clip(np.floor(acc / 9.0 + 0.5), 0, LEVELS - 1).astype(np.int64)


def otsu2d_thresholds(img: MagnitudeImage) -> tuple[int, int]:
    q = quantize(img.data)
    if np.unique(q).size < 2:
        raise DegenerateInputError("2-D Otsu needs at least two distinct gray levels")
    m = neighborhood_mean_levels(q)
    hist = np.zeros((LEVELS, LEVELS))
    np.add.at(hist, (q.ravel(), m.ravel()), 1.0)
    hist /= hist.sum()

    i = np.arange(LEVELS, dtype=np.float64)
    # summed-area tables for mass and first moments
    w = hist.cumsum(0).cumsum(1)
    mi = (hist * i[:, None]).cumsum(0).cumsum(1)
    mj = (hist * i[None, :]).cumsum(0).cumsum(1)
    tot_w, tot_i, tot_j = w[-1, -1], mi[-1, -1], mj[-1, -1]

    def upper(sat):
        # mass strictly above (s, t) in both coordinates
        total = sat[-1, -1]
        return total - sat[:, -1][:, None] - sat[-1, :][None, :] + sat

    w0, w1 = w, upper(w)
    i0, i1 = mi, upper(mi)
    j0, j1 = mj, upper(mj)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (((i0 / w0 - tot_i) ** 2 + (j0 / w0 - tot_j) ** 2) * w0
                 + ((i1 / w1 - tot_i) ** 2 + (j1 / w1 - tot_j) ** 2) * w1)
    eps = 1e-12
    score = np.where((w0 > eps) & (w1 > eps), score, -np.inf)
    if not np.isfinite(score).any():
        raise DegenerateInputError("no threshold pair separates two non-empty classes")
    s, t = np.unravel_index(int(np.argmax(score)), score.shape)
    return int(s), int(t)


def otsu2d(img: MagnitudeImage) -> BinaryMask:
    s, t = otsu2d_thresholds(img)
    q = quantize(img.data)
    m = neighborhood_mean_levels(q)
    return BinaryMask((q > s) & (m > t))


# --- watershed regions ------------------------------------------------------

def _find(parent: dict, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        parent[a], a = root, parent[a]
    return root


def watershed_basins(values: np.ndarray, mask: np.ndarray,
                     merge_ratio: float = MERGE_RATIO,
                     flood_floor_db: float = FLOOD_FLOOR_DB) -> tuple[np.ndarray, dict]:
    """Flood masked pixels from the top down; returns a label image (-1 = none)
    and a map from label to its peak pixel."""
    rows, cols = values.shape
    top = float(values[mask].max()) if mask.any() else 0.0
    floor = top * 10 ** (flood_floor_db / 20.0)
    cand = mask & (values > 0) & (values >= floor)
    idx = np.flatnonzero(cand)
    order = idx[np.argsort(-values.ravel()[idx], kind="stable")]

    flat = values.ravel()
    parent: dict[int, int] = {}
    peak_of: dict[int, int] = {}
    owner = np.full(rows * cols, -1, dtype=np.int64)
    for p in order:
        r, c = divmod(int(p), cols)
        v = flat[p]
        roots = set()
        for dr, dc in _NEIGHBORS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                o = owner[rr * cols + cc]
                if o >= 0:
                    roots.add(_find(parent, int(o)))
        if not roots:
            parent[int(p)] = int(p)
            peak_of[int(p)] = int(p)
            owner[p] = p
            continue
        ranked = sorted(roots, key=lambda k: (-flat[peak_of[k]], peak_of[k]))
        best = ranked[0]
        for other in ranked[1:]:
            if v >= merge_ratio * flat[peak_of[other]]:
                parent[other] = best
        owner[p] = best

    labels = np.full(rows * cols, -1, dtype=np.int64)
    assigned = owner >= 0
    labels[assigned] = [_find(parent, int(o)) for o in owner[assigned]]
    peaks = {lab: divmod(peak_of[lab], cols) for lab in set(labels[assigned].tolist())}
    return labels.reshape(rows, cols), peaks


def region_shape(pixels: np.ndarray) -> tuple[tuple[float, float], float]:
    """Major/minor axis lengths (px) and orientation of the second-moment ellipse.

    Lengths use sqrt(12 var + 1), so an n-pixel line measures n.
    """
    pts = pixels.astype(np.float64)
    if len(pts) < 2:
        return (1.0, 1.0), 0.0
    cov = np.cov(pts.T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    major = math.sqrt(12.0 * evals[1] + 1.0)
    minor = math.sqrt(12.0 * evals[0] + 1.0)
    u_row, u_col = evecs[0, 1], evecs[1, 1]
    angle = math.atan2(u_row, u_col)
    if angle > math.pi / 2:
        angle -= math.pi
    elif angle <= -math.pi / 2:
        angle += math.pi
    return (major, minor), angle


def make_region(values: np.ndarray, basin: np.ndarray, peak: tuple[int, int],
                floor_db: float = REGION_FLOOR_DB) -> Region:
    peak_value = float(values[peak])
    keep = basin & (values >= peak_value * 10 ** (floor_db / 20.0))
    keep[peak] = True
    pixels = np.argwhere(keep)
    extent, orientation = region_shape(pixels)
    return Region(pixels, (int(peak[0]), int(peak[1])), peak_value, extent, orientation)


def extract_max_region(residual: MagnitudeImage, mask: BinaryMask,
                       existing: Sequence[Region] = (), dmax: float = 20.0) -> Region:
    """Strongest acceptable watershed region of ``residual`` inside ``mask``.

    A candidate whose peak lies farther than ``dmax`` pixels from every
    existing region peak is rejected and the next strongest basin is tried.
    """
    values = residual.data
    if mask.shape != values.shape:
        raise DimensionError("mask and image shapes differ")
    m = mask.data
    if not m.any() or not (values[m] > 0).any():
        raise NoRegionError("no masked pixel above zero")
    labels, peaks = watershed_basins(values, m)
    order = sorted(peaks, key=lambda lab: (-values[peaks[lab]], peaks[lab]))
    anchors = np.array([r.peak for r in existing], dtype=np.float64).reshape(-1, 2)
    for lab in order:
        pk = peaks[lab]
        if len(anchors):
            d = np.sqrt(((anchors - np.array(pk, dtype=np.float64)) ** 2).sum(axis=1)).min()
            if d > dmax:
                continue
        return make_region(values, labels == lab, pk)
    raise NoRegionError("every candidate peak violates the distance constraint")


def classify_region_kind(r: Region, pixel_spacing) -> Kind:
    """Distributed when the major axis spans more than three resolution cells."""
    dx, dy = pixel_spacing
    (major, _), theta = r.extent, r.orientation
    # unit vector of the major axis in (row, col) pixel units
    cell = math.hypot(math.sin(theta) * dx, math.cos(theta) * dy)
    return Kind.DISTRIBUTED if major * cell > DISTRIBUTED_CELLS * cell + 1e-9 else Kind.LOCAL
