"""Attributed-scattering-center forward model and image synthesis."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_types import C_LIGHT, ComplexImage, RadarConfig, image_energy
from .errors import DimensionError, InvalidInputError, InvalidParameterError

ALPHA_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)
SINC_EPS = 1e-12


class Kind(str, Enum):
    LOCAL = "Local"
    DISTRIBUTED = "Distributed"


@dataclass(frozen=True)
class ScatteringCenter:
    A: float
    alpha: float = 0.0
    L: float = 0.0
    phi_bar: float = 0.0
    gamma: float = 0.0
    x: float = 0.0
    y: float = 0.0
    kind: Kind = Kind.LOCAL

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.A < 0:
            raise InvalidParameterError(f"amplitude must be non-negative, got {self.A}")
        if self.L < 0:
            raise InvalidParameterError(f"length must be non-negative, got {self.L}")
        if self.kind is Kind.LOCAL and (self.L != 0 or self.phi_bar != 0):
            raise InvalidParameterError("Local centers require L = 0 and phi_bar = 0")
        if self.kind is Kind.DISTRIBUTED and self.gamma != 0:
            raise InvalidParameterError("Distributed centers require gamma = 0")

    def replace(self, **changes) -> ScatteringCenter:
        return replace(self, **changes)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.A, self.alpha, self.L, self.phi_bar, self.gamma, self.x, self.y)


@dataclass(frozen=True)
class ScatterSet:
    centers: tuple[ScatteringCenter, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(self.centers))

    @property
    def count(self) -> int:
        return len(self.centers)

    def __len__(self) -> int:
        return len(self.centers)

    def __iter__(self):
        return iter(self.centers)

    def __getitem__(self, i):
        return self.centers[i]

    def __add__(self, other: ScatterSet) -> ScatterSet:
        return ScatterSet(self.centers + tuple(other.centers))


def _sinc(u):
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < SINC_EPS
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 - u * u / 6.0, np.sin(safe) / safe)


def _freq_factor(alpha: float, f, fc: float):
    if alpha == 0:
        return np.ones_like(np.asarray(f, dtype=np.float64), dtype=np.complex128)
    return np.power(1j * np.asarray(f, dtype=np.float64) / fc, alpha)


def eval_response(c: ScatteringCenter, f, phi, cfg: RadarConfig):
    """Backscatter of one center at frequency ``f`` (Hz) and aspect ``phi`` (rad).

    Broadcasts over array-valued ``f`` and ``phi``.
    """
    f = np.asarray(f, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    out = c.A * _freq_factor(c.alpha, f, cfg.fc)
    if c.L != 0:
        out = out * _sinc(2 * np.pi * f / C_LIGHT * c.L * np.sin(phi - c.phi_bar))
    out = out * np.exp(-1j * 4 * np.pi * f / C_LIGHT * (c.x * np.cos(phi) + c.y * np.sin(phi)))
    if c.gamma != 0:
        out = out * np.exp(-2 * np.pi * f * c.gamma * np.sin(phi))
    if out.ndim == 0:
        return complex(out)
    return out


def eval_total(s: ScatterSet, f, phi, cfg: RadarConfig):
    shape = np.broadcast(np.asarray(f), np.asarray(phi)).shape
    total = np.zeros(shape, dtype=np.complex128)
    for c in s:
        total = total + eval_response(c, f, phi, cfg)
    if total.ndim == 0:
        return complex(total)
    return total


@lru_cache(maxsize=32)
def _grid(cfg: RadarConfig):
    f = cfg.frequencies()
    phi = cfg.aspects()
    return f[:, None], phi[None, :], np.cos(phi)[None, :], np.sin(phi)[None, :]


def _ramp(w: np.ndarray, f: np.ndarray) -> np.ndarray:
    """exp(f w) on the outer grid; f is uniformly spaced, so rows follow by
    repeated multiplication instead of one exponential per sample."""
    f0 = float(f[0, 0])
    df = float(f[1, 0] - f[0, 0]) if f.shape[0] > 1 else 0.0
    out = np.empty((f.shape[0], w.shape[1]), dtype=np.complex128)
    out[0] = np.exp(f0 * w[0])
    out[1:] = np.exp(df * w[0])
    return np.cumprod(out, axis=0)


def center_spectrum(c: ScatteringCenter, cfg: RadarConfig) -> np.ndarray:
    """Sampled nf x nphi spectrum of one center on the radar grid."""
    f, phi, cos_p, sin_p = _grid(cfg)
    # phase ramp and aspect damping share one exponential
    w = (-1j * 4 * np.pi / C_LIGHT) * (c.x * cos_p + c.y * sin_p)
    if c.gamma != 0:
        w = w - 2 * np.pi * c.gamma * sin_p
    spec = _ramp(w, f)
    if c.alpha != 0:
        spec *= c.A * _freq_factor(c.alpha, f, cfg.fc)
    else:
        spec *= c.A
    if c.L != 0:
        spec *= _sinc(2 * np.pi * f / C_LIGHT * c.L * np.sin(phi - c.phi_bar))
    return spec


def scene_spectrum(s: ScatterSet, cfg: RadarConfig) -> np.ndarray:
    spec = np.zeros((cfg.nf, cfg.nphi), dtype=np.complex128)
    for c in s:
        spec += center_spectrum(c, cfg)
    return spec


def spectrum_to_image(spec: np.ndarray) -> np.ndarray:
    """Unitary 2-D inverse DFT with the zero position moved to the grid center."""
    return np.fft.fftshift(np.fft.ifft2(spec, norm="ortho"))


def synthesize_image(s: ScatterSet, cfg: RadarConfig) -> ComplexImage:
    return ComplexImage(spectrum_to_image(scene_spectrum(s, cfg)), cfg, cfg.pixel_spacing)


def _check_grid(observed: ComplexImage):
    cfg = observed.config
    if observed.shape != (cfg.nf, cfg.nphi):
        raise DimensionError(
            f"image grid {observed.shape} does not match radar grid {(cfg.nf, cfg.nphi)}")


def reconstruction_cost(observed: ComplexImage, s: ScatterSet) -> float:
    _check_grid(observed)
    diff = observed.data - synthesize_image(s, observed.config).data
    return float(np.sum(diff.real ** 2 + diff.imag ** 2))


def fit_percentage(observed: ComplexImage, s: ScatterSet) -> float:
    """Energy of the reconstruction over the energy of the observed image, clamped to [0, 1]."""
    _check_grid(observed)
    total = image_energy(observed)
    if total <= 0:
        raise InvalidInputError("observed image has zero energy")
    if len(s) == 0:
        return 0.0
    ratio = image_energy(synthesize_image(s, observed.config)) / total
    return min(max(ratio, 0.0), 1.0)


class SubgridSynth:
    """Evaluates the synthesized image on a rectangular pixel window only.

    Equivalent to cropping ``synthesize_image`` but costs two thin matrix
    products instead of a full-grid FFT.
    """

    def __init__(self, cfg: RadarConfig, rows: Sequence[int], cols: Sequence[int]):
        self.cfg = cfg
        self.rows = np.asarray(rows, dtype=int)
        self.cols = np.asarray(cols, dtype=int)
        k = np.arange(cfg.nf)
        l = np.arange(cfg.nphi)
        r = self.rows - cfg.nf // 2
        cc = self.cols - cfg.nphi // 2
        self._fr = np.exp(2j * np.pi * np.outer(r, k) / cfg.nf) / math.sqrt(cfg.nf)
        self._fc = np.exp(2j * np.pi * np.outer(l, cc) / cfg.nphi) / math.sqrt(cfg.nphi)

    def image(self, s: ScatterSet | Iterable[ScatteringCenter]) -> np.ndarray:
        spec = np.zeros((self.cfg.nf, self.cfg.nphi), dtype=np.complex128)
        for c in s:
            spec += center_spectrum(c, self.cfg)
        return self._fr @ spec @ self._fc

    def center_image(self, c: ScatteringCenter) -> np.ndarray:
        return self._fr @ center_spectrum(c, self.cfg) @ self._fc


# --- ScatterSet JSON -------------------------------------------------------

_JSON_FIELDS = ("A", "alpha", "L", "phi_bar_rad", "gamma", "x_m", "y_m", "kind")


def _num(v: float) -> str:
    if not math.isfinite(v):
        raise InvalidInputError(f"cannot serialize non-finite value {v}")
    return "%.9g" % v


def scatterset_to_json(s: ScatterSet) -> str:
    items = []
    for c in s:
        vals = (c.A, c.alpha, c.L, c.phi_bar, c.gamma, c.x, c.y)
        body = ", ".join(f'"{k}": {_num(v)}' for k, v in zip(_JSON_FIELDS[:-1], vals))
        items.append("{" + body + f', "kind": "{c.kind.value}"' + "}")
    return "[" + ",\n ".join(items) + "]\n"


def scatterset_from_json(text: str) -> ScatterSet:
    centers = []
    for obj in json.loads(text):
        centers.append(ScatteringCenter(
            A=float(obj["A"]), alpha=float(obj["alpha"]), L=float(obj["L"]),
            phi_bar=float(obj["phi_bar_rad"]), gamma=float(obj["gamma"]),
            x=float(obj["x_m"]), y=float(obj["y_m"]), kind=Kind(obj["kind"])))
    return ScatterSet(tuple(centers))


def write_scatterset(path, s: ScatterSet) -> None:
    Path(path).write_text(scatterset_to_json(s))


def read_scatterset(path) -> ScatterSet:
    return scatterset_from_json(Path(path).read_text())
