"""SAR data model, radar geometry, preprocessing and the CSAR container."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidInputError, InvalidParameterError

C_LIGHT = 299_792_458.0

# 0.3 m x 0.3 m at X-band
DEFAULT_FC = 9.6e9
DEFAULT_RESOLUTION = 0.3
DEFAULT_BANDWIDTH = C_LIGHT / (2.0 * DEFAULT_RESOLUTION)
DEFAULT_ASPECT_SPAN = C_LIGHT / (2.0 * DEFAULT_FC * DEFAULT_RESOLUTION)

CSAR_DTYPE = "c64le-interleaved-f32"


@dataclass(frozen=True)
class RadarConfig:
    fc: float = DEFAULT_FC
    bandwidth: float = DEFAULT_BANDWIDTH
    aspect_center: float = 0.0
    aspect_span: float = DEFAULT_ASPECT_SPAN
    depression: float = math.radians(17.0)
    squint: float = 0.0
    nf: int = 128
    nphi: int = 128

    def __post_init__(self):
        if not self.fc > 0:
            raise InvalidParameterError(f"fc must be positive, got {self.fc}")
        if not self.bandwidth > 0:
            raise InvalidParameterError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.nf < 2 or self.nphi < 2:
            raise InvalidParameterError("nf and nphi must be >= 2")
        if not abs(self.depression) < math.pi / 2:
            raise InvalidParameterError("|depression| must be < pi/2")

    @property
    def range_resolution(self) -> float:
        return C_LIGHT / (2.0 * self.bandwidth)

    @property
    def cross_resolution(self) -> float:
        return C_LIGHT / (2.0 * self.fc * self.aspect_span)

    @property
    def pixel_spacing(self) -> tuple[float, float]:
        return (self.range_resolution, self.cross_resolution)

    def frequencies(self) -> np.ndarray:
        """Frequency samples, nf points starting at fc - B/2 with step B/nf."""
        k = np.arange(self.nf) - self.nf // 2
        return self.fc + k * (self.bandwidth / self.nf)

    def aspects(self) -> np.ndarray:
        l = np.arange(self.nphi) - self.nphi // 2
        return self.aspect_center + l * (self.aspect_span / self.nphi)

    def with_grid(self, nf: int, nphi: int) -> RadarConfig:
        return replace(self, nf=nf, nphi=nphi)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ComplexImage:
    """Complex image: rows are range bins, columns cross-range bins."""

    data: np.ndarray
    config: RadarConfig = field(default_factory=RadarConfig)
    pixel_spacing: tuple[float, float] | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise DimensionError(f"expected a 2-D grid, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))
        spacing = self.pixel_spacing or self.config.pixel_spacing
        spacing = (float(spacing[0]), float(spacing[1]))
        if spacing[0] <= 0 or spacing[1] <= 0:
            raise InvalidParameterError("pixel spacing must be positive")
        object.__setattr__(self, "pixel_spacing", spacing)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> ComplexImage:
        return ComplexImage(data, self.config, self.pixel_spacing)


@dataclass(frozen=True)
class MagnitudeImage:
    data: np.ndarray
    config: RadarConfig = field(default_factory=RadarConfig)
    pixel_spacing: tuple[float, float] | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"expected a 2-D grid, got shape {data.shape}")
        if np.any(data < 0):
            raise InvalidInputError("magnitude images must be non-negative")
        object.__setattr__(self, "data", _frozen(data))
        spacing = self.pixel_spacing or self.config.pixel_spacing
        object.__setattr__(self, "pixel_spacing", (float(spacing[0]), float(spacing[1])))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> MagnitudeImage:
        return MagnitudeImage(data, self.config, self.pixel_spacing)


def magnitude(img: ComplexImage) -> MagnitudeImage:
    return MagnitudeImage(np.abs(img.data), img.config, img.pixel_spacing)


def gamma_transform(img: MagnitudeImage, a: float = 1.0, gamma: float = 0.6) -> MagnitudeImage:
    """Contrast adjustment ``a * v**gamma`` after normalizing by the image max."""
    if not gamma > 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    peak = img.data.max() if img.data.size else 0.0
    if peak <= 0:
        return img.with_data(np.zeros_like(img.data))
    return img.with_data(a * np.power(img.data / peak, gamma))


def crop_center(img, out_rows: int, out_cols: int):
    """Centered window; an odd margin loses its extra line on the high-index side."""
    if out_rows > img.rows or out_cols > img.cols or out_rows < 1 or out_cols < 1:
        raise DimensionError(
            f"cannot crop {img.rows}x{img.cols} to {out_rows}x{out_cols}")
    r0 = (img.rows - out_rows) // 2
    c0 = (img.cols - out_cols) // 2
    return img.with_data(img.data[r0:r0 + out_rows, c0:c0 + out_cols].copy())


def image_energy(img) -> float:
    d = img.data
    if np.iscomplexobj(d):
        return float(np.sum(d.real ** 2 + d.imag ** 2))
    return float(np.sum(d * d))


def pixel_to_physical(img, row: float, col: float) -> tuple[float, float]:
    """Map a pixel coordinate to (range, cross-range) metres; the grid center is the origin."""
    dx, dy = img.pixel_spacing
    return ((row - img.rows // 2) * dx, (col - img.cols // 2) * dy)


def physical_to_pixel(img, x: float, y: float) -> tuple[float, float]:
    dx, dy = img.pixel_spacing
    return (x / dx + img.rows // 2, y / dy + img.cols // 2)


# --- CSAR container -------------------------------------------------------

def _csar_header(img: ComplexImage) -> dict:
    cfg = img.config
    return {
        "rows": img.rows,
        "cols": img.cols,
        "dtype": CSAR_DTYPE,
        "fc_hz": float(cfg.fc),
        "bandwidth_hz": float(cfg.bandwidth),
        "aspect_center_rad": float(cfg.aspect_center),
        "aspect_span_rad": float(cfg.aspect_span),
        "depression_rad": float(cfg.depression),
        "squint_rad": float(cfg.squint),
        "range_res_m": float(img.pixel_spacing[0]),
        "cross_res_m": float(img.pixel_spacing[1]),
    }


def csar_bytes(img: ComplexImage) -> bytes:
    header = json.dumps(_csar_header(img)).encode("utf-8") + b"\n"
    body = np.empty((img.rows, img.cols, 2), dtype="<f4")
    body[..., 0] = img.data.real
    body[..., 1] = img.data.imag
    return header + body.tobytes()


def csar_from_bytes(raw: bytes) -> ComplexImage:
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("dtype") != CSAR_DTYPE:
        raise InvalidInputError(f"unsupported CSAR dtype {header.get('dtype')!r}")
    rows, cols = int(header["rows"]), int(header["cols"])
    body = np.frombuffer(raw[nl + 1:], dtype="<f4")
    if body.size != rows * cols * 2:
        raise DimensionError(f"CSAR body has {body.size} floats, expected {rows * cols * 2}")
    body = body.reshape(rows, cols, 2).astype(np.float64)
    cfg = RadarConfig(
        fc=header["fc_hz"],
        bandwidth=header["bandwidth_hz"],
        aspect_center=header["aspect_center_rad"],
        aspect_span=header["aspect_span_rad"],
        depression=header["depression_rad"],
        squint=header["squint_rad"],
        nf=rows,
        nphi=cols,
    )
    data = body[..., 0] + 1j * body[..., 1]
    return ComplexImage(data, cfg, (header["range_res_m"], header["cross_res_m"]))


def write_csar(path, img: ComplexImage) -> None:
    Path(path).write_bytes(csar_bytes(img))


def read_csar(path) -> ComplexImage:
    return csar_from_bytes(Path(path).read_bytes())


def write_pgm(path, values: np.ndarray) -> None:
    """Write a 2-D array as an 8-bit binary PGM, scaled to its own max."""
    v = np.asarray(values, dtype=np.float64)
    peak = v.max() if v.size else 0.0
    scaled = np.zeros(v.shape, dtype=np.uint8) if peak <= 0 else np.clip(
        np.round(255.0 * v / peak), 0, 255).astype(np.uint8)
    rows, cols = scaled.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + scaled.tobytes())
