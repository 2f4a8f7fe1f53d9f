"""Greedy regional-decoupling ASC extraction with CLEAN subtraction."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .asc_model import (ALPHA_GRID, Kind, ScatteringCenter, ScatterSet, SubgridSynth,
                        fit_percentage, synthesize_image)
from .core_types import (C_LIGHT, ComplexImage, MagnitudeImage, image_energy, magnitude,
                         pixel_to_physical)
from .errors import (DimensionError, InvalidInputError, InvalidParameterError,
                     InvalidStartError, NoRegionError)
from .optim import OptOptions, bfgs, refine_best
from .segmentation import (BinaryMask, Region, classify_region_kind, extract_max_region,
                           otsu2d)

log = logging.getLogger(__name__)

# the Otsu mask is computed on a log-compressed magnitude so weak centers
# are not swamped by the strongest one
MASK_DYNAMIC_RANGE_DB = 40.0
# bound on the continuous alpha used while profiling
ALPHA_LIMIT = 1.5
# brightest support pixels tried as alternative starting positions
SEED_PIXELS = 5


@dataclass(frozen=True)
class ExtractionConfig:
    max_fit: float = 0.95
    min_peak_db: float = -20.0
    max_centers: int = 25
    dmax: float = 20.0
    # pixels added around a region before fitting
    support_dilation: int = 2
    # re-fit sweeps over all centers once the greedy loop stops
    relax_passes: int = 2
    opt: OptOptions = field(default_factory=lambda: OptOptions(tol=1e-7, max_iter=200, x_tol=1e-5))

    def __post_init__(self):
        if not 0 < self.max_fit <= 1:
            raise InvalidParameterError(f"max_fit must be in (0, 1], got {self.max_fit}")
        if not self.min_peak_db < 0:
            raise InvalidParameterError(f"min_peak_db must be negative, got {self.min_peak_db}")
        if self.max_centers < 1:
            raise InvalidParameterError("max_centers must be >= 1")
        if self.relax_passes < 0 or self.support_dilation < 0:
            raise InvalidParameterError("relax_passes and support_dilation must be >= 0")


@dataclass
class IterationRecord:
    peak_db: float
    center: ScatteringCenter | None
    residual_energy: float
    fit: float
    optimizer: str
    accepted: bool = True
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        c = self.center
        return {
            "peak_db": self.peak_db,
            "center": None if c is None else {
                "A": c.A, "alpha": c.alpha, "L": c.L, "phi_bar_rad": c.phi_bar,
                "gamma": c.gamma, "x_m": c.x, "y_m": c.y, "kind": c.kind.value},
            "residual_energy": self.residual_energy,
            "fit": self.fit,
            "optimizer": self.optimizer,
            "accepted": self.accepted,
            "flags": list(self.flags),
        }


@dataclass
class ExtractionTrace:
    records: list[IterationRecord] = field(default_factory=list)
    termination: str = ""
    initial_energy: float = 0.0
    relax_energy: list[float] = field(default_factory=list)

    def accepted(self) -> list[IterationRecord]:
        return [r for r in self.records if r.accepted]

    def to_dict(self) -> dict:
        return {
            "termination": self.termination,
            "initial_energy": self.initial_energy,
            "relax_energy": list(self.relax_energy),
            "iterations": [r.to_dict() for r in self.records],
        }


# --- initial estimate -------------------------------------------------------

def initial_params(r: Region, residual: ComplexImage) -> ScatteringCenter:
    """Starting attributes read off a region of the residual image.

    The amplitude is the peak magnitude divided by sqrt(rows * cols), which is
    the gain of the unitary image transform for an on-grid point.
    """
    if len(r) == 0:
        raise InvalidInputError("empty region")
    A = float(abs(residual.data[r.peak])) / math.sqrt(residual.rows * residual.cols)
    x, y = pixel_to_physical(residual, *r.peak)
    kind = classify_region_kind(r, residual.pixel_spacing)
    if kind is Kind.DISTRIBUTED:
        dx, dy = residual.pixel_spacing
        theta = r.orientation
        length = r.extent[0] * math.hypot(math.sin(theta) * dx, math.cos(theta) * dy)
        return ScatteringCenter(A=A, L=length, phi_bar=theta, x=x, y=y, kind=kind)
    return ScatteringCenter(A=A, x=x, y=y, kind=Kind.LOCAL)


# --- refinement ---------------------------------------------------------------

class _RegionFit:
    """Cost evaluation of one center against a target restricted to a pixel support."""

    def __init__(self, target: ComplexImage, support: np.ndarray, theta0: ScatteringCenter):
        cfg = target.config
        rows = np.flatnonzero(support.any(axis=1))
        cols = np.flatnonzero(support.any(axis=0))
        self.cfg = cfg
        self.kind = theta0.kind
        self.synth = SubgridSynth(cfg, rows, cols)
        self.sel = support[np.ix_(rows, cols)]
        self.R = target.data[np.ix_(rows, cols)][self.sel]
        self.norm = float(np.vdot(self.R, self.R).real) or 1.0
        dx, dy = target.pixel_spacing
        self.dx, self.dy = dx, dy
        self.a_scale = max(theta0.A, 1e-12 * math.sqrt(self.norm))
        self.l_scale = dy
        self.phi_scale = cfg.aspect_span / 8.0
        self.g_scale = 1.0 / (2 * math.pi * cfg.fc * max(math.sin(cfg.aspect_span / 2), 1e-12))
        self.carrier = 4 * math.pi * cfg.fc / C_LIGHT

    # shape vector: x, y, then (L, phi_bar) or (gamma)
    def shape_vec(self, c: ScatteringCenter) -> np.ndarray:
        v = [c.x / self.dx, c.y / self.dy]
        if self.kind is Kind.DISTRIBUTED:
            v += [c.L / self.l_scale, c.phi_bar / self.phi_scale]
        else:
            v += [c.gamma / self.g_scale]
        return np.array(v)

    def center(self, A: float, alpha: float, s: np.ndarray) -> ScatteringCenter:
        x, y = s[0] * self.dx, s[1] * self.dy
        if self.kind is Kind.DISTRIBUTED:
            return ScatteringCenter(A=abs(A), alpha=alpha, L=abs(s[2]) * self.l_scale,
                                    phi_bar=s[3] * self.phi_scale, x=x, y=y, kind=self.kind)
        return ScatteringCenter(A=abs(A), alpha=alpha, gamma=s[2] * self.g_scale, x=x, y=y)

    def model(self, c: ScatteringCenter) -> np.ndarray:
        return self.synth.center_image(c)[self.sel]

    def cost(self, c: ScatteringCenter) -> float:
        d = self.R - self.model(c)
        return float(np.vdot(d, d).real) / self.norm

    def profiled(self, alpha: float, s: np.ndarray) -> tuple[float, complex]:
        """Cost with the best complex amplitude; returns (cost, amplitude)."""
        g = self.model(self.center(1.0, alpha, s))
        gg = float(np.vdot(g, g).real)
        if gg <= 0:
            return 1.0, 0j
        a = np.vdot(g, self.R) / gg
        # explicit residual rather than 1 - |<g,R>|^2/..., which cancels near zero
        d = self.R - a * g
        return float(np.vdot(d, d).real) / self.norm, a

    def realize(self, alpha: float, s: np.ndarray) -> tuple[float, np.ndarray]:
        """Turn the best complex amplitude into a real one by moving the center
        along range until the carrier phase absorbs the amplitude phase."""
        _, a = self.profiled(alpha, s)
        s = s.copy()
        if a != 0:
            psi = math.atan2(a.imag, a.real)
            s[0] -= psi / self.carrier / self.dx
            _, a = self.profiled(alpha, s)
        return abs(a), s


def _dilate(mask: np.ndarray, k: int) -> np.ndarray:
    out = mask.copy()
    rows, cols = mask.shape
    for _ in range(k):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _seed(fit: _RegionFit, target: ComplexImage, support: np.ndarray,
          theta0: ScatteringCenter) -> np.ndarray:
    """Starting shape vector: theta0, or theta0 moved onto one of the brightest
    support pixels if that profiles better. A start more than a pixel off sits
    near a sinc null where the cost surface is flat."""
    s0 = fit.shape_vec(theta0)
    best = (fit.profiled(theta0.alpha, s0)[0], s0)
    if not np.isfinite(best[0]):
        return s0
    idx = np.flatnonzero(support.ravel())
    mags = np.abs(target.data.ravel()[idx])
    for flat in idx[np.argsort(-mags, kind="stable")[:SEED_PIXELS]]:
        x, y = pixel_to_physical(target, *np.unravel_index(flat, support.shape))
        s = s0.copy()
        s[0], s[1] = x / fit.dx, y / fit.dy
        v = fit.profiled(theta0.alpha, s)[0]
        if v < best[0]:
            best = (v, s)
    return best[1]


@dataclass
class _Refined:
    center: ScatteringCenter
    cost: float
    optimizer: str
    flags: tuple[str, ...] = ()


def _refine(target: ComplexImage, theta0: ScatteringCenter, support: np.ndarray,
            opts: OptOptions) -> _Refined:
    fit = _RegionFit(target, support, theta0)
    s0 = _seed(fit, target, support, theta0)
    flags: list[str] = []

    # stage 1: shape and a continuous alpha under the best complex amplitude
    def prof(v):
        return fit.profiled(min(max(v[0], -ALPHA_LIMIT), ALPHA_LIMIT), v[1:])[0]

    try:
        r1 = bfgs(prof, np.concatenate([[theta0.alpha], s0]), opts)
        shape = r1.x_min[1:]
    except InvalidStartError:
        flags.append("invalid_start")
        return _Refined(theta0, fit.cost(theta0), "none", tuple(flags))

    # stage 2: for each grid alpha, convert to a real amplitude and keep the best
    best = None
    for alpha in ALPHA_GRID:
        A, s = fit.realize(alpha, shape)
        c = fit.center(A, alpha, s)
        v = fit.cost(c)
        if best is None or v < best[0]:
            best = (v, alpha, A, s)
    _, alpha, A, s = best

    # stage 3: joint polish of the real parameters with alpha held on the grid.
    # With a real amplitude the cost oscillates with the carrier phase along
    # range, so range is expressed in carrier radians here.
    xs = fit.carrier * fit.dx

    def unpack(v):
        shape = v[1:].copy()
        shape[0] /= xs
        return fit.center(v[0] * fit.a_scale, alpha, shape)

    v0 = np.concatenate([[A / fit.a_scale], s])
    v0[1] *= xs
    res = refine_best(lambda v: fit.cost(unpack(v)), v0, opts)
    c = unpack(res.x_min)
    cost = res.f_min
    if not res.converged:
        flags.append("not_converged")

    # final discrete alpha re-selection with everything else fixed
    for a in ALPHA_GRID:
        cand = c.replace(alpha=a)
        v = fit.cost(cand)
        if v < cost:
            c, cost = cand, v
    start_cost = fit.cost(theta0)
    if start_cost < cost:
        flags.append("kept_start")
        return _Refined(theta0, start_cost, res.method, tuple(flags))
    return _Refined(c, cost, res.method, tuple(flags))


def refine_center(observed_region: ComplexImage, theta0: ScatteringCenter,
                  support: np.ndarray | None = None,
                  opts: OptOptions | None = None) -> ScatteringCenter:
    """Fit one center to ``observed_region`` over ``support``.

    Without an explicit support the non-zero pixels of ``observed_region`` are
    used, or the whole grid if it has none.
    """
    if support is None:
        support = observed_region.data != 0
        if not support.any():
            support = np.ones(observed_region.shape, dtype=bool)
    opts = opts or ExtractionConfig().opt
    return _refine(observed_region, theta0, np.asarray(support, dtype=bool), opts).center


def clean_subtract(residual: ComplexImage, c: ScatteringCenter) -> ComplexImage:
    cfg = residual.config
    if residual.shape != (cfg.nf, cfg.nphi):
        raise DimensionError(
            f"residual grid {residual.shape} does not match radar grid {(cfg.nf, cfg.nphi)}")
    return residual.with_data(residual.data - synthesize_image(ScatterSet([c]), cfg).data)


# --- main loop ------------------------------------------------------------------

def segmentation_mask(observed: ComplexImage) -> BinaryMask:
    mag = magnitude(observed).data
    peak = mag.max()
    floor = peak * 10 ** (-MASK_DYNAMIC_RANGE_DB / 20.0)
    db = 20 * np.log10(np.maximum(mag, floor) / peak)
    scaled = 1.0 + db / MASK_DYNAMIC_RANGE_DB
    return otsu2d(MagnitudeImage(scaled, observed.config, observed.pixel_spacing))


def _relax(observed: ComplexImage, centers: list[ScatteringCenter], supports: list[np.ndarray],
           cfg: ExtractionConfig, trace: ExtractionTrace) -> list[ScatteringCenter]:
    """Re-fit each center against the observation minus all the others."""
    grid = observed.config
    images = [synthesize_image(ScatterSet([c]), grid).data for c in centers]
    total = sum(images) if images else np.zeros(observed.shape, complex)
    energy = image_energy(observed.with_data(observed.data - total))
    for _ in range(cfg.relax_passes):
        for j, c in enumerate(centers):
            others = total - images[j]
            target = observed.with_data(observed.data - others)
            ref = _refine(target, c, supports[j], cfg.opt)
            img = synthesize_image(ScatterSet([ref.center]), grid).data
            new_total = others + img
            e = image_energy(observed.with_data(observed.data - new_total))
            if e <= energy:
                centers[j], images[j], total, energy = ref.center, img, new_total, e
        trace.relax_energy.append(energy)
    return centers


def extract_all(observed: ComplexImage, cfg: ExtractionConfig | None = None
                ) -> tuple[ScatterSet, ExtractionTrace]:
    cfg = cfg or ExtractionConfig()
    grid = observed.config
    if observed.shape != (grid.nf, grid.nphi):
        raise DimensionError("observed image does not match its radar grid")
    e0 = image_energy(observed)
    if not e0 > 0:
        raise InvalidInputError("observed image has zero energy")

    trace = ExtractionTrace(initial_energy=e0)
    mask = segmentation_mask(observed).data.copy()
    global_peak = float(np.abs(observed.data).max())
    residual = observed
    energy = e0
    centers: list[ScatteringCenter] = []
    regions: list[Region] = []
    supports: list[np.ndarray] = []

    while True:
        if len(centers) >= cfg.max_centers:
            trace.termination = "max_centers"
            break
        if centers and fit_percentage(observed, ScatterSet(centers)) >= cfg.max_fit:
            trace.termination = "fit"
            break
        try:
            region = extract_max_region(magnitude(residual), BinaryMask(mask), regions, cfg.dmax)
        except NoRegionError:
            trace.termination = "no_region"
            break
        peak_db = 20 * math.log10(max(region.peak_value, 1e-300) / global_peak)
        if peak_db < cfg.min_peak_db:
            trace.termination = "peak_db"
            break

        theta0 = initial_params(region, residual)
        support = _dilate(region.mask(residual.shape), cfg.support_dilation)
        ref = _refine(residual, theta0, support, cfg.opt)
        flags = list(ref.flags)
        candidate = ref.center
        new_residual = clean_subtract(residual, candidate)
        new_energy = image_energy(new_residual)
        if new_energy > energy:
            flags.append("rejected_refinement")
            candidate = theta0
            new_residual = clean_subtract(residual, candidate)
            new_energy = image_energy(new_residual)
        if new_energy > energy:
            # neither estimate helps; drop the region from the search
            flags.append("region_suppressed")
            mask[region.pixels[:, 0], region.pixels[:, 1]] = False
            trace.records.append(IterationRecord(peak_db, None, energy,
                                                 fit_percentage(observed, ScatterSet(centers)) if centers else 0.0,
                                                 ref.optimizer, False, tuple(flags)))
            continue

        residual, energy = new_residual, new_energy
        centers.append(candidate)
        regions.append(region)
        supports.append(support)
        trace.records.append(IterationRecord(peak_db, candidate, energy,
                                             fit_percentage(observed, ScatterSet(centers)),
                                             ref.optimizer, True, tuple(flags)))

    if cfg.relax_passes and centers:
        centers = _relax(observed, centers, supports, cfg, trace)
    return ScatterSet(tuple(centers)), trace
