"""Synthetic target classes: layouts of scattering centers with azimuth visibility."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..asc_model import Kind, ScatteringCenter, ScatterSet
from ..core_types import RadarConfig
from ..errors import InvalidParameterError

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Component:
    """A template center in ground coordinates with its visibility window.

    ``window`` is (start, width) in radians of target azimuth; width 2*pi means
    always visible.
    """

    center: ScatteringCenter
    window: tuple[float, float] = (0.0, TWO_PI)
    jitter: float = 0.1

    def visible(self, azimuth: float) -> bool:
        start, width = self.window
        if width >= TWO_PI:
            return True
        return (azimuth - start) % TWO_PI <= width


@dataclass(frozen=True)
class TargetTemplate:
    name: str
    components: tuple[Component, ...]
    symmetry: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) < 3:
            raise InvalidParameterError(f"template {self.name!r} needs at least 3 components")


def _deg(a: float) -> float:
    return math.radians(a)


def local(a, alpha, x, y, window=(0.0, TWO_PI), jitter=0.1) -> Component:
    return Component(ScatteringCenter(A=a, alpha=alpha, x=x, y=y), window, jitter)


def plate(a, alpha, length, x, y, window=(0.0, TWO_PI), jitter=0.1, spacing=0.3) -> Component:
    """A plate whose image peak matches a local center of amplitude ``a``.

    The peak of a plate image scales as A * spacing / L, so A is raised by
    L / spacing.
    """
    return Component(ScatteringCenter(A=a * length / spacing, alpha=alpha, L=length, x=x, y=y,
                                      kind=Kind.DISTRIBUTED), window, jitter)


def default_templates() -> list[TargetTemplate]:
    front = (_deg(-90), _deg(180))
    back = (_deg(90), _deg(180))
    side = (_deg(30), _deg(120))
    boxy = TargetTemplate("boxy", (
        local(1.0, 1.0, 2.1, 1.3),
        local(0.9, 1.0, -2.1, 1.3),
        local(0.8, 1.0, 2.1, -1.3, front),
        local(0.9, 1.0, -2.1, -1.3, back),
        local(0.6, 0.5, 0.0, 1.5),
        local(0.7, 0.5, 0.0, -1.5, side),
        plate(0.8, 0.0, 1.5, 0.0, 0.0, side),
    ), ("mirror",))
    cross = TargetTemplate("cross", (
        local(0.9, 0.0, 3.2, 0.0),
        local(0.8, 0.0, -3.2, 0.0, back),
        local(1.0, 0.0, 0.0, 2.6),
        local(0.7, 0.0, 0.0, -2.6, front),
        local(1.0, -0.5, 0.0, 0.0),
        local(0.6, -0.5, 1.6, 0.0, side),
        plate(0.7, 0.5, 1.2, -1.6, 1.2),
    ), ("fourfold",))
    linear = TargetTemplate("linear", (
        local(0.9, 0.5, 3.6, 0.0),
        local(0.7, -0.5, 2.1, 0.4),
        local(1.0, 0.5, 0.6, 0.0),
        local(0.8, -0.5, -0.9, -0.4, front),
        local(0.6, 0.5, -2.4, 0.0),
        local(0.9, -0.5, -3.9, 0.4, back),
        plate(0.9, 1.0, 1.8, 0.0, 1.8, front),
        local(0.5, 0.0, 1.4, -1.7, side),
    ), ("axial",))
    return [boxy, cross, linear]


def render_scene(template: TargetTemplate, azimuth: float, rng: np.random.Generator,
                 cfg: RadarConfig) -> ScatterSet:
    """Ground-truth scatter set of ``template`` seen at ``azimuth``.

    The layout is rotated by the azimuth, invisible components are dropped,
    amplitudes get log-normal jitter, and ground range is stretched into the
    slant plane by 1 / cos(depression).
    """
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    stretch = 1.0 / (math.cos(cfg.depression) * math.cos(cfg.squint))
    out = []
    for comp in template.components:
        # draw jitter for every component so visibility does not shift the stream
        j = math.exp(comp.jitter * rng.standard_normal())
        if not comp.visible(azimuth):
            continue
        c = comp.center
        xg = ca * c.x - sa * c.y
        yg = sa * c.x + ca * c.y
        out.append(c.replace(A=c.A * j, x=xg * stretch, y=yg))
    return ScatterSet(out)
