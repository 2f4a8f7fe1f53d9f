"""Synthetic datasets: generation, noise, extraction, splits and on-disk layout."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..asc_model import ScatterSet, scatterset_from_json, scatterset_to_json, synthesize_image
from ..core_types import ComplexImage, RadarConfig, csar_bytes, image_energy, read_csar, write_csar
from ..errors import InvalidProtocolError
from ..extraction import ExtractionConfig, extract_all
from ..graph_build import Geometry, HeteroGraph, build_graph, read_graph, write_graph
from .templates import TargetTemplate, default_templates, render_scene

log = logging.getLogger(__name__)

PROTOCOLS = ("SOC", "LFM1", "LFM2", "LFM3")
# training azimuth intervals in degrees, inclusive
LFM_INTERVALS = {"LFM1": (-180.0, 90.0), "LFM2": (-90.0, 90.0), "LFM3": (0.0, 90.0)}


def dataset_radar(depression_deg: float = 17.0) -> RadarConfig:
    return replace(RadarConfig().with_grid(64, 64), depression=math.radians(depression_deg))


@dataclass
class Sample:
    id: str
    label: int
    class_name: str
    azimuth: float
    image: ComplexImage
    truth: ScatterSet
    tags: tuple[str, ...] = ()
    split: str | None = None
    estimate: ScatterSet | None = None
    graph: HeteroGraph | None = None

    def meta(self) -> dict:
        return {"id": self.id, "label": self.label, "class": self.class_name,
                "azimuth": self.azimuth, "tags": list(self.tags), "split": self.split}


def add_noise(img: ComplexImage, snr_db: float, rng: np.random.Generator) -> ComplexImage:
    """Circular complex Gaussian noise with expected energy E_signal / 10^(snr/10)."""
    if math.isinf(snr_db) and snr_db > 0:
        return img
    sigma2 = image_energy(img) / img.data.size / 10 ** (snr_db / 10)
    s = math.sqrt(sigma2 / 2)
    noise = s * (rng.standard_normal(img.shape) + 1j * rng.standard_normal(img.shape))
    return img.with_data(img.data + noise)


def measured_snr_db(clean: ComplexImage, noisy: ComplexImage) -> float:
    return 10 * math.log10(image_energy(clean) / image_energy(noisy.with_data(noisy.data - clean.data)))


def synth_dataset(templates: list[TargetTemplate] | None = None, n_per_class: int = 400,
                  azimuth_step_deg: float = 5.0, snr_db: float = 20.0, seed: int = 0,
                  depression_deg: float = 17.0, tags: tuple[str, ...] = ("soc",),
                  fixed_azimuth: float | None = None) -> list[Sample]:
    """Samples cycle through the azimuth bins of each class with a uniform offset inside the bin.

    Every sample draws from its own child of the seed, so the dataset is
    identical regardless of generation order.
    """
    if n_per_class < 1:
        raise InvalidProtocolError("n_per_class must be >= 1")
    templates = templates or default_templates()
    cfg = dataset_radar(depression_deg)
    n_bins = max(1, int(round(360.0 / azimuth_step_deg)))
    children = np.random.SeedSequence(seed).spawn(len(templates) * n_per_class)
    out = []
    for label, t in enumerate(templates):
        for i in range(n_per_class):
            rng = np.random.default_rng(children[label * n_per_class + i])
            u = rng.random()
            if fixed_azimuth is None:
                az = math.radians(((i % n_bins) + u) * azimuth_step_deg)
            else:
                az = fixed_azimuth
            truth = render_scene(t, az, rng, cfg)
            img = add_noise(synthesize_image(truth, cfg), snr_db, rng)
            out.append(Sample(f"{t.name}-{i:04d}", label, t.name, az, img, truth, tuple(tags)))
    return out


# --- extraction -----------------------------------------------------------------------

def _cache_key(img: ComplexImage, cfg: ExtractionConfig) -> str:
    h = hashlib.sha256(csar_bytes(img))
    h.update(json.dumps(_ext_dict(cfg), sort_keys=True).encode())
    return h.hexdigest()[:32]


def _ext_dict(cfg: ExtractionConfig) -> dict:
    return {"max_fit": cfg.max_fit, "min_peak_db": cfg.min_peak_db, "max_centers": cfg.max_centers,
            "dmax": cfg.dmax, "support_dilation": cfg.support_dilation, "relax_passes": cfg.relax_passes,
            "opt": [cfg.opt.tol, cfg.opt.max_iter, cfg.opt.x_tol]}


def extract_samples(samples: list[Sample], cfg: ExtractionConfig | None = None,
                    cache_dir=None, progress: bool = False) -> list[Sample]:
    """Attach extracted scatter sets and their graphs; results are cached by image hash."""
    cfg = cfg or ExtractionConfig()
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(samples):
        est = None
        path = cache / f"{_cache_key(s.image, cfg)}.json" if cache else None
        if path is not None and path.exists():
            est = scatterset_from_json(path.read_text())
        if est is None:
            est, _ = extract_all(s.image, cfg)
            if path is not None:
                path.write_text(scatterset_to_json(est))
        s.estimate = est
        s.graph = build_graph(est, Geometry(s.image.config.depression, s.image.config.squint))
        if progress and (k + 1) % 50 == 0:
            log.info("extracted %d/%d", k + 1, len(samples))
    return samples


# --- splits -----------------------------------------------------------------------------

def _wrap_deg(az: float) -> float:
    d = math.degrees(az) % 360.0
    return d - 360.0 if d > 180.0 else d


def in_interval(az: float, lo: float, hi: float) -> bool:
    d = _wrap_deg(az)
    # -180 and 180 are the same direction
    return lo <= d <= hi or (lo == -180.0 and d == 180.0)


def soc_split(samples: list[Sample], azimuth_step_deg: float = 5.0, seed: int = 0):
    """Stratified half split per (class, azimuth bin); odd bins alternate their extra sample."""
    rng = np.random.default_rng(seed)
    groups: dict[tuple[int, int], list[int]] = {}
    for i, s in enumerate(samples):
        b = int(math.degrees(s.azimuth % (2 * math.pi)) // azimuth_step_deg)
        groups.setdefault((s.label, b), []).append(i)
    train, test = [], []
    extra_to_train = {}
    for key in sorted(groups):
        idx = list(groups[key])
        rng.shuffle(idx)
        half = len(idx) // 2
        if len(idx) % 2:
            flip = extra_to_train.get(key[0], True)
            extra_to_train[key[0]] = not flip
            half += int(flip)
        train += idx[:half]
        test += idx[half:]
    return sorted(train), sorted(test)


def build_splits(samples: list[Sample], protocol: str, seed: int = 0,
                 azimuth_step_deg: float = 5.0) -> tuple[list[Sample], list[Sample]]:
    """(train, test). The test half is the same for every protocol; LFM
    protocols keep only the training samples inside their azimuth interval."""
    if protocol not in PROTOCOLS:
        raise InvalidProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    tr, te = soc_split(samples, azimuth_step_deg, seed)
    train = [samples[i] for i in tr]
    test = [samples[i] for i in te]
    if protocol != "SOC":
        lo, hi = LFM_INTERVALS[protocol]
        train = [s for s in train if in_interval(s.azimuth, lo, hi)]
    if not train or not test:
        raise InvalidProtocolError(f"protocol {protocol} leaves an empty split")
    return train, test


# --- persistence ------------------------------------------------------------------------

def save_dataset(samples: list[Sample], root, meta: dict | None = None) -> None:
    """Directory layout: manifest.json, images/*.csar, truth/*.json and, when
    present, estimates/*.json and graphs/*.json."""
    root = Path(root)
    for sub in ("images", "truth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_csar(root / "images" / f"{s.id}.csar", s.image)
        (root / "truth" / f"{s.id}.json").write_text(scatterset_to_json(s.truth))
        if s.estimate is not None:
            (root / "estimates").mkdir(exist_ok=True)
            (root / "estimates" / f"{s.id}.json").write_text(scatterset_to_json(s.estimate))
        if s.graph is not None:
            (root / "graphs").mkdir(exist_ok=True)
            write_graph(root / "graphs" / f"{s.id}.json", s.graph)
    doc = {"meta": meta or {}, "samples": [s.meta() for s in samples]}
    (root / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_dataset(root) -> tuple[list[Sample], dict]:
    root = Path(root)
    doc = json.loads((root / "manifest.json").read_text())
    out = []
    for m in doc["samples"]:
        sid = m["id"]
        est_p = root / "estimates" / f"{sid}.json"
        graph_p = root / "graphs" / f"{sid}.json"
        out.append(Sample(
            sid, int(m["label"]), m["class"], float(m["azimuth"]),
            read_csar(root / "images" / f"{sid}.csar"),
            scatterset_from_json((root / "truth" / f"{sid}.json").read_text()),
            tuple(m.get("tags", [])), m.get("split"),
            scatterset_from_json(est_p.read_text()) if est_p.exists() else None,
            read_graph(graph_p) if graph_p.exists() else None,
        ))
    return out, doc.get("meta", {})
