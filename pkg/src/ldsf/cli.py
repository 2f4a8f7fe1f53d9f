"""Command line entry point: ``ldsf <command> ...``."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .extraction import ExtractionConfig, extract_all
from .graph_build import Geometry, build_graph
from .gvf import PruneState, apply_prune_state, prune
from .harness import dataset as ds
from .harness.report import aggregate, prune_report, run_summary, trend_table, write_json
from .harness.templates import default_templates
from .harness.train import (TrainConfig, evaluate_store, load_model, prepare, save_result,
                            train_ldsf)
from .optim import OptOptions

log = logging.getLogger("ldsf")


# --- configuration -----------------------------------------------------------------

def extraction_to_dict(cfg: ExtractionConfig) -> dict:
    d = asdict(cfg)
    d["opt"] = asdict(cfg.opt)
    return d


def extraction_from_dict(d: dict) -> ExtractionConfig:
    d = dict(d)
    if "opt" in d:
        d["opt"] = OptOptions(**d["opt"])
    return ExtractionConfig(**d)


def default_config() -> dict:
    return {"train": TrainConfig().to_dict(), "extraction": extraction_to_dict(ExtractionConfig())}


def load_config(path) -> tuple[TrainConfig, ExtractionConfig]:
    """A single JSON document with optional ``train`` and ``extraction`` sections."""
    doc = json.loads(Path(path).read_text()) if path else {}
    unknown = set(doc) - {"train", "extraction"}
    if unknown:
        raise SystemExit(f"unknown config sections {sorted(unknown)}")
    return TrainConfig.from_dict(doc.get("train", {})), extraction_from_dict(doc.get("extraction", {}))


# --- commands ----------------------------------------------------------------------

def cmd_config(args) -> int:
    print(json.dumps(default_config(), indent=1, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    by_name = {t.name: t for t in default_templates()}
    names = args.templates.split(",") if args.templates else list(by_name)
    missing = [n for n in names if n not in by_name]
    if missing:
        raise SystemExit(f"unknown templates {missing}; available: {sorted(by_name)}")
    samples = ds.synth_dataset([by_name[n] for n in names], n_per_class=args.n, snr_db=args.snr,
                               seed=args.seed, azimuth_step_deg=args.azimuth_step,
                               depression_deg=args.depression)
    meta = {"templates": names, "n_per_class": args.n, "snr_db": args.snr, "seed": args.seed,
            "azimuth_step_deg": args.azimuth_step, "depression_deg": args.depression}
    ds.save_dataset(samples, args.out, meta)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_extract(args) -> int:
    _, cfg = load_config(args.config)
    cfg = replace(cfg, max_fit=args.max_fit, min_peak_db=args.min_peak_db, max_centers=args.max_centers,
                  **({"dmax": args.dmax} if args.dmax is not None else {}))
    samples, meta = ds.load_dataset(args.inp)
    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(samples):
        s.estimate, trace = extract_all(s.image, cfg)
        s.graph = None
        (out / "traces" / f"{s.id}.json").write_text(json.dumps(trace.to_dict(), indent=1) + "\n")
        if (k + 1) % 50 == 0:
            log.info("extracted %d/%d", k + 1, len(samples))
    ds.save_dataset(samples, out, {**meta, "extraction": extraction_to_dict(cfg)})
    print(f"extracted {len(samples)} samples into {out}")
    return 0


def cmd_graph(args) -> int:
    samples, meta = ds.load_dataset(args.inp)
    for s in samples:
        if s.estimate is None:
            raise SystemExit(f"sample {s.id} has no estimate; run extract first")
        s.graph = build_graph(s.estimate, Geometry(s.image.config.depression, s.image.config.squint))
    ds.save_dataset(samples, args.out, meta)
    print(f"built {len(samples)} graphs into {args.out}")
    return 0


def _splits(args):
    samples, meta = ds.load_dataset(args.data)
    step = float(meta.get("azimuth_step_deg", 5.0))
    return ds.build_splits(samples, args.protocol, seed=args.split_seed, azimuth_step_deg=step)


def cmd_train(args) -> int:
    cfg, _ = load_config(args.config)
    overrides = {k: v for k, v in (("ablation", args.ablation), ("epochs", args.epochs)) if v is not None}
    cfg = replace(cfg, **overrides)
    train, test = _splits(args)
    result = train_ldsf(train, test, cfg, seed=args.seed)
    digest = save_result(result, args.out)
    summary = run_summary(result, args.protocol, args.seed, args.out)
    summary["history"] = result.history
    write_json(Path(args.out).with_suffix(".run.json"), summary)
    print(f"{args.protocol} {cfg.ablation} seed={args.seed} pcc={result.final_pcc:.4f} sha256={digest}")
    return 0


def cmd_eval(args) -> int:
    store, cfg, n_classes, _ = load_model(args.ckpt)
    train, test = _splits(args)
    pick = {"train": train, "test": test, "all": train + test}[args.split]
    state = PruneState.from_dict(json.loads(Path(args.state).read_text())["masks"]) if args.state else None
    m = evaluate_store(store, cfg, prepare(pick, cfg), n_classes, state)
    print(json.dumps({"split": args.split, "n": m.total, **m.to_dict()}))
    return 0


def cmd_prune(args) -> int:
    store, cfg, n_classes, names = load_model(args.ckpt)
    if not cfg.uses_gvf:
        raise SystemExit("checkpoint has no visual stream to prune")
    cfg = replace(cfg, alpha_sparsity=args.alpha_sparsity)
    train, test = _splits(args)
    te = prepare(test, cfg)
    before = evaluate_store(store, cfg, te, n_classes).to_dict()
    state = prune(store, cfg.gvf, args.delta_global, args.delta_local, args.delta_layer)
    after = {"pruned": evaluate_store(store, cfg, te, n_classes, state).to_dict()}
    if args.finetune_epochs > 0:
        ft = replace(cfg, epochs=args.finetune_epochs)
        res = train_ldsf(train, test, ft, seed=args.seed, store=store, state=state, n_classes=n_classes)
        apply_prune_state(store, cfg.gvf, state)
        after["finetuned"] = evaluate_store(store, cfg, te, n_classes, state).to_dict()
        if args.out_ckpt:
            save_result(replace(res, store=store, class_names=names), args.out_ckpt)
    doc = prune_report(store, cfg.gvf, state, before, after)
    doc["deltas"] = {"global": args.delta_global, "local": args.delta_local, "layer": args.delta_layer}
    write_json(args.out, doc)
    print(f"kept {doc['kept_channel_fraction']:.3f} of channels; pcc {before['pcc']:.4f} -> "
          + ", ".join(f"{k} {v['pcc']:.4f}" for k, v in after.items()))
    return 0


def cmd_report(args) -> int:
    paths = []
    for pattern in args.runs:
        p = Path(pattern)
        paths += sorted(p.glob("*.run.json")) if p.is_dir() else [Path(q) for q in sorted(glob.glob(pattern))]
    if not paths:
        raise SystemExit("no run files found")
    summary = aggregate([json.loads(p.read_text()) for p in paths])
    write_json(args.out, summary)
    print(trend_table(summary))
    return 0


# --- parser ------------------------------------------------------------------------

def _split_args(p) -> None:
    p.add_argument("--data", required=True, help="dataset directory with graphs")
    p.add_argument("--protocol", default="SOC", choices=ds.PROTOCOLS)
    p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldsf", description="Dual-stream SAR target recognition toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="print the default configuration document")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--templates", default="", help="comma separated template names (default: all)")
    p.add_argument("--n", type=int, default=400, help="samples per class")
    p.add_argument("--snr", type=float, default=20.0, help="dB; inf for noise free")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--azimuth-step", type=float, default=5.0)
    p.add_argument("--depression", type=float, default=17.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract scattering centers for every image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--max-fit", type=float, default=0.95)
    p.add_argument("--min-peak-db", type=float, default=-20.0)
    p.add_argument("--max-centers", type=int, default=25)
    p.add_argument("--dmax", type=float, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("graph", help="build graphs from extracted scatter sets")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train a model under a protocol")
    _split_args(p)
    p.add_argument("--ablation", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    _split_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--state", help="prune report whose masks are applied")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", help="prune the visual stream of a checkpoint")
    _split_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--delta-global", type=float, default=0.5)
    p.add_argument("--delta-local", type=float, default=0.3)
    p.add_argument("--delta-layer", type=float, default=1 / 6)
    p.add_argument("--alpha-sparsity", type=float, default=1e-4)
    p.add_argument("--finetune-epochs", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="prune_report.json")
    p.add_argument("--out-ckpt", help="save the fine-tuned checkpoint here")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("report", help="aggregate run summaries")
    p.add_argument("--runs", nargs="+", required=True, help="run directories or globs of *.run.json")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
