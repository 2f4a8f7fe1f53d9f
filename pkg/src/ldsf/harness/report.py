"""Aggregation of training runs into PCC tables, the LFM trend and prune reports."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..gvf import GvfConfig, PruneState, block_means, chi_values, complexity
from .dataset import PROTOCOLS
from .train import TrainResult, evaluate, checkpoint_hash


def run_summary(result: TrainResult, protocol: str, seed: int, checkpoint: str | None = None) -> dict:
    out = {
        "protocol": protocol,
        "ablation": result.config.ablation,
        "fusion": result.config.fusion.mode,
        "lambda_g": result.config.effective_lambda,
        "seed": int(seed),
        "epochs_run": len(result.history),
        "pcc": result.final_pcc,
        "cut_initial": result.cut_initial,
        "cut_final": result.cut_final,
        "seconds": round(result.seconds, 3),
    }
    if result.test_metrics is not None:
        out["confusion"] = result.test_metrics.confusion.tolist()
    if checkpoint is not None:
        out["checkpoint"] = str(checkpoint)
        out["checkpoint_sha256"] = checkpoint_hash(checkpoint)
    return out


def _key(run: dict) -> str:
    name = run["ablation"]
    if run.get("fusion", "subnet") != "subnet" and name in ("full", "no-topology"):
        name = f"{name}[{run['fusion']}]"
    return name


def aggregate(runs: list[dict]) -> dict:
    """Mean and std PCC per model variant and protocol, plus the drop from SOC."""
    table: dict[str, dict[str, list[float]]] = {}
    for r in runs:
        if r.get("pcc") is None:
            continue
        table.setdefault(_key(r), {}).setdefault(r["protocol"], []).append(float(r["pcc"]))
    pcc = {m: {p: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
               for p, v in sorted(by_p.items())} for m, by_p in sorted(table.items())}
    trend = {}
    for m, by_p in pcc.items():
        if "SOC" not in by_p:
            continue
        base = by_p["SOC"]["mean"]
        drops = {p: base - by_p[p]["mean"] for p in PROTOCOLS if p in by_p and p != "SOC"}
        if drops:
            trend[m] = {**drops, "mean_drop": float(np.mean(list(drops.values())))}
    cuts: dict[str, dict[str, list[float]]] = {}
    for r in runs:
        if r.get("cut_final") is not None:
            cuts.setdefault(f"lambda_g={r['lambda_g']:g}", {}).setdefault(r["protocol"], []).append(r["cut_final"])
    cut = {k: {p: float(np.mean(v)) for p, v in sorted(by.items())} for k, by in sorted(cuts.items())}
    return {"pcc": pcc, "lfm_trend": trend, "intra_class_cut": cut, "runs": len(runs)}


def trend_table(summary: dict) -> str:
    """Plain-text table of PCC drops relative to SOC."""
    rows = ["model".ljust(22) + "".join(p.rjust(9) for p in PROTOCOLS[1:]) + "mean".rjust(9)]
    for m, d in summary.get("lfm_trend", {}).items():
        cells = "".join((f"{100 * d[p]:8.2f}" if p in d else "       -").rjust(9) for p in PROTOCOLS[1:])
        rows.append(m.ljust(22) + cells + f"{100 * d.get('mean_drop', float('nan')):8.2f}".rjust(9))
    return "\n".join(rows)


def ofa_report(checkpoint, scenarios: dict) -> dict:
    """One checkpoint scored on several scenarios, with its hash recorded per row."""
    digest = checkpoint_hash(checkpoint)
    rows = {}
    for name, samples in scenarios.items():
        m = evaluate(checkpoint, samples)
        rows[name] = {"pcc": m.pcc, "n": m.total, "checkpoint_sha256": digest}
    return {"checkpoint_sha256": digest, "scenarios": rows,
            "single_checkpoint": len({r["checkpoint_sha256"] for r in rows.values()}) <= 1}


def prune_report(store, cfg: GvfConfig, state: PruneState, before: dict, after: dict) -> dict:
    chi = chi_values(store, cfg)
    return {
        "layer_chi_mean": {k: float(np.mean(np.abs(v))) for k, v in chi.items()},
        "block_chi_mean": block_means(chi, cfg),
        "masks": state.to_dict(),
        "kept_channel_fraction": state.kept_fraction(),
        "complexity_before": complexity(cfg),
        "complexity_after": complexity(cfg, state),
        "before": before,
        "after": after,
    }


def write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
