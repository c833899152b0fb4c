#!/usr/bin/env python3
"""Regenerate the golden data files under data/ (all deterministic)."""

import json
from pathlib import Path

from masbudget import catalog as cat
from masbudget import synthdata, trainer
from masbudget.executor import save_synthetic_backbones

ROOT = Path(__file__).resolve().parent.parent / "data"


def main():
    ROOT.mkdir(exist_ok=True)

    # Qwen-family golden examples documenting the catalog and pool-set formats
    qwen = synthdata.qwen_catalog()
    cat.save_catalog(qwen, ROOT / "qwen_catalog.json")
    triples = {p.id: (p.perf_score, p.tok_cost_est, p.lat_est) for p in qwen}
    pool_set, _ = cat.build_pools(triples, k=4, seed=0, min_size=3, max_size=3)
    cat.save_pools(pool_set, ROOT / "qwen_pools.json")

    # runnable synthetic world for the CLI quickstart
    synth = ROOT / "synth"
    synth.mkdir(exist_ok=True)
    profiles = synthdata.make_catalog()
    cat.save_catalog(profiles, synth / "catalog.json")
    striples = {p.id: cat.estimate_triple(p, [], gamma_task=2.0) for p in profiles}
    spools, _ = cat.build_pools(striples, k=4, seed=0, min_size=3, max_size=3)
    cat.save_pools(spools, synth / "pools.json")
    save_synthetic_backbones(synthdata.make_synthetic_backbones(),
                             synth / "backbones.json")
    trainer.save_templates(synthdata.make_templates(), synth / "templates.json")
    trainer.save_dataset(synthdata.make_dataset(40, seed=11, prefix="tr"),
                         synth / "train.jsonl")
    trainer.save_dataset(synthdata.make_dataset(100, seed=12, prefix="ev"),
                         synth / "eval.jsonl")
    # evaluation budget ladders for the synthetic suite (eval totals over the
    # 100-query set / mean seconds per query)
    budgets = {
        "token_cost": [10.0, 50.0, 200.0, 620.0],
        "latency": [2.0, 4.0, 8.0, 14.0],
    }
    with open(synth / "budgets.json", "w", encoding="utf-8") as fh:
        json.dump(budgets, fh, indent=2, sort_keys=True)
        fh.write("\n")

    config = {
        "catalog": "data/synth/catalog.json",
        "templates": "data/synth/templates.json",
        "pools": "data/synth/pools.json",
        "dataset": "data/synth/train.jsonl",
        "synthetic_backbones": "data/synth/backbones.json",
        "out_dir": "runs/demo",
        "lambda_tok": 1.0,
        "lambda_lat": 0.001,
        "delta": 0.3,
        "upper_bound": 3,
        "lr": 0.1,
        "episodes": 160,
        "seed": 0,
    }
    with open(synth / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote golden data under {ROOT}")


if __name__ == "__main__":
    main()
