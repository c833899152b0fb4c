"""Operator entry points: pools, train, eval, frontier.

Every command reads a JSON run config (flags can override select fields),
writes its artifacts under the run's output directory, and drops a manifest
listing them. Outputs carry no timestamps, so a rerun with the same seed
reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, asdict, fields
from pathlib import Path

from . import catalog as cat
from . import metrics, policy, selector, trainer
from .diffcore import ParameterStore
from .embedding import load_store
from .errors import MasbudgetError, ConfigError
from .executor import (
    RemoteBackend,
    RemoteEndpoint,
    SimulatorBackend,
    load_synthetic_backbones,
)


@dataclass
class RunConfig:
    catalog: str = ""
    templates: str = ""
    pools: str = ""
    dataset: str = ""
    synthetic_backbones: str = ""
    embeddings: str = ""
    admissible: str = ""
    out_dir: str = "run"
    method: str = "masbudget"
    gamma_task: float = 2.0
    backend: str = "simulator"  # simulator | remote
    remote_base_url: str = ""
    remote_api_key_env: str = "MASBUDGET_API_KEY"
    # TrainConfig mirror
    lambda_tok: float = 0.0
    lambda_lat: float = 0.0
    lambda_len: float = 0.2
    delta: float = 0.0
    upper_bound: int = 0
    lr: float = 0.1
    episodes: int = 0
    seed: int = 0
    baseline: str = trainer.BASELINE_RUNNING_MEAN
    bucket_temperature: float = selector.BUCKET_TEMPERATURE
    difficulty_source: str = "stub"
    hidden: int = policy.HIDDEN

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            lambda_tok=self.lambda_tok, lambda_lat=self.lambda_lat,
            lambda_len=self.lambda_len, delta=self.delta,
            upper_bound=self.upper_bound, lr=self.lr, episodes=self.episodes,
            seed=self.seed, baseline=self.baseline,
            bucket_temperature=self.bucket_temperature,
            difficulty_source=self.difficulty_source, hidden=self.hidden)


def _require(cfg: RunConfig, *names):
    for name in names:
        value = getattr(cfg, name)
        if not value:
            raise ConfigError(f"config field {name!r} is required for this command")
        if not Path(value).exists():
            raise ConfigError(f"{name}: file not found: {value}")


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig, outputs: list[str]):
    doc = {"command": command, "config": asdict(cfg), "outputs": sorted(outputs)}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_world(cfg: RunConfig) -> trainer.World:
    _require(cfg, "catalog", "templates", "pools")
    profiles = {p.id: p for p in cat.load_catalog(cfg.catalog)}
    pool_set = cat.load_pools(cfg.pools)
    templates = trainer.load_templates(cfg.templates)
    store = load_store(cfg.embeddings) if cfg.embeddings else None
    if cfg.backend == "remote":
        if not cfg.remote_base_url:
            raise ConfigError("remote backend requires remote_base_url")
        endpoint = RemoteEndpoint(base_url=cfg.remote_base_url,
                                  api_key_env=cfg.remote_api_key_env)
        backend = RemoteBackend(endpoint)
    elif cfg.backend == "simulator":
        _require(cfg, "synthetic_backbones")
        backend = SimulatorBackend(load_synthetic_backbones(cfg.synthetic_backbones))
    else:
        raise ConfigError(f"unknown backend {cfg.backend!r}")
    admissible = trainer.load_admissible(cfg.admissible) if cfg.admissible else None
    return trainer.World(profiles=profiles, pool_set=pool_set, templates=templates,
                         store=store, backend=backend, admissible=admissible)


def _build_params(cfg: RunConfig, world: trainer.World) -> ParameterStore:
    embed_dim = world.store.dim if world.store is not None else policy.EMBED_DIM
    return policy.build_params(seed=cfg.seed, embed_dim=embed_dim,
                               hidden=cfg.hidden, max_agents=len(world.templates))


# ---------------------------------------------------------------------------
# commands


def cmd_pools(cfg: RunConfig, args) -> int:
    _require(cfg, "catalog")
    profiles = cat.load_catalog(cfg.catalog)
    samples_by_id: dict[str, list] = {}
    if args.calibration:
        with open(args.calibration, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for rec in doc["samples"]:
            s = cat.CalibrationSample(**rec)
            samples_by_id.setdefault(s.backbone_id, []).append(s)
    triples = {}
    for p in profiles:
        samples = samples_by_id.get(p.id, [])
        if not samples and p.tok_cost_est is not None and p.lat_est is not None:
            triples[p.id] = (p.perf_score, p.tok_cost_est, p.lat_est)
        else:
            triples[p.id] = cat.estimate_triple(p, samples, gamma_task=cfg.gamma_task)
    pool_set, info = cat.build_pools(triples, k=args.k, seed=cfg.seed,
                                     min_size=args.min_size, max_size=args.max_size)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pools_path = out_dir / "pools.json"
    cat.save_pools(pool_set, pools_path)
    summary = [f"pools: {len(pool_set.pools)} (weak -> strong)"]
    for i, pool in enumerate(pool_set.pools):
        summary.append(f"  pool {i} (cost {pool_set.cost_curve[i]:.3f}): "
                       + ", ".join(pool))
    summary.append(f"medoids: {', '.join(info['medoids'])}")
    summary.append(f"objective: {info['objective']:.6f}")
    (out_dir / "pools_summary.txt").write_text("\n".join(summary) + "\n",
                                               encoding="utf-8")
    _write_manifest(out_dir, "pools", cfg, ["pools.json", "pools_summary.txt"])
    print("\n".join(summary))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    _require(cfg, "dataset")
    world = _load_world(cfg)
    params = _build_params(cfg, world)
    dataset = trainer.load_dataset(cfg.dataset)
    tcfg = cfg.train_config()
    tcfg.validate()
    params, log = trainer.train(dataset, world, tcfg, params)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params.save(out_dir / "checkpoint.bin")
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    cfg.to_file(out_dir / "config.json")
    _write_manifest(out_dir, "train", cfg,
                    ["checkpoint.bin", "train_log.jsonl", "config.json"])
    if log:
        tail = log[-min(len(log), 20):]
        mean_r = sum(r["reward"] for r in tail) / len(tail)
        print(f"trained {len(log)} episodes; mean reward over last {len(tail)}: "
              f"{mean_r:.4f}")
    else:
        print("trained 0 episodes; checkpoint equals initialization")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    if args.method:
        cfg.method = args.method
    if args.dataset:
        cfg.dataset = args.dataset
    _require(cfg, "dataset")
    world = _load_world(cfg)
    dataset = trainer.load_dataset(cfg.dataset)
    tcfg = cfg.train_config()
    if args.random_policy:
        aggregates, records = trainer.evaluate_random(dataset, world, tcfg)
    else:
        if not args.checkpoint or not Path(args.checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
        params = ParameterStore.load(args.checkpoint)
        aggregates, records = trainer.evaluate(dataset, world, tcfg, params,
                                               workers=args.workers)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"method": cfg.method, "dataset": Path(cfg.dataset).stem,
           "config": asdict(cfg), "aggregates": aggregates, "records": records}
    with open(out_dir / "results.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, "eval", cfg, ["results.json"])
    print(json.dumps(aggregates, sort_keys=True))
    return 0


def cmd_frontier(args) -> int:
    if not args.results:
        raise ConfigError("frontier: no results files given")
    runs = []
    for path in args.results:
        with open(path, "r", encoding="utf-8") as fh:
            runs.append(json.load(fh))
    dataset = runs[0].get("dataset", "dataset")
    by_method: dict[str, list[dict]] = {}
    for run in runs:
        by_method.setdefault(run["method"], []).append(run["aggregates"])

    presets = {}
    if args.budgets_file:
        with open(args.budgets_file, "r", encoding="utf-8") as fh:
            presets = json.load(fh)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    report_doc = {}
    for kind, budget_key, budgets in (
            (metrics.KIND_TOKEN_COST, "total_tok_cost",
             args.budgets_tok or presets.get(metrics.KIND_TOKEN_COST)),
            (metrics.KIND_LATENCY, "mean_latency",
             args.budgets_lat or presets.get(metrics.KIND_LATENCY))):
        curves = {}
        raw_points = {}
        for method, aggs in by_method.items():
            pts = [(a[budget_key], a["mean_perf"]) for a in aggs]
            raw_points[method] = pts
            curves[method] = metrics.upper_envelope(pts, kind=kind, hull=args.hull)
        base_method = args.base_method or sorted(by_method)[0]
        if base_method not in by_method:
            raise ConfigError(f"base method {base_method!r} not among results")
        base_pts = raw_points[base_method]
        window = max(b for b, _ in base_pts)
        base_point = max(base_pts)  # the base method's most expensive point
        if not budgets:
            budgets = [window * f for f in (0.25, 0.5, 0.75, 1.0)]
        base_points = {m: base_point for m in curves}
        report = metrics.budget_report(curves, budgets, window, base_points)
        report_doc[kind] = {"window": window, "base_method": base_method,
                            "budgets": budgets, "methods": report}
        csv_path = out_dir / f"frontier_{kind}.csv"
        metrics.write_frontier_csv(curves, dataset, csv_path)
        outputs.append(csv_path.name)
        print(metrics.render_report(report, budgets, kind))
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append("report.json")
    doc = {"command": "frontier", "results": [str(p) for p in args.results],
           "outputs": sorted(outputs)}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_arg(p):
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out-dir", default=None, help="override config out_dir")
    p.add_argument("--seed", type=int, default=None, help="override config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masbudget",
                                     description="budget-aware MAS configurator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pools", help="build backbone pools from a catalog")
    _add_config_arg(p)
    p.add_argument("--k", type=int, default=4, help="number of pools")
    p.add_argument("--min-size", type=int, default=None)
    p.add_argument("--max-size", type=int, default=None)
    p.add_argument("--calibration", default=None,
                   help="JSON file with calibration samples")

    p = sub.add_parser("train", help="train the configurator")
    _add_config_arg(p)
    p.add_argument("--episodes", type=int, default=None, help="override episodes")

    p = sub.add_parser("eval", help="evaluate a checkpoint (argmax decisions)")
    _add_config_arg(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--random-policy", action="store_true",
                   help="evaluate the uniform-random baseline instead")
    p.add_argument("--method", default=None, help="method name in results.json")
    p.add_argument("--dataset", default=None, help="override config dataset")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel query evaluation threads")

    p = sub.add_parser("frontier", help="frontier CSVs, P@B tables and AUCs")
    p.add_argument("results", nargs="+", help="results.json files from eval runs")
    p.add_argument("--out-dir", default="frontier")
    p.add_argument("--base-method", default=None)
    p.add_argument("--hull", default=metrics.HULL_CONVEX,
                   choices=[metrics.HULL_CONVEX, metrics.HULL_STAIRCASE])
    p.add_argument("--budgets-tok", type=float, nargs="*", default=None)
    p.add_argument("--budgets-lat", type=float, nargs="*", default=None)
    p.add_argument("--budgets-file", default=None,
                   help="JSON preset with token_cost/latency budget ladders")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "frontier":
            return cmd_frontier(args)
        cfg = RunConfig.from_file(args.config)
        if args.out_dir is not None:
            cfg.out_dir = args.out_dir
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "pools":
            return cmd_pools(cfg, args)
        if args.command == "train":
            if args.episodes is not None:
                cfg.episodes = args.episodes
            return cmd_train(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except MasbudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
