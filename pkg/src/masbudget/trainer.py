"""End-to-end episode loop: sample a decision tuple, execute, and update.

Per query the configurator samples {pool, matches, gates, edges}, the
executor returns (perf, token-cost, latency), the reward is performance
minus the weighted costs, and one policy-gradient step follows from the
factorized log-probability plus the hop-length penalty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffcore as dc
from . import matcher, selector, topology
from .catalog import BackboneProfile, PoolSet
from .embedding import EmbeddingStore, encode_text, profile_embeddings
from .errors import ConfigError, ExecutionError
from .executor import MasInstance, MasNode, Query, exact_match_checker, execute_mas
from .matcher import AgentTemplate

BASELINE_NONE = "none"
BASELINE_RUNNING_MEAN = "running_mean"
BASELINE_MOMENTUM = 0.9


@dataclass
class TrainConfig:
    lambda_tok: float = 0.0
    lambda_lat: float = 0.0
    lambda_len: float = 0.2
    delta: float = 0.0
    upper_bound: int = 0
    lr: float = 0.1
    episodes: int = 0
    seed: int = 0
    baseline: str = BASELINE_RUNNING_MEAN
    bucket_temperature: float = selector.BUCKET_TEMPERATURE
    tau_gate: float = topology.GUMBEL_TAU
    tau_edge: float = topology.GUMBEL_TAU
    difficulty_source: str = "stub"  # stub | head
    hidden: int = 32
    head_hidden: int = 16
    clip_norm: float = dc.GRAD_CLIP_NORM

    def validate(self):
        if self.lambda_tok < 0 or self.lambda_lat < 0 or self.lambda_len < 0:
            raise ConfigError("lambda weights must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.baseline not in (BASELINE_NONE, BASELINE_RUNNING_MEAN):
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if self.difficulty_source not in ("stub", "head"):
            raise ConfigError(f"unknown difficulty_source {self.difficulty_source!r}")


@dataclass
class DecisionTrace:
    pool: selector.PoolDecision
    match: matcher.MatchDecision
    gate: topology.GateDecision
    topo: topology.TopologyDecision
    log_p_total: float
    log_p_node: dc.Tensor | None = field(default=None, repr=False)
    pen_len: float = 0.0
    pen_node: dc.Tensor | None = field(default=None, repr=False)
    difficulty: selector.DifficultyEstimate | None = None


@dataclass
class World:
    """Everything fixed across episodes: catalog, pools, templates, encoder."""

    profiles: dict[str, BackboneProfile]
    pool_set: PoolSet
    templates: list[AgentTemplate]
    store: EmbeddingStore | None = None
    backend: object | None = None
    admissible: set[tuple[int, int]] | None = None  # template-index pairs
    checker: object = exact_match_checker  # (answer, query) -> perf score

    def __post_init__(self):
        self.embeddings = {bid: profile_embeddings(p, self.store)
                           for bid, p in self.profiles.items()}
        self.mean_concats = selector.pool_mean_concats(self.pool_set.pools,
                                                       self.embeddings)
        self.role_embeddings = [encode_text(t.role_prompt, self.store)
                                for t in self.templates]
        self.prices = {bid: (p.input_ptp, p.output_ptp)
                       for bid, p in self.profiles.items()}

    def query_embedding(self, query: Query):
        return encode_text(query.text, self.store)


def reward(perf: float, tok: float, lat: float, cfg: TrainConfig) -> float:
    """perf - lambda_tok * tok - lambda_lat * lat."""
    if tok < 0 or lat < 0:
        raise ConfigError("token cost and latency must be non-negative")
    return perf - cfg.lambda_tok * tok - cfg.lambda_lat * lat


def decide(world: World, params, query: Query, cfg: TrainConfig, rng=None,
           mode: str = "sample", given: DecisionTrace | None = None) -> DecisionTrace:
    """Build the full decision tuple, rebuilding the graph each call.

    With `given`, every discrete choice is pinned to the earlier trace and
    only the log-probabilities are recomputed; that is the path the
    finite-difference checks (and the loss) use.
    """
    head = params if cfg.difficulty_source == "head" else None
    diff = selector.estimate_difficulty(query.text, head, world.store,
                                        delta=cfg.delta, seed=cfg.seed)
    d_eff = diff.node if diff.node is not None else diff.d_eff

    pdec = selector.pool_distribution(world.pool_set, world.mean_concats, params,
                                      d_eff, cfg.upper_bound, cfg.bucket_temperature)
    selector.sample_pool(pdec, rng, mode,
                         given=None if given is None else given.pool.pool_index)
    members = world.pool_set.pools[pdec.pool_index]

    q_emb = world.query_embedding(query)
    mdec = matcher.match_roles(
        world.templates, members, world.embeddings, q_emb,
        world.mean_concats[pdec.pool_index], params, rng, mode,
        role_embeddings=world.role_embeddings,
        given=None if given is None else given.match.assignment)

    backbone_triples = [world.embeddings[mdec.assignment[i]]
                        for i in range(len(world.templates))]
    reprs = topology.agent_representation(world.role_embeddings, q_emb,
                                          backbone_triples, params)
    gdec = topology.gate_agents(reprs, params, rng, mode, cfg.tau_gate,
                                given=None if given is None else given.gate.bits)

    retained = gdec.retained
    local_reprs = [reprs[i] for i in retained]
    local_admissible = None
    if world.admissible is not None:
        pos = {orig: k for k, orig in enumerate(retained)}
        local_admissible = {(pos[a], pos[b]) for a, b in world.admissible
                            if a in pos and b in pos}
    tdec = topology.synthesize_topology(
        local_reprs, params, rng, mode, cfg.tau_edge, admissible=local_admissible,
        given=None if given is None else given.topo.edges)

    hop_probs, l_max_node = topology.hop_limit(local_reprs, params)
    ell = topology.longest_path(tdec.edges, tdec.n)
    tdec.hop_probs = hop_probs
    tdec.l_max = float(l_max_node.data)
    tdec.l_max_node = l_max_node
    tdec.critical_path_len = ell
    tdec.pruned_edges = topology.prune_to_hop_limit(tdec.edges, tdec.edge_probs,
                                                    tdec.l_max, tdec.n)

    log_total = dc.add(dc.add(pdec.log_p_node, mdec.log_p_node),
                       dc.add(gdec.log_p_node, tdec.log_p_node))
    pen_node = topology.length_penalty(ell, l_max_node)
    return DecisionTrace(pool=pdec, match=mdec, gate=gdec, topo=tdec,
                         log_p_total=float(log_total.data), log_p_node=log_total,
                         pen_len=float(pen_node.data), pen_node=pen_node,
                         difficulty=diff)


def instantiate(world: World, trace: DecisionTrace) -> MasInstance:
    nodes = [MasNode(template=world.templates[i],
                     backbone_id=trace.match.assignment[i])
             for i in trace.gate.retained]
    return MasInstance(nodes=nodes, edges=set(trace.topo.pruned_edges),
                       hop_limit=trace.topo.l_max)


def loss(r: float, trace: DecisionTrace, cfg: TrainConfig,
         baseline: float = 0.0) -> dc.Tensor:
    """-(R - baseline) * log p_theta + lambda_len * Pen_len."""
    advantage = r - baseline
    return dc.add(dc.scale(trace.log_p_node, -advantage),
                  dc.scale(trace.pen_node, cfg.lambda_len))


def run_episode(world: World, params, query: Query, cfg: TrainConfig, rng,
                mode: str = "sample"):
    """(trace, EpisodeResult, reward) for one query; failures score perf 0
    with whatever costs accrued."""
    trace = decide(world, params, query, cfg, rng, mode)
    instance = instantiate(world, trace)
    try:
        result = execute_mas(instance, query, world.backend, rng, world.prices,
                             checker=world.checker)
    except ExecutionError as exc:
        result = exc.partial
    r = reward(result.perf, result.tok_cost, result.latency, cfg)
    return trace, result, r


def train(dataset: list[Query], world: World, cfg: TrainConfig, params):
    """Per-query REINFORCE: sample, execute, one SGD step. The episode
    counter cycles through the dataset when episodes exceeds its length."""
    cfg.validate()
    if not dataset and cfg.episodes > 0:
        raise ConfigError("train: empty dataset")
    log = []
    baseline = None
    for ep in range(cfg.episodes):
        query = dataset[ep % len(dataset)]
        rng = np.random.default_rng([cfg.seed, ep])
        trace, result, r = run_episode(world, params, query, cfg, rng, mode="sample")
        b = 0.0
        if cfg.baseline == BASELINE_RUNNING_MEAN and baseline is not None:
            b = baseline
        loss_node = loss(r, trace, cfg, baseline=b)
        params.zero_grad()
        dc.backward(loss_node)
        dc.sgd_step(params, cfg.lr, clip_norm=cfg.clip_norm)
        if cfg.baseline == BASELINE_RUNNING_MEAN:
            baseline = r if baseline is None else (
                BASELINE_MOMENTUM * baseline + (1.0 - BASELINE_MOMENTUM) * r)
        log.append({
            "episode": ep,
            "query_id": query.query_id,
            "pool": trace.pool.pool_index,
            "assignment": {str(k): v for k, v in trace.match.assignment.items()},
            "retained": trace.gate.retained,
            "edges": sorted(trace.topo.pruned_edges),
            "hop_limit": trace.topo.l_max,
            "reward": r,
            "perf": result.perf,
            "tok_cost": result.tok_cost,
            "latency": result.latency,
            "loss": float(loss_node.data),
            "log_p": trace.log_p_total,
        })
    return params, log


def evaluate(dataset: list[Query], world: World, cfg: TrainConfig, params,
             mode: str = "argmax", workers: int = 1):
    """Argmax decisions, no updates; per-query records plus aggregates.

    Queries are independent (params are read-only, rng streams are keyed by
    query index), so workers > 1 evaluates them on a thread pool with
    identical results.
    """

    def one(idx_query):
        idx, query = idx_query
        rng = np.random.default_rng([cfg.seed, 1_000_000_000 + idx])
        trace, result, r = run_episode(world, params, query, cfg, rng, mode=mode)
        return {
            "query_id": query.query_id,
            "pool": trace.pool.pool_index,
            "assignment": {str(k): v for k, v in trace.match.assignment.items()},
            "retained": trace.gate.retained,
            "edges": sorted(trace.topo.pruned_edges),
            "perf": result.perf,
            "tok_cost": result.tok_cost,
            "latency": result.latency,
            "reward": r,
        }

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, enumerate(dataset)))
    else:
        records = [one(item) for item in enumerate(dataset)]
    if records:
        mean_perf = float(np.mean([r["perf"] for r in records]))
        total_tok = float(np.sum([r["tok_cost"] for r in records]))
        mean_lat = float(np.mean([r["latency"] for r in records]))
    else:
        mean_perf, total_tok, mean_lat = 0.0, 0.0, 0.0
    aggregates = {"mean_perf": mean_perf, "total_tok_cost": total_tok,
                  "mean_latency": mean_lat, "n_queries": len(records)}
    return aggregates, records


def evaluate_random(dataset: list[Query], world: World, cfg: TrainConfig):
    """Uniform-random decisions under the same masks; the no-learning baseline.

    Pool uniform over the unmasked prefix, backbones uniform per role, gates
    fair coins with the two-agent repair, admissible edges fair coins, no
    hop pruning.
    """
    records = []
    n_roles = len(world.templates)
    for idx, query in enumerate(dataset):
        rng = np.random.default_rng([cfg.seed, 2_000_000_000 + idx])
        pool_idx = int(rng.integers(cfg.upper_bound + 1))
        members = world.pool_set.pools[pool_idx]
        assignment = {i: members[int(rng.integers(len(members)))] for i in range(n_roles)}
        bits = [int(rng.integers(2)) for _ in range(n_roles)]
        if sum(bits) < 2:
            for i in sorted(range(n_roles), key=lambda i: (-bits[i], i)):
                if sum(bits) >= 2:
                    break
                bits[i] = 1
        retained = [i for i, b in enumerate(bits) if b]
        pos = {orig: k for k, orig in enumerate(retained)}
        edges = set()
        for a in range(len(retained)):
            for b in range(a + 1, len(retained)):
                orig = (retained[a], retained[b])
                if world.admissible is not None and orig not in world.admissible:
                    continue
                if rng.integers(2):
                    edges.add((a, b))
        instance = MasInstance(
            nodes=[MasNode(template=world.templates[i], backbone_id=assignment[i])
                   for i in retained],
            edges=edges, hop_limit=float(len(retained)))
        try:
            result = execute_mas(instance, query, world.backend, rng, world.prices,
                                 checker=world.checker)
        except ExecutionError as exc:
            result = exc.partial
        records.append({"query_id": query.query_id, "pool": pool_idx,
                        "perf": result.perf, "tok_cost": result.tok_cost,
                        "latency": result.latency})
    mean_perf = float(np.mean([r["perf"] for r in records])) if records else 0.0
    total_tok = float(np.sum([r["tok_cost"] for r in records])) if records else 0.0
    mean_lat = float(np.mean([r["latency"] for r in records])) if records else 0.0
    aggregates = {"mean_perf": mean_perf, "total_tok_cost": total_tok,
                  "mean_latency": mean_lat, "n_queries": len(records)}
    return aggregates, records


# ---------------------------------------------------------------------------
# dataset and template files


def load_dataset(path) -> list[Query]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(Query(**rec))
    return out


def save_dataset(queries: list[Query], path):
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(asdict(q), sort_keys=True) + "\n")


def load_templates(path) -> list[AgentTemplate]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [AgentTemplate(role_id=rec["role_id"], role_prompt=rec["role_prompt"],
                          plugins=list(rec.get("plugins", [])))
            for rec in doc["templates"]]


def save_templates(templates: list[AgentTemplate], path):
    doc = {"templates": [asdict(t) for t in templates]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_admissible(path) -> set[tuple[int, int]]:
    """Optional admissible-edge file: template-index pairs."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return {(int(a), int(b)) for a, b in doc["edges"]}
