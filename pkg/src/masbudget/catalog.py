"""Backbone catalog: triple estimation, Pareto filtering, pooling, persistence.

A catalog file is a JSON document with a schema_version and one record per
backbone; a pool-set file carries the ordered pools plus the normalized
cost curve. See data/catalog.json and data/pools.json for golden examples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import CatalogError

CATALOG_SCHEMA_VERSION = 1
POOLS_SCHEMA_VERSION = 1

MODEL_TYPE_REASONING = "reasoning"
MODEL_TYPE_NON_REASONING = "non_reasoning"

# latency proxy when no calibration samples exist
LATENCY_PER_BILLION_PARAMS = 0.05  # seconds per billion activated params
LATENCY_FIXED_OVERHEAD = 1.0  # seconds

# assumed per-query token footprint when no calibration samples exist
BASELINE_IN_TOKENS = 1000
BASELINE_OUT_TOKENS = 500


@dataclass
class BackboneProfile:
    id: str
    family: str
    model_type: str
    input_ptp: float  # CNY per 1e6 input tokens
    output_ptp: float  # CNY per 1e6 output tokens
    activated_params: float | None = None  # billions
    perf_score: float | None = None  # in [0, 1]
    tok_cost_est: float | None = None  # CNY per query
    lat_est: float | None = None  # seconds per query
    perf_profile: str = ""
    ptp_profile: str = ""
    type_profile: str = ""

    def validate(self):
        if self.input_ptp < 0 or self.output_ptp < 0:
            raise CatalogError(f"{self.id}: negative per-token price")
        if self.model_type not in (MODEL_TYPE_REASONING, MODEL_TYPE_NON_REASONING):
            raise CatalogError(f"{self.id}: unknown model_type {self.model_type!r}")
        if self.perf_score is not None and not 0.0 <= self.perf_score <= 1.0:
            raise CatalogError(f"{self.id}: perf_score {self.perf_score} outside [0,1]")
        if self.tok_cost_est is not None and self.tok_cost_est <= 0:
            raise CatalogError(f"{self.id}: tok_cost_est must be > 0")
        if self.lat_est is not None and self.lat_est <= 0:
            raise CatalogError(f"{self.id}: lat_est must be > 0")


@dataclass
class CalibrationSample:
    backbone_id: str
    query_id: str
    tokens_in: int
    tokens_out: int
    wall_latency: float
    correct: bool = False


@dataclass
class PoolSet:
    """Ordered pools (weak -> strong) with a strictly increasing cost curve."""

    pools: list[list[str]]
    cost_curve: list[float] = field(default_factory=list)

    def member_ids(self):
        seen = []
        for pool in self.pools:
            for bid in pool:
                if bid not in seen:
                    seen.append(bid)
        return seen


# ---------------------------------------------------------------------------
# triple estimation


def estimate_triple(profile: BackboneProfile, samples: list[CalibrationSample],
                    gamma_task: float = 1.0,
                    baseline_in: int = BASELINE_IN_TOKENS,
                    baseline_out: int = BASELINE_OUT_TOKENS):
    """(perf, tok_cost, lat) for one backbone.

    With calibration samples the cost and latency are sample means; without
    them the cost uses the baseline token footprint (reasoning models get
    their expected output length multiplied by gamma_task) and the latency
    falls back to the activated-parameter proxy.
    """
    profile.validate()
    perf = profile.perf_score
    if perf is None:
        raise CatalogError(f"{profile.id}: perf_score required")
    if samples:
        costs = [(s.tokens_in * profile.input_ptp + s.tokens_out * profile.output_ptp) / 1e6
                 for s in samples]
        tok_cost = float(np.mean(costs))
        lat = float(np.mean([s.wall_latency for s in samples]))
    else:
        if profile.activated_params is None:
            raise CatalogError(f"{profile.id}: no samples and no activated_params")
        if gamma_task < 1.0:
            raise CatalogError(f"gamma_task must be >= 1, got {gamma_task}")
        out_tokens = baseline_out
        if profile.model_type == MODEL_TYPE_REASONING:
            out_tokens = baseline_out * gamma_task
        tok_cost = (baseline_in * profile.input_ptp + out_tokens * profile.output_ptp) / 1e6
        lat = LATENCY_PER_BILLION_PARAMS * profile.activated_params + LATENCY_FIXED_OVERHEAD
    return (float(perf), float(tok_cost), float(lat))


# ---------------------------------------------------------------------------
# Pareto filtering


def _dominates(a, b) -> bool:
    """a dominates b: perf no worse, cost/latency no higher, one strict."""
    ge = a[0] >= b[0] and a[1] <= b[1] and a[2] <= b[2]
    strict = a[0] > b[0] or a[1] < b[1] or a[2] < b[2]
    return ge and strict


def pareto_filter(triples: dict[str, tuple]) -> set[str]:
    """Ids on the 3-D (perf up, cost down, latency down) Pareto frontier."""
    if not triples:
        raise CatalogError("pareto_filter: empty catalog")
    ids = sorted(triples)
    survivors = set()
    for m in ids:
        if not any(_dominates(triples[n], triples[m]) for n in ids if n != m):
            survivors.add(m)
    return survivors


def feature_vector(triple) -> np.ndarray:
    """Clustering features [perf, log tok_cost, log lat]."""
    perf, tok_cost, lat = triple
    if tok_cost <= 0 or lat <= 0:
        raise CatalogError(f"feature_vector: non-positive cost/latency in {triple}")
    return np.array([perf, math.log(tok_cost), math.log(lat)], dtype=np.float64)


# ---------------------------------------------------------------------------
# k-medoids (PAM)


def _pam_objective(dist, medoids):
    return float(dist[:, medoids].min(axis=1).sum())


def _pam_run(dist: np.ndarray, k: int, init_medoids: list[int]):
    """Best-improvement swap phase; records the objective after each swap."""
    n = dist.shape[0]
    medoids = sorted(init_medoids)
    trace = [_pam_objective(dist, medoids)]
    while True:
        best = None
        current = trace[-1]
        for mi, m in enumerate(medoids):
            for c in range(n):
                if c in medoids:
                    continue
                trial = medoids[:mi] + [c] + medoids[mi + 1 :]
                obj = _pam_objective(dist, trial)
                if obj < current - 1e-15 and (best is None or obj < best[0] - 1e-15
                                              or (abs(obj - best[0]) <= 1e-15
                                                  and (m, c) < best[1])):
                    best = (obj, (m, c), sorted(trial))
        if best is None:
            break
        medoids = best[2]
        trace.append(best[0])
    return medoids, trace


def _build_init(dist: np.ndarray, k: int):
    """Greedy BUILD initialization from classic PAM."""
    n = dist.shape[0]
    first = int(np.argmin(dist.sum(axis=1)))
    medoids = [first]
    while len(medoids) < k:
        best_c, best_gain = None, None
        current = dist[:, medoids].min(axis=1)
        for c in range(n):
            if c in medoids:
                continue
            gain = float(np.maximum(current - dist[:, c], 0.0).sum())
            if best_gain is None or gain > best_gain + 1e-15:
                best_c, best_gain = c, gain
        medoids.append(best_c)
    return sorted(medoids)


def cluster_pools(features: dict[str, np.ndarray], k: int, seed: int = 0,
                  restarts: int = 8):
    """PAM k-medoids under Euclidean distance on the feature vectors.

    Runs the swap phase from a greedy BUILD start plus seeded random
    restarts and keeps the best objective; ids are sorted so the result is
    deterministic for a given seed. Returns (pools weak->strong, info) where
    info carries medoid ids, the objective, and the per-swap objective trace.
    """
    ids = sorted(features)
    n = len(ids)
    if k < 1 or k > n:
        raise CatalogError(f"cluster_pools: k={k} with {n} backbones")
    pts = np.stack([features[i] for i in ids])
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    rng = np.random.default_rng(seed)
    starts = [_build_init(dist, k)]
    for _ in range(max(0, restarts - 1)):
        starts.append(sorted(rng.choice(n, size=k, replace=False).tolist()))

    best_medoids, best_obj, best_trace = None, None, None
    for start in starts:
        medoids, trace = _pam_run(dist, k, start)
        obj = trace[-1]
        if best_obj is None or obj < best_obj - 1e-15 or (
                abs(obj - best_obj) <= 1e-15 and medoids < best_medoids):
            best_medoids, best_obj, best_trace = medoids, obj, trace

    assign = dist[:, best_medoids].argmin(axis=1)
    clusters = [[] for _ in range(k)]
    for idx, a in enumerate(assign):
        # ties between equidistant medoids resolve to the lower medoid index,
        # which argmin already guarantees
        clusters[a].append(ids[idx])
    clusters = [c for c in clusters if c]
    info = {
        "medoids": [ids[m] for m in best_medoids],
        "objective": best_obj,
        "objective_trace": best_trace,
    }
    return clusters, info


def order_pools_by_perf(pools: list[list[str]], triples: dict[str, tuple]):
    """Weak -> strong by mean member perf; ties by first member id."""
    keyed = sorted(pools, key=lambda p: (float(np.mean([triples[m][0] for m in p])),
                                         sorted(p)[0]))
    return keyed


# ---------------------------------------------------------------------------
# balancing


def _pool_medoid(pool, features):
    best, best_cost = None, None
    for m in sorted(pool):
        cost = sum(float(np.linalg.norm(features[m] - features[o])) for o in pool)
        if best_cost is None or cost < best_cost - 1e-15:
            best, best_cost = m, cost
    return best


def balance_pools(pools: list[list[str]], features: dict[str, np.ndarray],
                  min_size: int, max_size: int):
    """Clamp each pool into [min_size, max_size].

    Oversized pools drop the members farthest from the pool medoid;
    undersized pools copy in their nearest outside neighbors, so one
    backbone may afterwards sit in two adjacent pools.
    """
    if min_size < 1 or max_size < min_size:
        raise CatalogError(f"balance_pools: bad bounds [{min_size}, {max_size}]")
    all_ids = sorted({m for pool in pools for m in pool})
    if min_size > len(all_ids):
        raise CatalogError(
            f"balance_pools: min_size {min_size} exceeds {len(all_ids)} members")
    balanced = []
    for pool in pools:
        members = list(pool)
        medoid = _pool_medoid(members, features)
        center = features[medoid]
        if len(members) > max_size:
            members.sort(key=lambda m: (float(np.linalg.norm(features[m] - center)), m))
            members = members[:max_size]
        if len(members) < min_size:
            outside = [m for m in all_ids if m not in members]
            outside.sort(key=lambda m: (float(np.linalg.norm(features[m] - center)), m))
            members = members + outside[: min_size - len(members)]
        balanced.append(members)
    return balanced


# ---------------------------------------------------------------------------
# cost curve


def cost_curve(pools: list[list[str]], triples: dict[str, tuple]) -> list[float]:
    """Min-max scaled mean log token-cost per pool; linear fallback if the
    scaled curve is not strictly increasing over the weak->strong order."""
    p = len(pools)
    if p == 1:
        return [0.0]
    means = [float(np.mean([math.log(triples[m][1]) for m in pool])) for pool in pools]
    lo, hi = min(means), max(means)
    if hi - lo > 0:
        curve = [(m - lo) / (hi - lo) for m in means]
        if all(curve[i + 1] > curve[i] for i in range(p - 1)):
            return curve
    return [i / (p - 1) for i in range(p)]


def build_pools(triples: dict[str, tuple], k: int, seed: int = 0,
                min_size: int | None = None, max_size: int | None = None):
    """Pareto filter -> cluster -> order -> balance -> cost curve."""
    survivors = pareto_filter(triples)
    feats = {m: feature_vector(triples[m]) for m in survivors}
    k_eff = min(k, len(survivors))
    clusters, info = cluster_pools(feats, k_eff, seed=seed)
    ordered = order_pools_by_perf(clusters, triples)
    if min_size is not None or max_size is not None:
        lo = min_size if min_size is not None else 1
        hi = max_size if max_size is not None else max(len(p) for p in ordered)
        ordered = balance_pools(ordered, feats, lo, hi)
    curve = cost_curve(ordered, triples)
    return PoolSet(pools=ordered, cost_curve=curve), info


# ---------------------------------------------------------------------------
# persistence


def save_catalog(profiles: list[BackboneProfile], path):
    doc = {
        "schema_version": CATALOG_SCHEMA_VERSION,
        "backbones": [asdict(p) for p in profiles],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_catalog(path) -> list[BackboneProfile]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CATALOG_SCHEMA_VERSION:
        raise CatalogError(f"{path}: unsupported catalog schema {doc.get('schema_version')}")
    profiles = []
    seen = set()
    for rec in doc["backbones"]:
        p = BackboneProfile(**rec)
        if p.id in seen:
            raise CatalogError(f"{path}: duplicate backbone id {p.id}")
        seen.add(p.id)
        p.validate()
        profiles.append(p)
    return profiles


def save_pools(pool_set: PoolSet, path):
    doc = {
        "schema_version": POOLS_SCHEMA_VERSION,
        "pools": pool_set.pools,
        "cost_curve": pool_set.cost_curve,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_pools(path) -> PoolSet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != POOLS_SCHEMA_VERSION:
        raise CatalogError(f"{path}: unsupported pools schema {doc.get('schema_version')}")
    pools = [list(p) for p in doc["pools"]]
    if not pools or any(not p for p in pools):
        raise CatalogError(f"{path}: pools must be non-empty")
    return PoolSet(pools=pools, cost_curve=[float(c) for c in doc["cost_curve"]])
