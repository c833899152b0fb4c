"""Synthetic desk-scale world: tiered backbones, queries, role templates.

Four tiers run from cheap-and-inaccurate to expensive-and-accurate so that
budget pressure has something real to trade against. Query text length
scales with true difficulty, which keeps the stub difficulty estimator
informative.
"""

from __future__ import annotations

import numpy as np

from .catalog import (
    BackboneProfile,
    LATENCY_FIXED_OVERHEAD as LATENCY_OVERHEAD,
    LATENCY_PER_BILLION_PARAMS as LATENCY_PER_BILLION,
    MODEL_TYPE_NON_REASONING,
    MODEL_TYPE_REASONING,
)
from .executor import Query, SyntheticBackbone
from .matcher import AgentTemplate

TIER_NAMES = ["tier0", "tier1", "tier2", "tier3"]

# per-million-token prices (input, output), rising steeply across tiers
TIER_PRICES = [(50.0, 200.0), (250.0, 1000.0), (800.0, 3200.0), (2500.0, 10000.0)]
TIER_PARAMS = [2.0, 8.0, 32.0, 235.0]  # billions
TIER_PERF = [0.42, 0.60, 0.78, 0.92]
TIER_OUT_TOKENS = [60.0, 80.0, 110.0, 150.0]
TIER_TOKEN_LATENCY = [0.002, 0.004, 0.008, 0.02]
TIER_OVERHEAD = [0.2, 0.4, 0.8, 1.5]
TIER_ACCURACY = [
    {"easy": 0.85, "medium": 0.35, "hard": 0.10},
    {"easy": 0.92, "medium": 0.60, "hard": 0.30},
    {"easy": 0.96, "medium": 0.85, "hard": 0.60},
    {"easy": 0.98, "medium": 0.95, "hard": 0.90},
]

_SUFFIXES = ["a", "b", "c"]

_TOPIC_WORDS = [
    "routing", "ledger", "graphs", "tokens", "budget", "policy", "windows",
    "queues", "tracing", "caches", "shards", "quotas", "signals", "batches",
]


def make_catalog(per_tier: int = 3) -> list[BackboneProfile]:
    profiles = []
    for t, tier in enumerate(TIER_NAMES):
        in_ptp, out_ptp = TIER_PRICES[t]
        for s in range(per_tier):
            suffix = _SUFFIXES[s % len(_SUFFIXES)]
            reasoning = s == per_tier - 1 and t >= 2
            bid = f"{tier}-{suffix}"
            # small deterministic spread inside a tier
            perf = min(TIER_PERF[t] + 0.01 * s, 1.0)
            params_b = TIER_PARAMS[t] * (1.0 + 0.1 * s)
            mtype = MODEL_TYPE_REASONING if reasoning else MODEL_TYPE_NON_REASONING
            type_text = ("Deep thinking mode with deliberate internal reasoning; "
                         "longer outputs, higher cost and latency."
                         if reasoning else
                         "Standard inference mode with balanced performance, "
                         "latency, and cost; fast responses.")
            profiles.append(BackboneProfile(
                id=bid,
                family=tier,
                model_type=mtype,
                input_ptp=in_ptp * (1.0 + 0.05 * s),
                output_ptp=out_ptp * (1.0 + 0.05 * s),
                activated_params=params_b,
                perf_score=perf,
                perf_profile=(f"The {bid} model scores {perf:.2f} on the synthetic "
                              f"benchmark suite with {params_b:.1f}B activated parameters."),
                ptp_profile=(f"This model has a per-token price of {in_ptp:.0f} per "
                             f"million input tokens and {out_ptp:.0f} per million "
                             "output tokens."),
                type_profile=type_text,
            ))
    return profiles


def make_synthetic_backbones(per_tier: int = 3) -> list[SyntheticBackbone]:
    out = []
    for t, tier in enumerate(TIER_NAMES):
        for s in range(per_tier):
            suffix = _SUFFIXES[s % len(_SUFFIXES)]
            reasoning = s == per_tier - 1 and t >= 2
            out.append(SyntheticBackbone(
                backbone_id=f"{tier}-{suffix}",
                base_accuracy=dict(TIER_ACCURACY[t]),
                mean_out_tokens=TIER_OUT_TOKENS[t],
                per_token_latency=TIER_TOKEN_LATENCY[t],
                fixed_overhead=TIER_OVERHEAD[t],
                reasoning=reasoning,
                gamma_task=2.0 if reasoning else 1.0,
            ))
    return out


def make_templates() -> list[AgentTemplate]:
    return [
        AgentTemplate("planner", "You are the planner. Break the question into steps."),
        AgentTemplate("solver", "You are the solver. Work the steps and propose an answer."),
        AgentTemplate("critic", "You are the critic. Check the proposed answer for flaws."),
        AgentTemplate("verifier", "You are the verifier. State the final answer."),
    ]


# budget ladder in the style of the published per-dataset hyperparameters:
# tighter upper bounds pair with stronger cost/latency penalties and a lower
# difficulty offset
BUDGET_LADDER = [
    {"upper_bound": 0, "lambda_tok": 40.0, "lambda_lat": 5e-3, "delta": 0.3},
    {"upper_bound": 1, "lambda_tok": 10.0, "lambda_lat": 1e-3, "delta": 0.3},
    {"upper_bound": 2, "lambda_tok": 2.0, "lambda_lat": 5e-4, "delta": 0.4},
    {"upper_bound": 3, "lambda_tok": 0.0, "lambda_lat": 0.0, "delta": 0.6},
]

TYPE_PROFILE_STANDARD = (
    "Standard inference mode with balanced performance, latency, and cost. "
    "No deep-reasoning capability, but fast response generation with low "
    "cost and latency.")
TYPE_PROFILE_REASONING = (
    "Deep thinking mode that spends extra internal reasoning steps during "
    "inference. Typically produces much longer outputs, raising both token "
    "cost and response latency.")

# (name, activated params in billions, input/output CNY per 1e6 tokens, score)
_QWEN_SPECS = [
    ("Qwen3-1.7B", 1.7, 0.1, 0.4, 0.45, 0.52),
    ("Qwen3-8B", 8.0, 0.25, 1.0, 0.66, 0.73),
    ("Qwen3-14B", 14.0, 0.5, 2.0, 0.70, 0.77),
    ("Qwen3-32B", 32.0, 1.0, 4.0, 0.74, 0.80),
    ("Qwen3-235B-A22B", 22.0, 2.5, 10.0, 0.79, 0.84),
]

QWEN_GAMMA_TASK = 2.0
_CALIB_IN_TOKENS = 1000
_CALIB_OUT_TOKENS = 500
_REASONING_LATENCY_FACTOR = 1.6  # longer completions observed in calibration


def qwen_catalog() -> list[BackboneProfile]:
    """Qwen-family catalog with published per-token prices.

    Reasoning and non-reasoning variants of one model are separate entries
    (suffix "-thinking"). Cost estimates use a 1000-in/500-out footprint with
    the reasoning output multiplier; latency estimates scale the activated-
    parameter proxy by a calibrated reasoning slowdown. Qwen2.5-72B-Instruct
    is included although it is Pareto-dominated (slower and costlier than
    Qwen3-32B at lower score) and never survives pool construction.
    """
    profiles = []
    for name, act, in_ptp, out_ptp, perf_plain, perf_think in _QWEN_SPECS:
        for thinking in (False, True):
            bid = name + ("-thinking" if thinking else "")
            gamma = QWEN_GAMMA_TASK if thinking else 1.0
            perf = perf_think if thinking else perf_plain
            tok = (_CALIB_IN_TOKENS * in_ptp + _CALIB_OUT_TOKENS * gamma * out_ptp) / 1e6
            lat = (LATENCY_PER_BILLION * act + LATENCY_OVERHEAD) * (
                _REASONING_LATENCY_FACTOR if thinking else 1.0)
            profiles.append(BackboneProfile(
                id=bid, family="qwen3",
                model_type=MODEL_TYPE_REASONING if thinking else MODEL_TYPE_NON_REASONING,
                input_ptp=in_ptp, output_ptp=out_ptp,
                activated_params=act, perf_score=perf,
                tok_cost_est=tok, lat_est=lat,
                perf_profile=(f"The {bid} model is an instruction-tuned generative "
                              f"model with {act:.1f}B activated parameters scoring "
                              f"{perf:.2f} on general-knowledge benchmarks."),
                ptp_profile=(f"This model has a per-token price of {in_ptp} CNY per "
                             f"million input tokens, {out_ptp} CNY per million "
                             "output tokens."),
                type_profile=TYPE_PROFILE_REASONING if thinking else TYPE_PROFILE_STANDARD,
            ))
    profiles.append(BackboneProfile(
        id="Qwen2.5-72B-Instruct", family="qwen2.5",
        model_type=MODEL_TYPE_NON_REASONING,
        input_ptp=4.13, output_ptp=4.13,
        activated_params=72.0, perf_score=0.72,
        tok_cost_est=(_CALIB_IN_TOKENS * 4.13 + _CALIB_OUT_TOKENS * 4.13) / 1e6,
        lat_est=LATENCY_PER_BILLION * 72.0 + LATENCY_OVERHEAD,
        perf_profile=("The Qwen2.5-72B-Instruct model is an instruction-tuned "
                      "generative model with 72.0B parameters scoring 0.72 on "
                      "general-knowledge benchmarks."),
        ptp_profile=("This model has a per-token price of 4.13 CNY per million "
                     "input tokens, 4.13 CNY per million output tokens."),
        type_profile=TYPE_PROFILE_STANDARD,
    ))
    return profiles


def make_dataset(n: int, seed: int, prefix: str = "q") -> list[Query]:
    """Queries whose text length tracks their true difficulty."""
    rng = np.random.default_rng(seed)
    queries = []
    for i in range(n):
        difficulty = float(rng.uniform())
        n_words = 4 + int(round(difficulty * 36))
        words = [_TOPIC_WORDS[int(rng.integers(len(_TOPIC_WORDS)))] for _ in range(n_words)]
        qid = f"{prefix}{i:04d}"
        queries.append(Query(
            query_id=qid,
            text=f"task {qid}: " + " ".join(words),
            answer=f"ans-{qid}",
            difficulty=difficulty,
        ))
    return queries
