"""Difficulty-aware pool selection.

Effective difficulty lands in [0, 1]; cost-aware logits over the pools at
or below the strict upper bound give softmax weights whose prefix sums act
as bucket thresholds; a smoothed (sigmoid-difference) bucketizer turns the
difficulty into a categorical distribution over pools.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .embedding import encode_text
from .errors import SelectError

BUCKET_TEMPERATURE = 0.05
STUB_LENGTH_REF = 40  # tokens mapping to difficulty 1.0 in the stub
STUB_JITTER = 0.15

SOURCE_STUB = "stub"
SOURCE_HEAD = "head"

MODE_SAMPLE = "sample"
MODE_ARGMAX = "argmax"


@dataclass
class DifficultyEstimate:
    d: float
    d_eff: float
    source: str
    node: dc.Tensor | None = None  # d_eff as a graph node when the head is used

    def __post_init__(self):
        if not 0.0 <= self.d <= 1.0:
            raise SelectError(f"difficulty {self.d} outside [0,1]")


@dataclass
class PoolDecision:
    n_pools: int
    upper_bound: int
    weights: np.ndarray  # full length; masked pools carry 0
    thresholds: np.ndarray  # prefix sums over unmasked pools
    probs: np.ndarray  # full length; masked pools carry 0
    pool_index: int | None = None
    p_sel: float | None = None
    log_p_sel: float | None = None
    probs_node: dc.Tensor | None = field(default=None, repr=False)
    log_p_node: dc.Tensor | None = field(default=None, repr=False)


def _hash_unit(text: str, seed: int) -> float:
    digest = hashlib.sha256(f"{seed}\x1f{text}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def stub_difficulty(query_text: str, seed: int = 0) -> float:
    """Length-based difficulty blended with a seeded hash jitter."""
    base = min(len(query_text.split()) / STUB_LENGTH_REF, 1.0)
    jitter = _hash_unit(query_text, seed)
    return float(np.clip((1.0 - STUB_JITTER) * base + STUB_JITTER * jitter, 0.0, 1.0))


def estimate_difficulty(query_text: str, params=None, store=None, delta: float = 0.0,
                        seed: int = 0) -> DifficultyEstimate:
    """Difficulty in [0,1] from the trainable MLP head, or the stub.

    The encoder itself is frozen (precomputed vectors or the hash fallback);
    only the head parameters carry gradient. Training labels that arrive as
    ease fractions are used as difficulty = 1 - ease.
    """
    if params is not None and "diff_w1" in params:
        x = dc.constant(encode_text(query_text, store))
        hidden = dc.relu(dc.add(dc.matvec(params["diff_w1"], x), params["diff_b1"]))
        logit = dc.add(dc.dot(params["diff_w2"], hidden), params["diff_b2"])
        d_node = dc.sigmoid(logit)
        eff_node = dc.clamp01(dc.add(d_node, dc.constant(delta)))
        return DifficultyEstimate(d=float(d_node.data), d_eff=float(eff_node.data),
                                  source=SOURCE_HEAD, node=eff_node)
    d = stub_difficulty(query_text, seed=seed)
    d_eff = float(np.clip(d + delta, 0.0, 1.0))
    return DifficultyEstimate(d=d, d_eff=d_eff, source=SOURCE_STUB)


def pool_mean_concats(pools, embeddings) -> list[np.ndarray]:
    """Per pool: mean over members of [e_perf; e_ptp; e_type]."""
    out = []
    for pool in pools:
        if not pool:
            raise SelectError("empty pool")
        rows = [np.concatenate(embeddings[m]) for m in pool]
        out.append(np.mean(rows, axis=0))
    return out


def pool_distribution(pool_set, mean_concats, params, d_eff, upper_bound: int,
                      tau_b: float = BUCKET_TEMPERATURE) -> PoolDecision:
    """Unsampled decision: weights, thresholds and bucketized probabilities.

    d_eff may be a float or a scalar graph node (when the difficulty head is
    trainable). Pools above upper_bound are masked out before the softmax;
    thresholds therefore live on the unmasked prefix only.
    """
    n_pools = len(pool_set.pools)
    if not 0 <= upper_bound < n_pools:
        raise SelectError(f"upper_bound {upper_bound} outside [0, {n_pools})")
    if tau_b <= 0:
        raise SelectError(f"bucket temperature must be > 0, got {tau_b}")
    n_open = upper_bound + 1
    if n_open == 0:
        raise SelectError("all pools masked")

    alpha = dc.softplus(params["alpha_raw"])
    logit_nodes = []
    for p in range(n_open):
        ctx = dc.matvec(params["w_pool_ctx"], dc.constant(mean_concats[p]))
        score = dc.dot(params["w_pool_sel"], ctx)
        cost = dc.mul(alpha, dc.constant(pool_set.cost_curve[p]))
        logit_nodes.append(dc.sub(score, cost))
    weights_node = dc.softmax(dc.concat(logit_nodes))
    thr_node = dc.cumsum(weights_node)

    d_node = d_eff if isinstance(d_eff, dc.Tensor) else dc.constant(float(d_eff))
    if n_open == 1:
        probs_node = dc.constant(np.ones(1))
    else:
        # sigmoid steps at the interior thresholds; the outermost thresholds
        # act as -inf / +inf so the bucket masses telescope to one
        steps = [dc.sigmoid(dc.scale(dc.sub(d_node, dc.getitem(thr_node, j)), 1.0 / tau_b))
                 for j in range(n_open - 1)]
        parts = [dc.sub(dc.constant(1.0), steps[0])]
        for j in range(1, n_open - 1):
            parts.append(dc.sub(steps[j - 1], steps[j]))
        parts.append(steps[n_open - 2])
        raw = dc.concat(parts)
        probs_node = dc.div(raw, dc.tsum(raw))

    weights = np.zeros(n_pools)
    weights[:n_open] = weights_node.data
    probs = np.zeros(n_pools)
    probs[:n_open] = probs_node.data
    return PoolDecision(
        n_pools=n_pools,
        upper_bound=upper_bound,
        weights=weights,
        thresholds=thr_node.data.copy(),
        probs=probs,
        probs_node=probs_node,
    )


def sample_pool(decision: PoolDecision, rng=None, mode: str = MODE_SAMPLE,
                given: int | None = None) -> PoolDecision:
    """Attach the sampled (or argmax, or externally fixed) pool choice."""
    open_probs = decision.probs[: decision.upper_bound + 1]
    if given is not None:
        idx = int(given)
    elif mode == MODE_ARGMAX:
        idx = int(np.argmax(open_probs))
    elif mode == MODE_SAMPLE:
        if rng is None:
            raise SelectError("sampling requires an rng")
        idx = int(rng.choice(len(open_probs), p=open_probs / open_probs.sum()))
    else:
        raise SelectError(f"unknown mode {mode!r}")
    if not 0 <= idx <= decision.upper_bound:
        raise SelectError(f"pool index {idx} is masked")
    p_node = dc.getitem(decision.probs_node, idx)
    log_node = dc.safe_log(p_node)
    decision.pool_index = idx
    decision.p_sel = float(p_node.data)
    decision.log_p_sel = float(log_node.data)
    decision.log_p_node = log_node
    return decision
