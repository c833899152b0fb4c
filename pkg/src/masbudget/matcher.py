"""Query-conditioned role-backbone matching within the selected pool."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import SelectError

MODE_SAMPLE = "sample"
MODE_ARGMAX = "argmax"


@dataclass
class AgentTemplate:
    role_id: str
    role_prompt: str
    plugins: list[str] = field(default_factory=list)


@dataclass
class MatchDecision:
    assignment: dict[int, str]  # role index -> backbone id
    per_role_probs: list[np.ndarray]
    log_p_match: float
    log_p_node: dc.Tensor | None = field(default=None, repr=False)


def backbone_repr(e_perf, e_ptp, e_type, params) -> dc.Tensor:
    """u_m: perf embedding fused with the projected cost/type pair."""
    ct = dc.matvec(params["w_cost_type"],
                   dc.concat([dc.constant(e_ptp), dc.constant(e_type)]))
    return dc.matvec(params["w_backbone"], dc.concat([dc.constant(e_perf), ct]))


def pool_context(mean_concat, params) -> dc.Tensor:
    """Global pool context g from the mean member embedding concatenation."""
    return dc.matvec(params["w_pool_ctx"], dc.constant(mean_concat))


def role_repr(role_embedding, query_embedding, pool_ctx: dc.Tensor, params) -> dc.Tensor:
    """v_i from the role prompt, the query, and the pool context."""
    stacked = dc.concat([dc.constant(role_embedding), dc.constant(query_embedding), pool_ctx])
    return dc.matvec(params["w_role"], stacked)


def _role_rng(base_entropy: int, role_id: str):
    digest = hashlib.sha256(role_id.encode("utf-8")).digest()
    return np.random.default_rng([base_entropy, int.from_bytes(digest[:8], "big")])


def match_roles(roles: list[AgentTemplate], pool_members: list[str], embeddings,
                query_embedding, mean_concat, params, rng=None,
                mode: str = MODE_SAMPLE, role_embeddings=None,
                given: dict[int, str] | None = None) -> MatchDecision:
    """One backbone per role from per-role dot-product softmaxes.

    Each role draws from its own rng stream keyed by role_id, so permuting
    the role order permutes the assignment without changing any draw. The
    same backbone may serve several roles.
    """
    if not roles:
        raise SelectError("match_roles: no roles")
    if not pool_members:
        raise SelectError("match_roles: empty pool")
    u_nodes = [backbone_repr(*embeddings[m], params) for m in pool_members]
    u_mat = dc.stack_rows(u_nodes)
    g = pool_context(mean_concat, params)

    base_entropy = int(rng.integers(2**63)) if rng is not None else 0
    assignment: dict[int, str] = {}
    per_role_probs = []
    log_nodes = []
    for i, role in enumerate(roles):
        r_emb = role_embeddings[i] if role_embeddings is not None else None
        if r_emb is None:
            raise SelectError("match_roles: role embeddings required")
        v_i = role_repr(r_emb, query_embedding, g, params)
        probs_node = dc.softmax(dc.matvec(u_mat, v_i))
        probs = probs_node.data
        if given is not None:
            choice = pool_members.index(given[i])
        elif mode == MODE_ARGMAX:
            choice = int(np.argmax(probs))
        elif mode == MODE_SAMPLE:
            role_rng = _role_rng(base_entropy, role.role_id)
            choice = int(role_rng.choice(len(pool_members), p=probs / probs.sum()))
        else:
            raise SelectError(f"unknown mode {mode!r}")
        assignment[i] = pool_members[choice]
        per_role_probs.append(probs.copy())
        log_nodes.append(dc.safe_log(dc.getitem(probs_node, choice)))

    total = log_nodes[0]
    for n in log_nodes[1:]:
        total = dc.add(total, n)
    return MatchDecision(assignment=assignment, per_role_probs=per_role_probs,
                         log_p_match=float(total.data), log_p_node=total)
