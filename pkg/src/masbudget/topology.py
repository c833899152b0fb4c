"""Agent representation, gating, and latency-aware DAG synthesis.

Agents keep a fixed order (the role-template file order); edges are only
sampled for i < j under that order, so every sampled topology is acyclic by
construction. Hard keep/edge bits are drawn through a Gumbel-Sigmoid
(Concrete) relaxation with a straight-through 0.5 threshold; the factorized
Bernoulli log-probabilities (not the relaxed values) feed the policy loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import TopologyError

GUMBEL_TAU = 1.0

MODE_SAMPLE = "sample"
MODE_ARGMAX = "argmax"


@dataclass
class AgentRepr:
    h: dc.Tensor
    role_proto: dc.Tensor
    context: dc.Tensor


@dataclass
class GateDecision:
    keep_probs: np.ndarray
    bits: list[int]
    log_p_gate: float
    retained: list[int]
    log_p_node: dc.Tensor | None = field(default=None, repr=False)


@dataclass
class TopologyDecision:
    n: int
    edge_probs: dict[tuple[int, int], float]
    edges: set[tuple[int, int]]
    log_p_topo: float
    log_p_node: dc.Tensor | None = field(default=None, repr=False)
    hop_probs: np.ndarray | None = None
    l_max: float | None = None
    l_max_node: dc.Tensor | None = field(default=None, repr=False)
    critical_path_len: int | None = None
    pruned_edges: set[tuple[int, int]] | None = None


# ---------------------------------------------------------------------------
# representation


def agent_representation(role_embeddings, query_embedding, backbone_embeddings,
                         params) -> list[AgentRepr]:
    """Unified query- and backbone-conditioned agent vectors.

    backbone_embeddings holds one (e_perf, e_ptp, e_type) triple per agent,
    for the backbone matched to that agent's role. The attention context has
    a single key/value row per agent, so it reduces to the value row.
    """
    q_h = dc.matvec(params["w_query_proto"], dc.constant(query_embedding))
    reprs = []
    for r_emb, (e_perf, e_ptp, e_type) in zip(role_embeddings, backbone_embeddings):
        r_h = dc.matvec(params["w_role_proto"], dc.constant(r_emb))
        d_i = dc.matvec(params["w_llm_head"], dc.constant(e_perf))
        c_i = dc.matvec(params["w_llm_head"], dc.constant(e_ptp))
        t_i = dc.matvec(params["w_llm_head"], dc.constant(e_type))
        cost_stack = dc.concat([d_i, c_i, t_i])
        q_i = dc.matvec(params["w_attn_q"], dc.concat([r_h, q_h]))
        k_i = dc.matvec(params["w_attn_k"], cost_stack)
        v_i = dc.matvec(params["w_attn_v"], cost_stack)
        attended = dc.attention(q_i, dc.stack_rows([k_i]), dc.stack_rows([v_i]))
        context = dc.matvec(params["w_ctx"], attended)
        h_i = dc.add(r_h, dc.mul(params["gamma"], context))
        reprs.append(AgentRepr(h=h_i, role_proto=r_h, context=context))
    return reprs


# ---------------------------------------------------------------------------
# sampling helpers


def gumbel_sigmoid_bit(p: float, rng, tau: float) -> int:
    """Hard bit via the Concrete relaxation with a 0.5 threshold.

    Thresholding the relaxed sample at 0.5 is exactly Bernoulli(p) at any
    temperature, which keeps sampled frequencies aligned with keep/edge
    probabilities.
    """
    u = float(rng.uniform())
    u = min(max(u, 1e-12), 1.0 - 1e-12)
    logistic = math.log(u) - math.log1p(-u)
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    logit = math.log(p) - math.log1p(-p)
    z = (logit + logistic) / tau
    if z >= 0:
        y_soft = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        y_soft = e / (1.0 + e)
    return 1 if y_soft > 0.5 else 0


def _bernoulli_log_term(p_node: dc.Tensor, bit: int) -> dc.Tensor:
    if bit:
        return dc.safe_log(p_node)
    return dc.safe_log(dc.sub(dc.constant(1.0), p_node))


# ---------------------------------------------------------------------------
# gating


def gate_agents(reprs: list[AgentRepr], params, rng=None, mode: str = MODE_SAMPLE,
                tau_g: float = GUMBEL_TAU, given: list[int] | None = None) -> GateDecision:
    """Keep/drop bits per agent with a two-agent floor.

    If fewer than two bits come up, the highest-probability agents are
    forced on; forced bits contribute log p_i to the gate log-probability,
    the same as naturally kept ones.
    """
    if not reprs:
        raise TopologyError("gate_agents: no agents")
    h_mat = dc.stack_rows([r.h for r in reprs])
    h_bar = dc.row_mean(h_mat)
    p_nodes = [dc.sigmoid(dc.dot(params["w_gate"], dc.concat([r.h, h_bar])))
               for r in reprs]
    probs = np.array([float(p.data) for p in p_nodes])

    if given is not None:
        bits = [int(b) for b in given]
    elif mode == MODE_ARGMAX:
        bits = [1 if p >= 0.5 else 0 for p in probs]
    elif mode == MODE_SAMPLE:
        if rng is None:
            raise TopologyError("sampling requires an rng")
        bits = [gumbel_sigmoid_bit(p, rng, tau_g) for p in probs]
    else:
        raise TopologyError(f"unknown mode {mode!r}")

    floor = min(2, len(reprs))
    if sum(bits) < floor:
        order = sorted(range(len(bits)), key=lambda i: (-probs[i], i))
        for i in order:
            if sum(bits) >= floor:
                break
            bits[i] = 1

    terms = [_bernoulli_log_term(p_nodes[i], bits[i]) for i in range(len(bits))]
    total = terms[0]
    for t in terms[1:]:
        total = dc.add(total, t)
    retained = [i for i, b in enumerate(bits) if b]
    return GateDecision(keep_probs=probs, bits=bits, log_p_gate=float(total.data),
                        retained=retained, log_p_node=total)


# ---------------------------------------------------------------------------
# topology synthesis


def synthesize_topology(reprs: list[AgentRepr], params, rng=None,
                        mode: str = MODE_SAMPLE, tau_e: float = GUMBEL_TAU,
                        admissible: set[tuple[int, int]] | None = None,
                        given: set[tuple[int, int]] | None = None) -> TopologyDecision:
    """Sample directed edges i -> j (i < j) among the retained agents.

    `admissible` restricts the candidate pairs (local indices); pairs not in
    it get no probability and never enter the log-probability. Any sampled
    edge set is acyclic because edges respect the fixed agent order.
    """
    n = len(reprs)
    if n < 2:
        raise TopologyError(f"synthesize_topology: need >= 2 agents, got {n}")
    proj = [dc.matvec(params["w_edge"], r.h) for r in reprs]

    edge_probs: dict[tuple[int, int], float] = {}
    edges: set[tuple[int, int]] = set()
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            if admissible is not None and (i, j) not in admissible:
                continue
            p_node = dc.sigmoid(dc.dot(proj[i], proj[j]))
            p = float(p_node.data)
            if given is not None:
                bit = 1 if (i, j) in given else 0
            elif mode == MODE_ARGMAX:
                bit = 1 if p >= 0.5 else 0
            elif mode == MODE_SAMPLE:
                if rng is None:
                    raise TopologyError("sampling requires an rng")
                bit = gumbel_sigmoid_bit(p, rng, tau_e)
            else:
                raise TopologyError(f"unknown mode {mode!r}")
            edge_probs[(i, j)] = p
            if bit:
                edges.add((i, j))
            terms.append(_bernoulli_log_term(p_node, bit))

    if terms:
        total = terms[0]
        for t in terms[1:]:
            total = dc.add(total, t)
    else:
        total = dc.constant(0.0)
    return TopologyDecision(n=n, edge_probs=edge_probs, edges=edges,
                            log_p_topo=float(total.data), log_p_node=total)


# ---------------------------------------------------------------------------
# hop limit


def hop_limit(reprs: list[AgentRepr], params):
    """(pi_hop, L_max): one-hop baseline plus the expected increment."""
    n = len(reprs)
    if n < 2:
        raise TopologyError(f"hop_limit: need >= 2 agents, got {n}")
    h_bar = dc.row_mean(dc.stack_rows([r.h for r in reprs]))
    logits = dc.matvec(dc.slice_rows(params["w_hop"], n - 1), h_bar)
    pi = dc.softmax(logits)
    increments = dc.constant(np.arange(1, n, dtype=np.float64))
    l_max_node = dc.add(dc.constant(1.0), dc.dot(pi, increments))
    return pi.data.copy(), l_max_node


# ---------------------------------------------------------------------------
# path analysis


def topological_order(n: int, edges) -> list[int]:
    indegree = [0] * n
    succ = [[] for _ in range(n)]
    for i, j in edges:
        succ[i].append(j)
        indegree[j] += 1
    ready = sorted(i for i in range(n) if indegree[i] == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        added = []
        for w in succ[v]:
            indegree[w] -= 1
            if indegree[w] == 0:
                added.append(w)
        if added:
            ready = sorted(ready + added)
    if len(order) != n:
        raise TopologyError("cycle detected")
    return order


def longest_path(edges, n: int) -> int:
    """Edge count on the longest path; 0 for an empty edge set."""
    order = topological_order(n, edges)
    dist = [0] * n
    for v in order:
        for i, j in edges:
            if i == v:
                dist[j] = max(dist[j], dist[v] + 1)
    return max(dist) if dist else 0


def _lex_longest_path(edges, n: int) -> list[int]:
    """Lexicographically smallest node sequence among the longest paths."""
    succ = [[] for _ in range(n)]
    for i, j in edges:
        succ[i].append(j)
    order = topological_order(n, edges)
    len_from = [0] * n
    for v in reversed(order):
        for w in succ[v]:
            len_from[v] = max(len_from[v], len_from[w] + 1)
    total = max(len_from) if len_from else 0
    start = min(v for v in range(n) if len_from[v] == total)
    path = [start]
    remaining = total
    cur = start
    while remaining > 0:
        nxt = min(w for w in succ[cur] if len_from[w] == remaining - 1)
        path.append(nxt)
        cur = nxt
        remaining -= 1
    return path


def prune_to_hop_limit(edges, edge_probs, l_max: float, n: int):
    """Drop the lowest-probability edge on the critical path until the
    longest path fits under ceil(l_max). Returns a new edge set."""
    kept = set(edges)
    limit = math.ceil(l_max)
    while longest_path(kept, n) > limit:
        path = _lex_longest_path(kept, n)
        path_edges = list(zip(path[:-1], path[1:]))
        victim = min(path_edges, key=lambda e: (edge_probs.get(e, 0.0), e))
        kept.remove(victim)
    return kept


def length_penalty(ell: int, l_max_node: dc.Tensor) -> dc.Tensor:
    """ReLU(ell - L_max) on the pre-pruning path length, so the gradient
    reaches the hop-limit head."""
    return dc.relu(dc.sub(dc.constant(float(ell)), l_max_node))
