import math

import numpy as np
import pytest

from masbudget import diffcore as dc
from masbudget import policy, topology
from masbudget.errors import TopologyError

EMBED = 16
HIDDEN = 8


def make_params(seed=0, max_agents=5):
    return policy.build_params(seed=seed, embed_dim=EMBED, hidden=HIDDEN,
                               max_agents=max_agents, head_hidden=4)


def make_reprs(n, params, seed=0):
    rng = np.random.default_rng(seed)
    role_embs = [rng.normal(size=EMBED) for _ in range(n)]
    query = rng.normal(size=EMBED)
    triples = [tuple(rng.normal(size=EMBED) for _ in range(3)) for _ in range(n)]
    return topology.agent_representation(role_embs, query, triples, params)


def longest_path_oracle(edges, n):
    """Exhaustive path enumeration."""
    succ = {i: [j for (a, j) in edges if a == i] for i in range(n)}
    best = 0

    def walk(v, length):
        nonlocal best
        best = max(best, length)
        for w in succ[v]:
            walk(w, length + 1)

    for v in range(n):
        walk(v, 0)
    return best


# ---------------------------------------------------------------------------
# representation


def test_gamma_zero_gives_pure_role_prototype():
    params = make_params()
    params["gamma"].data = np.asarray(0.0)
    reprs = make_reprs(3, params)
    for r in reprs:
        assert np.array_equal(r.h.data, r.role_proto.data)


def test_single_row_attention_reduces_to_value_projection():
    params = make_params(seed=1)
    rng = np.random.default_rng(2)
    role_emb = rng.normal(size=EMBED)
    query = rng.normal(size=EMBED)
    triple = tuple(rng.normal(size=EMBED) for _ in range(3))
    (rep,) = topology.agent_representation([role_emb], query, [triple], params)
    # h = r_h + gamma * W_ctx @ (W_v [d;c;t]) because softmax over one row is 1
    r_h = params["w_role_proto"].data @ role_emb
    head = params["w_llm_head"].data
    stacked = np.concatenate([head @ triple[0], head @ triple[1], head @ triple[2]])
    v_i = params["w_attn_v"].data @ stacked
    expect = r_h + float(params["gamma"].data) * (params["w_ctx"].data @ v_i)
    assert rep.h.data == pytest.approx(expect, abs=1e-12)


def test_representation_toy_dims_hand_arithmetic():
    params = policy.build_params(seed=0, embed_dim=1, hidden=1, max_agents=2)
    for name, val in (("w_role_proto", 2.0), ("w_query_proto", 1.0),
                      ("w_llm_head", 1.0), ("w_ctx", 3.0), ("gamma", 0.5)):
        params[name].data = np.full_like(params[name].data, val)
    params["w_attn_q"].data = np.array([[1.0, 1.0]])
    params["w_attn_k"].data = np.array([[1.0, 1.0, 1.0]])
    params["w_attn_v"].data = np.array([[1.0, 2.0, 3.0]])
    (rep,) = topology.agent_representation([np.array([1.0])], np.array([1.0]),
                                           [(np.array([1.0]), np.array([2.0]),
                                             np.array([3.0]))], params)
    # r_h = 2; d,c,t = 1,2,3; v = 1+4+9 = 14; h = 2 + 0.5 * 3 * 14 = 23
    assert rep.h.data == pytest.approx([23.0])


# ---------------------------------------------------------------------------
# gating


def test_zero_gate_params_give_half_probs():
    params = make_params()
    params["w_gate"].data = np.zeros_like(params["w_gate"].data)
    reprs = make_reprs(4, params)
    dec = topology.gate_agents(reprs, params, mode="argmax")
    assert dec.keep_probs == pytest.approx(np.full(4, 0.5))
    # threshold at 0.5 keeps everyone at exactly 0.5
    assert dec.bits == [1, 1, 1, 1]


def test_gate_repair_forces_top_two():
    params = make_params(seed=3)
    reprs = make_reprs(3, params, seed=4)
    dec = topology.gate_agents(reprs, params, given=[0, 0, 0])
    assert sum(dec.bits) == 2
    probs = dec.keep_probs
    forced = sorted(range(3), key=lambda i: (-probs[i], i))[:2]
    assert sorted(dec.retained) == sorted(forced)
    # repaired bits count as kept in the log-probability
    expect = sum(math.log(probs[i]) if i in forced else math.log(1 - probs[i])
                 for i in range(3))
    assert dec.log_p_gate == pytest.approx(expect, abs=1e-12)


def test_gumbel_sigmoid_keep_frequency():
    rng = np.random.default_rng(123)
    n = 100_000
    hits = sum(topology.gumbel_sigmoid_bit(0.3, rng, tau=1.0) for _ in range(n))
    assert abs(hits / n - 0.3) <= 0.01


def test_gumbel_sigmoid_matches_bernoulli_at_low_temperature():
    rng = np.random.default_rng(5)
    n = 50_000
    for p in (0.1, 0.5, 0.9):
        hits = sum(topology.gumbel_sigmoid_bit(p, rng, tau=0.01) for _ in range(n))
        assert abs(hits / n - p) <= 0.015


def test_gate_always_leaves_two_agents():
    params = make_params(seed=6)
    rng = np.random.default_rng(0)
    reprs = make_reprs(5, params, seed=7)
    for _ in range(200):
        dec = topology.gate_agents(reprs, params, rng, "sample")
        assert len(dec.retained) >= 2


# ---------------------------------------------------------------------------
# synthesis


def test_identical_reprs_give_equal_edge_probs():
    params = make_params(seed=2)
    rng = np.random.default_rng(3)
    role = rng.normal(size=EMBED)
    query = rng.normal(size=EMBED)
    triple = tuple(rng.normal(size=EMBED) for _ in range(3))
    reprs = topology.agent_representation([role] * 3, query, [triple] * 3, params)
    dec = topology.synthesize_topology(reprs, params, mode="argmax")
    probs = set(round(p, 12) for p in dec.edge_probs.values())
    assert len(probs) == 1


def test_empty_admissible_set_gives_no_edges():
    params = make_params()
    reprs = make_reprs(3, params)
    dec = topology.synthesize_topology(reprs, params, mode="argmax", admissible=set())
    assert dec.edges == set()
    assert dec.edge_probs == {}
    assert dec.log_p_topo == 0.0
    assert topology.longest_path(dec.edges, 3) == 0


def test_synthesize_requires_two_agents():
    params = make_params()
    reprs = make_reprs(1, params)
    with pytest.raises(TopologyError):
        topology.synthesize_topology(reprs, params, mode="argmax")


def test_log_p_topo_matches_recomputation():
    params = make_params(seed=8)
    reprs = make_reprs(4, params, seed=9)
    dec = topology.synthesize_topology(reprs, params, np.random.default_rng(11),
                                       "sample")
    recomputed = 0.0
    for pair, p in dec.edge_probs.items():
        recomputed += math.log(p) if pair in dec.edges else math.log(1 - p)
    assert dec.log_p_topo == pytest.approx(recomputed, abs=1e-12)


def test_sampled_edges_never_cycle():
    params = make_params(seed=10)
    rng = np.random.default_rng(1)
    reprs = make_reprs(5, params, seed=10)
    for _ in range(300):
        dec = topology.synthesize_topology(reprs, params, rng, "sample")
        topology.topological_order(5, dec.edges)  # raises on a cycle
        assert all(i < j for i, j in dec.edges)


# ---------------------------------------------------------------------------
# hop limit


def test_hop_limit_uniform_expectation():
    params = make_params(max_agents=4)
    params["w_hop"].data = np.zeros_like(params["w_hop"].data)
    reprs = make_reprs(4, params)
    pi, l_max = topology.hop_limit(reprs, params)
    assert pi == pytest.approx(np.full(3, 1 / 3))
    assert float(l_max.data) == pytest.approx(3.0)


def test_hop_limit_concentrated_on_one():
    params = make_params(max_agents=5)
    params["w_hop"].data = np.zeros_like(params["w_hop"].data)
    params["w_hop"].data[0] = 100.0  # k = 1 dominates
    reprs = make_reprs(3, params, seed=2)
    hbar = np.mean([r.h.data for r in reprs], axis=0)
    if not np.any(hbar):  # guard: zero pooled state would mask the logit
        pytest.skip("degenerate pooled representation")
    pi, l_max = topology.hop_limit(reprs, params)
    assert float(l_max.data) == pytest.approx(1.0 + pi @ np.arange(1, 3))


def test_hop_limit_zero_params_five_agents():
    params = make_params(max_agents=5)
    params["w_hop"].data = np.zeros_like(params["w_hop"].data)
    reprs = make_reprs(5, params, seed=3)
    pi, l_max = topology.hop_limit(reprs, params)
    assert pi == pytest.approx(np.full(4, 0.25))
    assert float(l_max.data) == pytest.approx(1.0 + (1 + 2 + 3 + 4) / 4)
    assert 2.0 <= float(l_max.data) <= 5.0


# ---------------------------------------------------------------------------
# paths and pruning


def test_longest_path_chain():
    edges = {(0, 1), (1, 2), (2, 3)}
    assert topology.longest_path(edges, 4) == 3


def test_longest_path_empty():
    assert topology.longest_path(set(), 3) == 0


def test_longest_path_matches_enumeration_on_random_dags():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.uniform() < 0.4}
        assert topology.longest_path(edges, n) == longest_path_oracle(edges, n)


def test_longest_path_detects_cycle():
    with pytest.raises(TopologyError):
        topology.longest_path({(0, 1), (1, 0)}, 2)


def test_prune_removes_min_prob_edge_on_critical_path():
    edges = {(0, 1), (1, 2), (2, 3)}
    probs = {(0, 1): 0.9, (1, 2): 0.2, (2, 3): 0.8}
    kept = topology.prune_to_hop_limit(edges, probs, l_max=2.0, n=4)
    assert kept == {(0, 1), (2, 3)}
    assert topology.longest_path(kept, 4) == 1


def test_prune_identity_when_within_limit():
    edges = {(0, 1), (1, 2)}
    probs = {(0, 1): 0.5, (1, 2): 0.5}
    assert topology.prune_to_hop_limit(edges, probs, l_max=2.0, n=3) == edges


def test_prune_complete_dag_to_single_hops():
    n = 4
    edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    rng = np.random.default_rng(0)
    probs = {e: float(rng.uniform(0.1, 0.9)) for e in edges}
    kept = topology.prune_to_hop_limit(edges, probs, l_max=1.0, n=n)
    assert topology.longest_path(kept, n) <= 1
    assert kept <= edges


def test_prune_trace_replay_follows_rule():
    """Each removal is the min-probability edge on the lexicographically
    smallest current longest path."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(3, 7))
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.uniform() < 0.7}
        probs = {e: float(rng.uniform()) for e in edges}
        l_max = float(rng.uniform(1.0, 2.5))
        kept = set(edges)
        removed_order = []
        limit = math.ceil(l_max)
        while topology.longest_path(kept, n) > limit:
            path = topology._lex_longest_path(kept, n)
            lex_all = _all_longest_paths(kept, n)
            assert path == min(lex_all)
            victim = min(zip(path, path[1:]), key=lambda e: (probs[e], e))
            kept.remove(victim)
            removed_order.append(victim)
        assert kept == topology.prune_to_hop_limit(edges, probs, l_max, n)
        assert topology.longest_path(kept, n) <= limit


def _all_longest_paths(edges, n):
    succ = {i: sorted(j for (a, j) in edges if a == i) for i in range(n)}
    paths = []

    def walk(v, path):
        paths.append(list(path))
        for w in succ[v]:
            walk(w, path + [w])

    for v in range(n):
        walk(v, [v])
    best = max(len(p) for p in paths)
    return [p for p in paths if len(p) == best]


def test_length_penalty_values():
    assert float(topology.length_penalty(2, dc.constant(3.0)).data) == 0.0
    assert float(topology.length_penalty(5, dc.constant(3.5)).data) == pytest.approx(1.5)


def test_length_penalty_gradient_reaches_hop_head():
    params = make_params(seed=12, max_agents=5)
    reprs_seed = 13

    def f():
        reprs = make_reprs(4, params, seed=reprs_seed)
        _, l_max = topology.hop_limit(reprs, params)
        return topology.length_penalty(5, l_max)  # 5 > L_max: active region

    rep = dc.grad_check(f, params, seed=2, sample_frac=0.2)
    assert rep["passed"], rep
    store_grads = _collect_grads(f, params)
    assert np.any(store_grads["w_hop"] != 0.0)


def _collect_grads(f, params):
    params.zero_grad()
    dc.backward(f())
    out = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
           for k, t in params.params.items()}
    params.zero_grad()
    return out


def test_gate_and_topo_grad_check():
    params = make_params(seed=14)
    fixed_bits = [1, 0, 1, 1]

    def f():
        reprs = make_reprs(4, params, seed=15)
        gdec = topology.gate_agents(reprs, params, given=fixed_bits)
        retained = [reprs[i] for i in gdec.retained]
        tdec = topology.synthesize_topology(retained, params, mode="sample",
                                            given={(0, 1), (1, 2)})
        return dc.add(gdec.log_p_node, tdec.log_p_node)

    rep = dc.grad_check(f, params, seed=3, sample_frac=0.2)
    assert rep["passed"], rep
