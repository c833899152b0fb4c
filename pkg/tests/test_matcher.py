import math

import numpy as np
import pytest

from masbudget import diffcore as dc
from masbudget import matcher, policy
from masbudget.embedding import hash_embed

EMBED = 16
HIDDEN = 8


def make_params(seed=0):
    return policy.build_params(seed=seed, embed_dim=EMBED, hidden=HIDDEN,
                               max_agents=4, head_hidden=4)


def make_world(n_members=3, n_roles=3, seed=0):
    rng = np.random.default_rng(seed)
    members = [f"m{i}" for i in range(n_members)]
    embeddings = {m: tuple(rng.normal(size=EMBED) for _ in range(3)) for m in members}
    roles = [matcher.AgentTemplate(f"role{i}", f"prompt for role {i}")
             for i in range(n_roles)]
    role_embs = [hash_embed(r.role_prompt, EMBED) for r in roles]
    query_emb = hash_embed("an example query", EMBED)
    mean_concat = np.mean([np.concatenate(embeddings[m]) for m in members], axis=0)
    return members, embeddings, roles, role_embs, query_emb, mean_concat


def test_backbone_repr_zero_embeddings_give_zero():
    params = make_params()
    u = matcher.backbone_repr(np.zeros(EMBED), np.zeros(EMBED), np.zeros(EMBED), params)
    assert np.array_equal(u.data, np.zeros(HIDDEN))


def test_backbone_repr_deterministic():
    params = make_params(seed=2)
    rng = np.random.default_rng(0)
    triple = tuple(rng.normal(size=EMBED) for _ in range(3))
    a = matcher.backbone_repr(*triple, params)
    b = matcher.backbone_repr(*triple, params)
    assert np.array_equal(a.data, b.data)


def test_backbone_repr_hand_arithmetic():
    params = policy.build_params(seed=0, embed_dim=2, hidden=2, max_agents=2)
    wct = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    wu = np.array([[1.0, 2.0, 3.0, 4.0], [0.5, 0.5, 0.5, 0.5]])
    params["w_cost_type"].data = wct
    params["w_backbone"].data = wu
    e_perf, e_ptp, e_type = np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])
    # ct = wct @ [3,4,5,6] = [8, 10]; u = wu @ [1,2,8,10]
    u = matcher.backbone_repr(e_perf, e_ptp, e_type, params)
    assert np.array_equal(u.data, wu @ np.array([1.0, 2.0, 8.0, 10.0]))


def test_role_repr_single_member_pool_mean_is_member():
    members, embeddings, roles, role_embs, q, _ = make_world(n_members=1)
    concat = np.concatenate(embeddings[members[0]])
    mean_concat = np.mean([concat], axis=0)
    assert np.array_equal(mean_concat, concat)


def test_role_repr_zero_inputs_give_zero():
    params = make_params()
    g = matcher.pool_context(np.zeros(3 * EMBED), params)
    v = matcher.role_repr(np.zeros(EMBED), np.zeros(EMBED), g, params)
    assert np.array_equal(v.data, np.zeros(HIDDEN))


def test_role_repr_hand_arithmetic():
    params = policy.build_params(seed=0, embed_dim=1, hidden=1, max_agents=2)
    params["w_pool_ctx"].data = np.array([[1.0, 1.0, 1.0]])
    params["w_role"].data = np.array([[2.0, 3.0, 4.0]])
    g = matcher.pool_context(np.array([1.0, 2.0, 3.0]), params)
    assert g.data == pytest.approx([6.0])
    v = matcher.role_repr(np.array([1.0]), np.array([2.0]), g, params)
    assert v.data == pytest.approx([2.0 * 1 + 3.0 * 2 + 4.0 * 6])


def test_zero_params_give_uniform_match():
    members, embeddings, roles, role_embs, q, mean_concat = make_world()
    params = make_params()
    for name in ("w_cost_type", "w_backbone", "w_role", "w_pool_ctx"):
        params[name].data = np.zeros_like(params[name].data)
    rng = np.random.default_rng(1)
    dec = matcher.match_roles(roles, members, embeddings, q, mean_concat, params,
                              rng, "sample", role_embeddings=role_embs)
    for probs in dec.per_role_probs:
        assert probs == pytest.approx(np.full(len(members), 1 / len(members)))
    assert dec.log_p_match == pytest.approx(len(roles) * math.log(1 / len(members)))


def test_two_member_symmetry():
    members, embeddings, roles, role_embs, q, mean_concat = make_world(
        n_members=2, n_roles=1)
    params = make_params()
    for name in ("w_cost_type", "w_backbone"):
        params[name].data = np.zeros_like(params[name].data)
    dec = matcher.match_roles(roles, members, embeddings, q, mean_concat, params,
                              np.random.default_rng(0), "sample",
                              role_embeddings=role_embs)
    assert dec.per_role_probs[0] == pytest.approx([0.5, 0.5])


def test_joint_log_prob_equals_recomputed_sum():
    members, embeddings, roles, role_embs, q, mean_concat = make_world(seed=3)
    params = make_params(seed=3)
    dec = matcher.match_roles(roles, members, embeddings, q, mean_concat, params,
                              np.random.default_rng(17), "sample",
                              role_embeddings=role_embs)
    recomputed = 0.0
    for i, probs in enumerate(dec.per_role_probs):
        choice = members.index(dec.assignment[i])
        recomputed += math.log(probs[choice])
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert dec.log_p_match == pytest.approx(recomputed, abs=1e-12)


def test_permuting_roles_permutes_assignment():
    members, embeddings, roles, role_embs, q, mean_concat = make_world(seed=5)
    params = make_params(seed=5)
    fwd = matcher.match_roles(roles, members, embeddings, q, mean_concat, params,
                              np.random.default_rng(7), "sample",
                              role_embeddings=role_embs)
    perm = [2, 0, 1]
    dec = matcher.match_roles([roles[i] for i in perm], members, embeddings, q,
                              mean_concat, params, np.random.default_rng(7),
                              "sample", role_embeddings=[role_embs[i] for i in perm])
    for new_idx, old_idx in enumerate(perm):
        assert dec.assignment[new_idx] == fwd.assignment[old_idx]


def test_logit_shift_invariance():
    # adding a constant to every logit of a role leaves its distribution alone
    logits = np.array([0.3, -1.2, 2.0])
    a = dc.softmax(dc.constant(logits)).data
    b = dc.softmax(dc.constant(logits + 100.0)).data
    assert a == pytest.approx(b, abs=1e-12)


def test_same_backbone_may_serve_multiple_roles():
    members, embeddings, roles, role_embs, q, mean_concat = make_world(
        n_members=1, n_roles=3)
    params = make_params()
    dec = matcher.match_roles(roles, members, embeddings, q, mean_concat, params,
                              np.random.default_rng(0), "sample",
                              role_embeddings=role_embs)
    assert set(dec.assignment.values()) == {"m0"}


def test_log_p_match_grad_check():
    members, embeddings, roles, role_embs, q, mean_concat = make_world(seed=9)
    params = make_params(seed=9)
    fixed = matcher.match_roles(roles, members, embeddings, q, mean_concat, params,
                                np.random.default_rng(3), "sample",
                                role_embeddings=role_embs)

    def f():
        dec = matcher.match_roles(roles, members, embeddings, q, mean_concat,
                                  params, None, "sample",
                                  role_embeddings=role_embs,
                                  given=fixed.assignment)
        return dec.log_p_node

    rep = dc.grad_check(f, params, seed=1, sample_frac=0.2)
    assert rep["passed"], rep
