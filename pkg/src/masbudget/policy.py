"""Parameter layout for the configurator policy.

All decision heads (pool selection, matching, gating, topology, hop limit)
read from one ParameterStore so a single SGD step updates the whole policy.
The pool context map (w_pool_ctx) and the gate scorer (w_gate) are distinct
parameters with different shapes despite their similar naming.
"""

from __future__ import annotations

import math

from .diffcore import ParameterStore

EMBED_DIM = 64  # H for the fallback hash encoder
HIDDEN = 32  # policy hidden size
HEAD_HIDDEN = 16  # difficulty-head hidden size

GAMMA_INIT = 0.1
ALPHA_INIT = 1.0


def build_params(seed: int = 0, embed_dim: int = EMBED_DIM, hidden: int = HIDDEN,
                 max_agents: int = 6, head_hidden: int = HEAD_HIDDEN) -> ParameterStore:
    store = ParameterStore(seed=seed)
    h, d = embed_dim, hidden

    # pool selection
    store.add("w_pool_ctx", (d, 3 * h))
    store.add("w_pool_sel", (d,))
    # cost aversion alpha = softplus(alpha_raw), kept >= 0 by construction
    store.add_const("alpha_raw", math.log(math.expm1(ALPHA_INIT)))

    # difficulty head (the trainable MLP on top of the frozen encoder)
    store.add("diff_w1", (head_hidden, h))
    store.add("diff_b1", (head_hidden,), fan_in=h)
    store.add("diff_w2", (head_hidden,))
    store.add("diff_b2", (), fan_in=head_hidden)

    # role-backbone matching
    store.add("w_cost_type", (h, 2 * h))
    store.add("w_backbone", (d, 2 * h))
    store.add("w_role", (d, 2 * h + d))

    # unified agent representation
    store.add("w_query_proto", (d, h))
    store.add("w_role_proto", (d, h))
    store.add("w_llm_head", (d, h))
    store.add("w_attn_q", (d, 2 * d))
    store.add("w_attn_k", (d, 3 * d))
    store.add("w_attn_v", (d, 3 * d))
    store.add("w_ctx", (d, d))
    store.add_const("gamma", GAMMA_INIT)

    # gating, topology, hop limit
    store.add("w_gate", (2 * d,))
    store.add("w_edge", (d, d))
    store.add("w_hop", (max(max_agents - 1, 1), d))
    return store


def hidden_size(store: ParameterStore) -> int:
    return store["w_pool_sel"].shape[0]


def embed_size(store: ParameterStore) -> int:
    return store["w_query_proto"].shape[1]
