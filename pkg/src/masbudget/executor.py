"""Execute a concrete multi-agent instance and account cost and latency.

Nodes run in topological order; a node starts once all predecessors have
finished, so parallel branches overlap and end-to-end latency is the
critical path. Two backends: a deterministic simulator (the test target)
and a chat-completions HTTP client.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ExecutionError
from .matcher import AgentTemplate
from .topology import topological_order

UPSTREAM_BOOST = 0.05
ACCURACY_CAP = 0.99

SYNTH_SCHEMA_VERSION = 1


@dataclass
class Query:
    query_id: str
    text: str
    answer: str = ""
    difficulty: float = 0.5


@dataclass
class MasNode:
    template: AgentTemplate
    backbone_id: str


@dataclass
class MasInstance:
    nodes: list[MasNode]
    edges: set[tuple[int, int]]
    hop_limit: float = 1.0


@dataclass
class SyntheticBackbone:
    backbone_id: str
    base_accuracy: dict[str, float]  # band name -> success probability
    mean_out_tokens: float
    per_token_latency: float  # seconds per token (in + out)
    fixed_overhead: float  # seconds per call
    reasoning: bool = False
    gamma_task: float = 1.0  # output-length multiplier when reasoning


@dataclass
class NodeTrace:
    node_index: int
    backbone_id: str
    role_id: str
    tokens_in: int
    tokens_out: int
    start: float
    finish: float
    correct: bool | None
    text: str


@dataclass
class EpisodeResult:
    perf: float
    tok_cost: float
    latency: float
    answer: str
    nodes: list[NodeTrace] = field(default_factory=list)
    usage_estimated: bool = False


def difficulty_band(d: float) -> str:
    if d < 1.0 / 3.0:
        return "easy"
    if d < 2.0 / 3.0:
        return "medium"
    return "hard"


def assemble_prompt(node: MasNode, incoming, query_text: str) -> str:
    """Role prompt, the query, then upstream messages tagged by source role.

    `incoming` is a list of (source_role_id, message) ordered by source node
    index; the output is a pure function of the inputs.
    """
    lines = [node.template.role_prompt, f"Question: {query_text}"]
    for source_role, message in incoming:
        lines.append(f"[from {source_role}] {message}")
    return "\n".join(lines)


def simulate_response(backbone: SyntheticBackbone, prompt: str, difficulty: float,
                      rng, upstream_correct: int = 0, ground_truth: str = ""):
    """(tokens_in, tokens_out, correct, text) for one simulated node call.

    Output length is Poisson around the backbone's mean (scaled by the
    reasoning multiplier); correctness is Bernoulli at the difficulty-band
    accuracy plus a boost per correct upstream message, saturating at 0.99
    but never dropping below the base rate.
    """
    if not 0.0 <= difficulty <= 1.0:
        raise ExecutionError(f"difficulty {difficulty} outside [0,1]")
    tokens_in = len(prompt.split())
    mean_out = backbone.mean_out_tokens
    if backbone.reasoning:
        mean_out *= backbone.gamma_task
    tokens_out = int(rng.poisson(mean_out))
    base = backbone.base_accuracy[difficulty_band(difficulty)]
    acc = max(base, min(base + UPSTREAM_BOOST * upstream_correct, ACCURACY_CAP))
    correct = bool(rng.uniform() < acc)
    if correct:
        text = ground_truth
    else:
        tag = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:8]
        text = f"wrong:{tag}"
    return tokens_in, tokens_out, correct, text


class SimulatorBackend:
    """Deterministic synthetic backend; ground truth drives correctness."""

    def __init__(self, backbones: dict[str, SyntheticBackbone]):
        self.backbones = backbones

    def run_node(self, backbone_id: str, node: MasNode, prompt: str, query: Query,
                 upstream_correct: int, rng):
        sb = self.backbones[backbone_id]
        tokens_in, tokens_out, correct, text = simulate_response(
            sb, prompt, query.difficulty, rng,
            upstream_correct=upstream_correct, ground_truth=query.answer)
        duration = sb.fixed_overhead + sb.per_token_latency * (tokens_in + tokens_out)
        return tokens_in, tokens_out, text, duration, False


def exact_match_checker(answer: str, query: Query) -> float:
    return 1.0 if answer == query.answer else 0.0


def execute_mas(instance: MasInstance, query: Query, backend, rng,
                prices: dict[str, tuple[float, float]],
                checker=exact_match_checker) -> EpisodeResult:
    """Run all nodes, return performance plus exact cost/latency accounting.

    The final answer is the last node in topological order. On a backend
    failure the raised ExecutionError carries the partial EpisodeResult.
    """
    n = len(instance.nodes)
    missing = sorted({nd.backbone_id for nd in instance.nodes} - set(prices))
    if missing:
        raise ExecutionError(f"backbones not in catalog: {missing}")
    order = topological_order(n, instance.edges)
    preds = [[] for _ in range(n)]
    for i, j in instance.edges:
        preds[j].append(i)
    for p in preds:
        p.sort()

    finish = [0.0] * n
    texts: dict[int, str] = {}
    traces: list[NodeTrace] = []
    tok_cost = 0.0
    usage_estimated = False
    for v in order:
        node = instance.nodes[v]
        incoming = [(instance.nodes[u].template.role_id, texts[u]) for u in preds[v]]
        prompt = assemble_prompt(node, incoming, query.text)
        upstream_correct = sum(1 for u in preds[v] if texts[u] == query.answer)
        try:
            tokens_in, tokens_out, text, duration, estimated = backend.run_node(
                node.backbone_id, node, prompt, query, upstream_correct, rng)
        except ExecutionError:
            raise
        except Exception as exc:
            partial = EpisodeResult(perf=0.0, tok_cost=tok_cost,
                                    latency=max(finish) if traces else 0.0,
                                    answer="", nodes=traces,
                                    usage_estimated=usage_estimated)
            raise ExecutionError(f"node {v} ({node.backbone_id}) failed: {exc}",
                                 partial=partial) from exc
        usage_estimated = usage_estimated or estimated
        start = max((finish[u] for u in preds[v]), default=0.0)
        finish[v] = start + duration
        texts[v] = text
        in_ptp, out_ptp = prices[node.backbone_id]
        tok_cost += (tokens_in * in_ptp + tokens_out * out_ptp) / 1e6
        traces.append(NodeTrace(node_index=v, backbone_id=node.backbone_id,
                                role_id=node.template.role_id,
                                tokens_in=tokens_in, tokens_out=tokens_out,
                                start=start, finish=finish[v],
                                correct=(text == query.answer), text=text))

    answer = texts[order[-1]]
    latency = max(finish) if n else 0.0
    perf = float(checker(answer, query))
    return EpisodeResult(perf=perf, tok_cost=tok_cost, latency=latency,
                         answer=answer, nodes=traces, usage_estimated=usage_estimated)


# ---------------------------------------------------------------------------
# remote chat-completions backend


@dataclass
class RemoteEndpoint:
    base_url: str
    api_key_env: str = "MASBUDGET_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5


def remote_complete(backbone_id: str, prompt: str, endpoint: RemoteEndpoint,
                    transport=None, sleep=time.sleep):
    """One chat completion at temperature 0 with <= max_retries attempts.

    Returns (tokens_in, tokens_out, text, wall_latency, usage_estimated);
    usage falls back to whitespace token counts when the response omits the
    usage block.
    """
    import httpx

    headers = {}
    key = os.environ.get(endpoint.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    payload = {
        "model": backbone_id,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": 0,
    }
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    last_error = None
    for attempt in range(endpoint.max_retries):
        t0 = time.monotonic()
        try:
            with httpx.Client(transport=transport, timeout=endpoint.timeout) as client:
                resp = client.post(url, json=payload, headers=headers)
            resp.raise_for_status()
            body = resp.json()
        except Exception as exc:
            last_error = exc
            if attempt + 1 < endpoint.max_retries:
                sleep(endpoint.backoff * (2**attempt))
            continue
        wall = time.monotonic() - t0
        text = body["choices"][0]["message"]["content"]
        usage = body.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return (int(usage["prompt_tokens"]), int(usage["completion_tokens"]),
                    text, wall, False)
        return (len(prompt.split()), len(text.split()), text, wall, True)
    raise ExecutionError(f"remote completion failed after {endpoint.max_retries} "
                         f"attempts: {last_error}")


class RemoteBackend:
    """Adapter exposing remote_complete through the backend interface."""

    def __init__(self, endpoint: RemoteEndpoint, transport=None, sleep=time.sleep):
        self.endpoint = endpoint
        self.transport = transport
        self.sleep = sleep

    def run_node(self, backbone_id, node, prompt, query, upstream_correct, rng):
        tokens_in, tokens_out, text, wall, estimated = remote_complete(
            backbone_id, prompt, self.endpoint, transport=self.transport,
            sleep=self.sleep)
        return tokens_in, tokens_out, text, wall, estimated


# ---------------------------------------------------------------------------
# synthetic-backbone file


def save_synthetic_backbones(backbones: list[SyntheticBackbone], path):
    doc = {"schema_version": SYNTH_SCHEMA_VERSION,
           "backbones": [asdict(b) for b in backbones]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_synthetic_backbones(path) -> dict[str, SyntheticBackbone]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out = {}
    for rec in doc["backbones"]:
        sb = SyntheticBackbone(**rec)
        if not all(0.0 <= v <= 1.0 for v in sb.base_accuracy.values()):
            raise ExecutionError(f"{sb.backbone_id}: accuracy outside [0,1]")
        if sb.mean_out_tokens <= 0 or sb.per_token_latency <= 0 or sb.fixed_overhead <= 0:
            raise ExecutionError(f"{sb.backbone_id}: token/latency params must be > 0")
        out[sb.backbone_id] = sb
    return out
