import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from masbudget import executor as ex
from masbudget.errors import ExecutionError
from masbudget.matcher import AgentTemplate

GOLDEN = Path(__file__).parent / "golden" / "prompt_two_upstream.txt"


def node(role_id="solver", prompt="You are the solver.", backbone="tier0-a"):
    return ex.MasNode(template=AgentTemplate(role_id, prompt), backbone_id=backbone)


def backbone(bid="tier0-a", acc=1.0, mean_out=50.0, ptl=0.01, overhead=1.0,
             reasoning=False, gamma=1.0):
    return ex.SyntheticBackbone(
        backbone_id=bid,
        base_accuracy={"easy": acc, "medium": acc, "hard": acc},
        mean_out_tokens=mean_out, per_token_latency=ptl, fixed_overhead=overhead,
        reasoning=reasoning, gamma_task=gamma)


def path_latency_oracle(edges, durations, n):
    """Max root-to-sink sum of node durations, summed in path order."""
    succ = [[] for _ in range(n)]
    has_pred = [False] * n
    for i, j in edges:
        succ[i].append(j)
        has_pred[j] = True
    best = 0.0

    def walk(v, acc):
        nonlocal best
        acc = acc + durations[v]
        if not succ[v]:
            best = max(best, acc)
            return
        for w in sorted(succ[v]):
            walk(w, acc)

    for v in range(n):
        if not has_pred[v]:
            walk(v, 0.0)
    return best


# ---------------------------------------------------------------------------
# assemble_prompt


def test_prompt_without_incoming_edges():
    out = ex.assemble_prompt(node(), [], "What is 2+2?")
    assert out == "You are the solver.\nQuestion: What is 2+2?"


def test_prompt_deterministic():
    incoming = [("planner", "step 1 then step 2")]
    a = ex.assemble_prompt(node(), incoming, "q")
    b = ex.assemble_prompt(node(), incoming, "q")
    assert a == b


def test_prompt_two_upstream_matches_golden():
    incoming = [("planner", "break into parts"), ("critic", "watch the units")]
    out = ex.assemble_prompt(node(), incoming, "How many meters in a mile?")
    assert out == GOLDEN.read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# simulate_response


def test_always_correct_at_accuracy_one():
    rng = np.random.default_rng(0)
    sb = backbone(acc=1.0)
    for _ in range(50):
        _, _, correct, text = ex.simulate_response(sb, "p q r", 0.5, rng,
                                                   ground_truth="42")
        assert correct and text == "42"


def test_reasoning_multiplier_doubles_mean_tokens():
    rng = np.random.default_rng(1)
    plain = backbone(mean_out=80.0)
    lrm = backbone(mean_out=80.0, reasoning=True, gamma=2.0)
    n = 20_000
    m_plain = np.mean([ex.simulate_response(plain, "p", 0.5, rng)[1] for _ in range(n)])
    m_lrm = np.mean([ex.simulate_response(lrm, "p", 0.5, rng)[1] for _ in range(n)])
    assert m_lrm / m_plain == pytest.approx(2.0, rel=0.02)


def test_empirical_accuracy_rate():
    rng = np.random.default_rng(2)
    sb = backbone(acc=0.7)
    n = 100_000
    hits = sum(ex.simulate_response(sb, "p", 0.5, rng, ground_truth="g")[2]
               for _ in range(n))
    assert abs(hits / n - 0.7) <= 0.01


def test_upstream_boost_saturates_and_never_drops():
    rng = np.random.default_rng(3)
    sb = backbone(acc=1.0)
    for _ in range(100):
        assert ex.simulate_response(sb, "p", 0.5, rng, upstream_correct=3,
                                    ground_truth="gt")[2]


def test_tokens_in_is_whitespace_count():
    rng = np.random.default_rng(4)
    t_in, _, _, _ = ex.simulate_response(backbone(), "one two  three\nfour", 0.1, rng)
    assert t_in == 4


# ---------------------------------------------------------------------------
# execute_mas


def _two_parallel_one_sink():
    nodes = [node("a", backbone="fast3"), node("b", backbone="fast5"),
             node("c", backbone="fast2")]
    edges = {(0, 2), (1, 2)}
    return ex.MasInstance(nodes=nodes, edges=edges)


class FixedBackend:
    """Deterministic stand-in with scripted durations and texts."""

    def __init__(self, durations, texts=None, tokens=(10, 5)):
        self.durations = durations
        self.texts = texts or {}
        self.tokens = tokens

    def run_node(self, backbone_id, node, prompt, query, upstream_correct, rng):
        return (self.tokens[0], self.tokens[1],
                self.texts.get(backbone_id, query.answer),
                self.durations[backbone_id], False)


def test_critical_path_parallel_branches():
    instance = _two_parallel_one_sink()
    backend = FixedBackend({"fast3": 3.0, "fast5": 5.0, "fast2": 2.0})
    prices = {bid: (0.0, 0.0) for bid in ("fast3", "fast5", "fast2")}
    result = ex.execute_mas(instance, ex.Query("q", "text", "text-ans"), backend,
                            np.random.default_rng(0), prices)
    assert result.latency == pytest.approx(7.0)


def test_single_node_cost_at_published_prices():
    inst = ex.MasInstance(nodes=[node(backbone="Qwen3-32B")], edges=set())
    backend = FixedBackend({"Qwen3-32B": 1.0}, tokens=(1000, 500))
    prices = {"Qwen3-32B": (1.0, 4.0)}
    result = ex.execute_mas(inst, ex.Query("q", "t", "t-ans"), backend,
                            np.random.default_rng(0), prices)
    assert result.tok_cost == pytest.approx(0.003)


def test_no_edges_latency_is_max_of_nodes():
    nodes = [node("a", backbone="x"), node("b", backbone="y")]
    inst = ex.MasInstance(nodes=nodes, edges=set())
    backend = FixedBackend({"x": 4.0, "y": 9.0})
    result = ex.execute_mas(inst, ex.Query("q", "t", "ans"), backend,
                            np.random.default_rng(0), {"x": (0, 0), "y": (0, 0)})
    assert result.latency == pytest.approx(9.0)


def test_accounting_additivity_against_trace():
    sb = {f"b{i}": backbone(f"b{i}", acc=0.5, mean_out=30 + 10 * i) for i in range(4)}
    backend = ex.SimulatorBackend(sb)
    prices = {f"b{i}": (2.0 * (i + 1), 7.0 * (i + 1)) for i in range(4)}
    nodes = [node(f"r{i}", backbone=f"b{i}") for i in range(4)]
    inst = ex.MasInstance(nodes=nodes, edges={(0, 1), (0, 2), (1, 3), (2, 3)})
    result = ex.execute_mas(inst, ex.Query("q", "some question", "ans", 0.4),
                            backend, np.random.default_rng(5), prices)
    recomputed = sum((t.tokens_in * prices[t.backbone_id][0]
                      + t.tokens_out * prices[t.backbone_id][1]) / 1e6
                     for t in result.nodes)
    assert result.tok_cost == pytest.approx(recomputed, abs=1e-15)


def test_latency_equals_exhaustive_paths_on_random_dags():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.uniform() < 0.35}
        durations = {f"b{i}": float(rng.uniform(0.5, 5.0)) for i in range(n)}
        nodes = [node(f"r{i}", backbone=f"b{i}") for i in range(n)]
        inst = ex.MasInstance(nodes=nodes, edges=edges)
        backend = FixedBackend(durations)
        result = ex.execute_mas(inst, ex.Query("q", "t", "ans"), backend,
                                np.random.default_rng(0),
                                {f"b{i}": (0, 0) for i in range(n)})
        oracle = path_latency_oracle(edges, [durations[f"b{i}"] for i in range(n)], n)
        assert result.latency == oracle  # exact float equality


def test_simulation_reproducible_bit_for_bit():
    sb = {"b0": backbone("b0", acc=0.6), "b1": backbone("b1", acc=0.8)}
    backend = ex.SimulatorBackend(sb)
    nodes = [node("r0", backbone="b0"), node("r1", backbone="b1")]
    inst = ex.MasInstance(nodes=nodes, edges={(0, 1)})
    prices = {"b0": (1.0, 2.0), "b1": (3.0, 4.0)}
    runs = []
    for _ in range(2):
        result = ex.execute_mas(inst, ex.Query("q", "the question", "ans", 0.5),
                                backend, np.random.default_rng(77), prices)
        runs.append(result)
    assert runs[0] == runs[1]


def test_removing_edge_never_increases_latency():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(3, 7))
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.uniform() < 0.5}
        if not edges:
            continue
        durations = {f"b{i}": float(rng.uniform(0.5, 3.0)) for i in range(n)}
        nodes = [node(f"r{i}", backbone=f"b{i}") for i in range(n)]
        prices = {f"b{i}": (0, 0) for i in range(n)}
        backend = FixedBackend(durations)
        q = ex.Query("q", "t", "ans")
        full = ex.execute_mas(ex.MasInstance(nodes=nodes, edges=edges), q, backend,
                              np.random.default_rng(0), prices).latency
        drop = sorted(edges)[int(rng.integers(len(edges)))]
        less = ex.execute_mas(ex.MasInstance(nodes=nodes, edges=edges - {drop}), q,
                              backend, np.random.default_rng(0), prices).latency
        assert less <= full + 1e-12


def test_backend_failure_carries_partial_accounting():
    class Flaky:
        def __init__(self):
            self.calls = 0

        def run_node(self, backbone_id, node, prompt, query, upstream, rng):
            self.calls += 1
            if self.calls >= 2:
                raise RuntimeError("boom")
            return 10, 5, "text", 1.0, False

    nodes = [node("a", backbone="x"), node("b", backbone="y")]
    inst = ex.MasInstance(nodes=nodes, edges={(0, 1)})
    with pytest.raises(ExecutionError) as err:
        ex.execute_mas(inst, ex.Query("q", "t", "ans"), Flaky(),
                       np.random.default_rng(0), {"x": (1e6, 1e6), "y": (1e6, 1e6)})
    partial = err.value.partial
    assert partial.perf == 0.0
    assert partial.tok_cost == pytest.approx(15.0)


# ---------------------------------------------------------------------------
# synthetic backbone file


def test_synthetic_backbones_round_trip(tmp_path):
    backbones = [backbone("b0", acc=0.5), backbone("b1", acc=0.9, reasoning=True,
                                                   gamma=2.0)]
    path = tmp_path / "synth.json"
    ex.save_synthetic_backbones(backbones, path)
    loaded = ex.load_synthetic_backbones(path)
    assert set(loaded) == {"b0", "b1"}
    assert loaded["b1"].gamma_task == 2.0


def test_synthetic_backbones_validate(tmp_path):
    bad = backbone("b0")
    bad.base_accuracy["easy"] = 1.5
    path = tmp_path / "synth.json"
    ex.save_synthetic_backbones([bad], path)
    with pytest.raises(ExecutionError):
        ex.load_synthetic_backbones(path)


# ---------------------------------------------------------------------------
# remote completion


def _mock_transport(handler):
    return httpx.MockTransport(handler)


def test_remote_passes_usage_through():
    def handler(request):
        body = json.loads(request.content)
        assert body["temperature"] == 0
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "the answer"}}],
            "usage": {"prompt_tokens": 123, "completion_tokens": 45},
        })

    endpoint = ex.RemoteEndpoint(base_url="http://mock")
    t_in, t_out, text, wall, est = ex.remote_complete(
        "model-x", "a prompt", endpoint, transport=_mock_transport(handler),
        sleep=lambda s: None)
    assert (t_in, t_out, text, est) == (123, 45, "the answer", False)
    assert wall >= 0.0


def test_remote_retries_then_succeeds():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] <= 2:
            return httpx.Response(500, json={"error": "overloaded"})
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "ok"}}],
            "usage": {"prompt_tokens": 1, "completion_tokens": 1},
        })

    sleeps = []
    endpoint = ex.RemoteEndpoint(base_url="http://mock")
    out = ex.remote_complete("m", "p", endpoint,
                             transport=_mock_transport(handler),
                             sleep=sleeps.append)
    assert out[2] == "ok"
    assert calls["n"] == 3
    assert sleeps == [0.5, 1.0]  # exponential backoff


def test_remote_timeout_exhausts_retries():
    def handler(request):
        raise httpx.ConnectTimeout("slow")

    endpoint = ex.RemoteEndpoint(base_url="http://mock")
    with pytest.raises(ExecutionError):
        ex.remote_complete("m", "p", endpoint, transport=_mock_transport(handler),
                           sleep=lambda s: None)


def test_remote_sends_bearer_from_env(monkeypatch):
    monkeypatch.setenv("MASBUDGET_API_KEY", "sk-test-123")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("Authorization")
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "ok"}}],
            "usage": {"prompt_tokens": 1, "completion_tokens": 1}})

    endpoint = ex.RemoteEndpoint(base_url="http://mock")
    ex.remote_complete("m", "p", endpoint, transport=_mock_transport(handler),
                       sleep=lambda s: None)
    assert seen["auth"] == "Bearer sk-test-123"


def test_execute_rejects_unknown_backbone():
    inst = ex.MasInstance(nodes=[node(backbone="ghost"), node("b", backbone="ghost")],
                          edges=set())
    with pytest.raises(ExecutionError):
        ex.execute_mas(inst, ex.Query("q", "t", "a"), FixedBackend({"ghost": 1.0}),
                       np.random.default_rng(0), prices={})


def test_remote_missing_usage_estimates_with_flag():
    def handler(request):
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "three words here"}}]})

    endpoint = ex.RemoteEndpoint(base_url="http://mock")
    t_in, t_out, text, _, est = ex.remote_complete(
        "m", "four tokens in prompt", endpoint,
        transport=_mock_transport(handler), sleep=lambda s: None)
    assert est is True
    assert t_in == 4 and t_out == 3
