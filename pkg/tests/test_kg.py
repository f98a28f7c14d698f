import numpy as np
import pytest
from hypothesis import given, strategies as st

from xmpc.greenhouse import build_hardconstrained_testbed
from xmpc.kg import (INDET, MINUS, PLUS, CausalChain, Edge, GraphError, Node, SignedKnowledgeGraph,
                     backward_trace, dump_graph, evaluate_condition, forward_trace, greenhouse_graph, linear_graph,
                     load_graph, multiply, perturb)

G = greenhouse_graph()


def chain_of(nodes, signs):
    names = sorted(set(nodes))
    g = SignedKnowledgeGraph([Node(n, "state" if n == nodes[-1] else "disturbance") for n in names],
                             [Edge(a, b, s) for a, b, s in zip(nodes, nodes[1:], signs)])
    return g


def test_dangling_endpoint():
    with pytest.raises(GraphError, match="dangling"):
        load_graph({"nodes": [{"name": "T", "role": "state"}], "edges": [{"src": "X", "dst": "T", "sign": "+"}]})


def test_empty_graph():
    g = load_graph({"nodes": [], "edges": []})
    assert g.edges == () and g.nodes == {}
    assert load_graph("") == g


@pytest.mark.parametrize("doc, fragment", [
    ({"nodes": [{"name": "A", "role": "state"}, {"name": "A", "role": "state"}]}, "duplicate node"),
    ({"nodes": [{"name": "A", "role": "plant"}]}, "unknown role"),
    ({"nodes": [{"name": "A", "role": "state"}], "edges": [{"src": "A", "dst": "A", "sign": "+"}]}, "self-loop"),
    ({"nodes": [{"name": "A", "role": "state"}, {"name": "B", "role": "input"}],
      "edges": [{"src": "B", "dst": "A", "sign": "?"}]}, "unknown sign"),
    ({"nodes": [{"name": "A", "role": "state"}, {"name": "B", "role": "input"}],
      "edges": [{"src": "B", "dst": "A", "sign": "conditional"}]}, "condition"),
    ("- not a mapping", "mapping"),
    ("nodes: [", "parse error"),
])
def test_invalid_documents(doc, fragment):
    with pytest.raises(GraphError, match=fragment):
        load_graph(doc)


def test_roundtrip():
    assert load_graph(dump_graph(G)) == G


def test_forward_from_radiation():
    chains = forward_trace(G, {"Q_rad"}, max_depth=1)
    by_path = {c.path: c.composite_sign for c in chains}
    assert by_path[("Q_rad", "T")] == PLUS


def test_forward_empty_sources():
    assert forward_trace(G, set()) == []


def test_two_edge_composite():
    g = chain_of(["a", "b", "c"], [PLUS, MINUS])
    g = SignedKnowledgeGraph([Node("a", "disturbance"), Node("b", "state"), Node("c", "state")], g.edges)
    chains = forward_trace(g, {"a"})
    assert [(c.path, c.composite_sign) for c in chains] == [(("a", "b"), PLUS), (("a", "b", "c"), MINUS)]


def test_backward_origins_of_temperature():
    origins = {(c.source, c.composite_sign) for c in backward_trace(G, "T", max_depth=1)}
    assert {("T_out", PLUS), ("u_Qh", PLUS), ("u_V", MINUS)} <= origins


def test_backward_isolated_node():
    g = SignedKnowledgeGraph([Node("x", "state")], [])
    assert backward_trace(g, "x") == []
    with pytest.raises(GraphError):
        backward_trace(g, "missing")


def test_conditional_edges():
    values = {"H_out": 50.0, "Hm": 80.0}
    edge = next(e for e in G.edges if (e.src, e.dst) == ("u_V", "Hm"))
    assert edge.resolve(values) == MINUS
    assert edge.resolve({"H_out": 95.0, "Hm": 80.0}) == PLUS
    assert edge.resolve({}) == INDET
    chains = [c for c in backward_trace(G, "Hm", max_depth=1) if c.source == "u_V"]
    assert chains[0].composite_sign == INDET


@pytest.mark.parametrize("cond, values, expected", [
    ("T < 24", {"T": 20.0}, True), ("T >= 24", {"T": 20.0}, False), ("a > b", {"a": 1.0}, None),
    ("nonsense", {}, None)])
def test_evaluate_condition(cond, values, expected):
    assert evaluate_condition(cond, values) is expected


def test_perturb_counts():
    g = SignedKnowledgeGraph([Node(f"n{i}", "state") for i in range(21)],
                             [Edge(f"n{i}", f"n{i + 1}", PLUS) for i in range(20)])
    assert perturb(g, "remove", 0.0) == g
    assert perturb(g, "remove", 1.0).edges == ()
    assert len(perturb(g, "remove", 0.2, seed=5).edges) == 16
    flipped = perturb(g, "flip", 0.2, seed=5)
    assert sum(e.sign == MINUS for e in flipped.edges) == 4
    with pytest.raises(ValueError):
        perturb(g, "shuffle", 0.1)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_perturb_is_seeded_subset(p, seed):
    a, b = perturb(G, "remove", p, seed), perturb(G, "remove", p, seed)
    assert a == b
    assert set(a.edges) <= set(G.edges)
    assert len(G.edges) - len(a.edges) == int(np.ceil(p * len(G.edges) - 1e-9))


@given(st.lists(st.sampled_from([PLUS, MINUS]), min_size=1, max_size=6))
def test_sign_product(signs):
    out = PLUS
    for s in signs:
        out = multiply(out, s)
    assert out == (MINUS if signs.count(MINUS) % 2 else PLUS)


def test_chain_concatenation():
    ab = CausalChain(("a", "b"), MINUS)
    bc = CausalChain(("b", "c"), MINUS)
    assert (ab + bc).composite_sign == PLUS
    with pytest.raises(ValueError):
        bc + ab


def test_linear_graph_signs():
    spec = build_hardconstrained_testbed("thermal-zone", 4)
    g = linear_graph(spec, {"T_out": (10.0, 5.0), "Q_int": (0.0, 10.0)})
    signs = {(e.src, e.dst): e.sign for e in g.edges}
    assert signs[("heat", "T_supply")] == PLUS
    assert signs[("cool", "T_supply")] == MINUS
    assert signs[("T_supply", "T_zone")] == PLUS
    assert ("heat", "T_zone") not in signs
    assert g.nodes["T_out"].scale == 5.0
