"""Signed physics knowledge graph with forward and backward path tracing.

Edges carry a sign ``+`` or ``-``, or are ``conditional``: a conditional edge
names a comparison such as ``"H_out < Hm"`` and the sign that applies when it
holds (the opposite sign applies otherwise).  Conditions are evaluated
against a mapping of current variable values; when a value is missing the
edge, and every chain through it, is ``indeterminate``.

Graph documents are YAML::

    nodes:
      - {name: T, role: state}
      - {name: T_out, role: disturbance, nominal: 15.0, scale: 5.0}
    edges:
      - {src: T_out, dst: T, sign: "+"}
      - {src: u_V, dst: Hm, sign: conditional, condition: "H_out < Hm", sign_if_true: "-"}
"""

from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np
import yaml

ROLES = ("state", "input", "disturbance")
PLUS, MINUS, COND, INDET = "+", "-", "conditional", "indeterminate"


class GraphError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str
    sign: str
    condition: Optional[str] = None
    sign_if_true: Optional[str] = None

    def resolve(self, values: Optional[Mapping[str, float]] = None) -> str:
        if self.sign != COND:
            return self.sign
        holds = evaluate_condition(self.condition, values or {})
        if holds is None:
            return INDET
        return self.sign_if_true if holds else _negate(self.sign_if_true)


@dataclass(frozen=True)
class Node:
    name: str
    role: str
    nominal: Optional[float] = None
    scale: Optional[float] = None


@dataclass(frozen=True)
class CausalChain:
    path: tuple
    composite_sign: str
    edge_refs: tuple = field(default=(), compare=False)

    @property
    def source(self) -> str:
        return self.path[0]

    @property
    def target(self) -> str:
        return self.path[-1]

    def __add__(self, other: "CausalChain") -> "CausalChain":
        if self.path[-1] != other.path[0]:
            raise ValueError("chains do not meet")
        return CausalChain(self.path + other.path[1:], multiply(self.composite_sign, other.composite_sign),
                           self.edge_refs + other.edge_refs)


def _negate(sign):
    return {PLUS: MINUS, MINUS: PLUS}.get(sign, sign)


def multiply(a: str, b: str) -> str:
    if INDET in (a, b) or COND in (a, b):
        return INDET
    return PLUS if a == b else MINUS


_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}
_COND_RE = re.compile(r"^\s*([A-Za-z_][\w]*|[-+]?\d+(?:\.\d*)?)\s*(<=|>=|<|>)\s*([A-Za-z_][\w]*|[-+]?\d+(?:\.\d*)?)\s*$")


def evaluate_condition(condition: str, values: Mapping[str, float]) -> Optional[bool]:
    """Evaluate ``"lhs op rhs"``; ``None`` when an operand is unknown."""
    m = _COND_RE.match(condition or "")
    if not m:
        return None

    def operand(tok):
        try:
            return float(tok)
        except ValueError:
            v = values.get(tok)
            return None if v is None else float(v)

    lhs, rhs = operand(m.group(1)), operand(m.group(3))
    if lhs is None or rhs is None:
        return None
    return bool(_OPS[m.group(2)](lhs, rhs))


class SignedKnowledgeGraph:
    """Immutable signed digraph; edges are stored in canonical sorted order."""

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]):
        nodes = list(nodes)
        names = [n.name for n in nodes]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise GraphError(f"duplicate node: {', '.join(dupes)}")
        self._nodes = {n.name: n for n in nodes}
        for n in nodes:
            if n.role not in ROLES:
                raise GraphError(f"node {n.name!r}: unknown role {n.role!r}")
        seen = set()
        for e in edges:
            for end in (e.src, e.dst):
                if end not in self._nodes:
                    raise GraphError(f"dangling endpoint {end!r} in edge {e.src}->{e.dst}")
            if e.src == e.dst:
                raise GraphError(f"self-loop on {e.src!r}")
            if e.sign not in (PLUS, MINUS, COND):
                raise GraphError(f"edge {e.src}->{e.dst}: unknown sign {e.sign!r}")
            if e.sign == COND and (not e.condition or e.sign_if_true not in (PLUS, MINUS)):
                raise GraphError(f"conditional edge {e.src}->{e.dst} needs a condition and sign_if_true")
            if (e.src, e.dst) in seen:
                raise GraphError(f"duplicate edge {e.src}->{e.dst}")
            seen.add((e.src, e.dst))
        self._edges = tuple(sorted(edges, key=lambda e: (e.src, e.dst)))
        self._out = {n: [] for n in self._nodes}
        self._in = {n: [] for n in self._nodes}
        for e in self._edges:
            self._out[e.src].append(e)
            self._in[e.dst].append(e)

    @property
    def nodes(self) -> dict:
        return dict(self._nodes)

    @property
    def edges(self) -> tuple:
        return self._edges

    def role(self, name: str) -> str:
        return self._nodes[name].role

    def names(self, role: str) -> list:
        return sorted(n for n, v in self._nodes.items() if v.role == role)

    def out_edges(self, name):
        return tuple(self._out[name])

    def in_edges(self, name):
        return tuple(self._in[name])

    def __eq__(self, other):
        return (isinstance(other, SignedKnowledgeGraph) and self._nodes == other._nodes
                and self._edges == other._edges)

    def __repr__(self):
        return f"SignedKnowledgeGraph({len(self._nodes)} nodes, {len(self._edges)} edges)"


# ----------------------------------------------------------------------------
# document I/O


def load_graph(document) -> SignedKnowledgeGraph:
    """Build a graph from YAML text, a parsed mapping, or a path-like object."""
    if hasattr(document, "read_text"):
        document = document.read_text(encoding="utf-8")
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise GraphError(f"parse error: {exc}") from None
    if document is None:
        document = {}
    if not isinstance(document, Mapping):
        raise GraphError("parse error: graph document must be a mapping")
    try:
        nodes = [Node(str(n["name"]), str(n["role"]),
                      None if n.get("nominal") is None else float(n["nominal"]),
                      None if n.get("scale") is None else float(n["scale"]))
                 for n in document.get("nodes") or []]
        edges = [Edge(str(e["src"]), str(e["dst"]), str(e["sign"]), e.get("condition"), e.get("sign_if_true"))
                 for e in document.get("edges") or []]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"parse error: missing field {exc}") from None
    return SignedKnowledgeGraph(nodes, edges)


def graph_to_dict(g: SignedKnowledgeGraph) -> dict:
    nodes = []
    for name in sorted(g.nodes):
        n = g.nodes[name]
        item = {"name": n.name, "role": n.role}
        if n.nominal is not None:
            item["nominal"] = n.nominal
        if n.scale is not None:
            item["scale"] = n.scale
        nodes.append(item)
    edges = []
    for e in g.edges:
        item = {"src": e.src, "dst": e.dst, "sign": e.sign}
        if e.condition is not None:
            item["condition"] = e.condition
        if e.sign_if_true is not None:
            item["sign_if_true"] = e.sign_if_true
        edges.append(item)
    return {"nodes": nodes, "edges": edges}


def dump_graph(g: SignedKnowledgeGraph) -> str:
    return yaml.safe_dump(graph_to_dict(g), sort_keys=False, default_flow_style=None)


# ----------------------------------------------------------------------------
# traversal

DEFAULT_DEPTH = 4


def _chain(edges, values):
    sign = PLUS
    for e in edges:
        sign = multiply(sign, e.resolve(values))
    path = (edges[0].src,) + tuple(e.dst for e in edges)
    return CausalChain(path, sign, tuple(edges))


def forward_trace(g: SignedKnowledgeGraph, sources, max_depth: int = DEFAULT_DEPTH,
                  values: Optional[Mapping[str, float]] = None) -> list:
    """Simple paths from ``sources`` to any state node, at most ``max_depth`` edges."""
    sources = sorted(set(sources))
    missing = [s for s in sources if s not in g.nodes]
    if missing:
        raise GraphError(f"unknown source nodes: {missing}")
    chains = []

    def walk(node, visited, edges):
        if len(edges) >= max_depth:
            return
        for e in g.out_edges(node):
            if e.dst in visited:
                continue
            step = edges + [e]
            if g.role(e.dst) == "state":
                chains.append(_chain(step, values))
            walk(e.dst, visited | {e.dst}, step)

    for s in sources:
        walk(s, {s}, [])
    return sorted(chains, key=lambda c: c.path)


def backward_trace(g: SignedKnowledgeGraph, target: str, max_depth: int = DEFAULT_DEPTH,
                   values: Optional[Mapping[str, float]] = None) -> list:
    """Simple paths ending at ``target`` that start at an input or disturbance."""
    if target not in g.nodes:
        raise GraphError(f"unknown target {target!r}")
    chains = []

    def walk(node, visited, edges):
        if len(edges) >= max_depth:
            return
        for e in g.in_edges(node):
            if e.src in visited:
                continue
            step = [e] + edges
            if g.role(e.src) in ("input", "disturbance"):
                chains.append(_chain(step, values))
            walk(e.src, visited | {e.src}, step)

    walk(target, {target}, [])
    return sorted(chains, key=lambda c: c.path)


# ----------------------------------------------------------------------------
# robustness perturbations


def perturb(g: SignedKnowledgeGraph, op: str, p: float, seed: int = 0) -> SignedKnowledgeGraph:
    """Remove, or flip the sign of, ``ceil(p * |E|)`` uniformly chosen edges.

    Flips only touch signed (non-conditional) edges and the count is capped
    at how many exist.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    edges = list(g.edges)
    count = math.ceil(p * len(edges) - 1e-9)
    rng = np.random.default_rng(seed)
    if op == "remove":
        drop = set(rng.choice(len(edges), size=count, replace=False).tolist()) if count else set()
        kept = [e for i, e in enumerate(edges) if i not in drop]
        return SignedKnowledgeGraph(g.nodes.values(), kept)
    if op == "flip":
        signed = [i for i, e in enumerate(edges) if e.sign != COND]
        count = min(count, len(signed))
        flip = set(rng.choice(signed, size=count, replace=False).tolist()) if count else set()
        out = [Edge(e.src, e.dst, _negate(e.sign)) if i in flip else e for i, e in enumerate(edges)]
        return SignedKnowledgeGraph(g.nodes.values(), out)
    raise ValueError(f"unknown perturbation {op!r}; expected 'remove' or 'flip'")


def linear_graph(spec, disturbance_stats: Mapping[str, tuple], tol: float = 1e-9) -> SignedKnowledgeGraph:
    """Signed graph read off the one-step Jacobian of a model with linear dynamics.

    An edge ``a -> b`` is added for every nonzero entry of d x_b(k+1) / d a,
    with ``a`` a state, input or disturbance and ``b`` a different state.
    ``disturbance_stats`` maps disturbance names to ``(nominal, scale)``.
    """
    n, m, q = spec.state_dim, spec.input_dim, spec.disturbance_dim
    x, u, d = np.zeros(n), np.zeros(m), np.zeros(q)
    base = np.asarray(spec.dynamics(x, u, d), dtype=float)
    nodes = [Node(s, "state") for s in spec.state_names]
    nodes += [Node(s, "input") for s in spec.input_names]
    for name in spec.disturbance_names:
        nominal, scale = disturbance_stats.get(name, (None, None))
        nodes.append(Node(name, "disturbance", nominal, scale))
    edges = []
    for names, size, which in ((spec.state_names, n, 0), (spec.input_names, m, 1), (spec.disturbance_names, q, 2)):
        for j in range(size):
            args = [x.copy(), u.copy(), d.copy()]
            args[which][j] = 1.0
            col = np.asarray(spec.dynamics(*args), dtype=float) - base
            for i, dst in enumerate(spec.state_names):
                if dst != names[j] and abs(col[i]) > tol:
                    edges.append(Edge(names[j], dst, PLUS if col[i] > 0 else MINUS))
    return SignedKnowledgeGraph(nodes, edges)


# ----------------------------------------------------------------------------
# reference greenhouse graph

GREENHOUSE_KG = """\
nodes:
  - {name: T, role: state}
  - {name: C, role: state}
  - {name: Hm, role: state}
  - {name: B, role: state}
  - {name: u_V, role: input}
  - {name: u_C, role: input}
  - {name: u_Qh, role: input}
  - {name: u_Qc, role: input}
  - {name: T_out, role: disturbance, nominal: 15.0, scale: 5.0}
  - {name: C_out, role: disturbance, nominal: 410.0, scale: 50.0}
  - {name: H_out, role: disturbance, nominal: 70.0, scale: 10.0}
  - {name: Q_rad, role: disturbance, nominal: 200.0, scale: 200.0}
edges:
  - {src: Q_rad, dst: T, sign: "+"}
  - {src: T_out, dst: T, sign: "+"}
  - {src: u_Qh, dst: T, sign: "+"}
  - {src: u_Qc, dst: T, sign: "-"}
  - {src: u_V, dst: T, sign: "-"}
  - {src: u_C, dst: C, sign: "+"}
  - {src: C_out, dst: C, sign: "+"}
  - {src: u_V, dst: C, sign: conditional, condition: "C_out < C", sign_if_true: "-"}
  - {src: Q_rad, dst: C, sign: "-"}
  - {src: B, dst: C, sign: "-"}
  - {src: H_out, dst: Hm, sign: "+"}
  - {src: u_V, dst: Hm, sign: conditional, condition: "H_out < Hm", sign_if_true: "-"}
  - {src: Q_rad, dst: Hm, sign: "+"}
  - {src: u_Qc, dst: Hm, sign: "-"}
  - {src: Q_rad, dst: B, sign: "+"}
  - {src: C, dst: B, sign: "+"}
  - {src: T, dst: B, sign: conditional, condition: "T < 24", sign_if_true: "+"}
"""


def greenhouse_graph() -> SignedKnowledgeGraph:
    return load_graph(GREENHOUSE_KG)
