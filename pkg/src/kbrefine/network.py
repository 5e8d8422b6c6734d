"""Knowledge-based neural networks and the rules-to-network translation.

A :class:`Network` is an immutable DAG of sigmoid units. Every structural edit
returns a new network. Activations follow ``a_j = sigmoid(sum_i w_ji a_i + bias_j)``.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .theory import RuleSet

INPUT, OUTPUT, AND, OR = "input", "output", "and", "or"
KINDS = (INPUT, OUTPUT, AND, OR)
DOC_VERSION = 1


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    bias: float = 0.0
    provenance: str | None = None
    logic: str | None = None  # AND/OR semantics of an OUTPUT node

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetworkError(f"unknown node kind {self.kind!r}")
        if self.kind == OUTPUT and self.logic not in (AND, OR):
            raise NetworkError(f"output {self.id!r} needs logic 'and' or 'or'")

    @property
    def gate(self) -> str | None:
        """AND/OR function of the unit (None for inputs)."""
        if self.kind == OUTPUT:
            return self.logic
        return None if self.kind == INPUT else self.kind


@dataclass(frozen=True)
class TranslationParams:
    omega: float = 4.0
    low_weight_range: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if not 0 <= self.low_weight_range < self.omega / 10:
            raise ValueError("low_weight_range must lie in [0, omega/10)")


@dataclass(frozen=True, eq=False)
class Network:
    nodes: Mapping[str, Node]
    links: Mapping[tuple[str, str], float]
    feature_names: tuple[str, ...]
    output_names: tuple[str, ...]

    # -- structure queries -------------------------------------------------
    @cached_property
    def incoming(self) -> dict[str, list[str]]:
        inc = {nid: [] for nid in self.nodes}
        for s, t in self.links:
            inc[t].append(s)
        return inc

    @cached_property
    def outgoing(self) -> dict[str, list[str]]:
        out = {nid: [] for nid in self.nodes}
        for s, t in self.links:
            out[s].append(t)
        return out

    @property
    def hidden_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.kind in (AND, OR)]

    @property
    def hidden_count(self) -> int:
        return sum(n.kind in (AND, OR) for n in self.nodes.values())

    @property
    def link_count(self) -> int:
        return len(self.links)

    def structure(self):
        """Hashable structural summary (ids, kinds, link set)."""
        return (tuple((n.id, n.kind, n.logic) for n in self.nodes.values()),
                frozenset(self.links), self.feature_names, self.output_names)

    def equals(self, other: "Network") -> bool:
        return (isinstance(other, Network)
                and list(self.nodes.values()) == list(other.nodes.values())
                and dict(self.links) == dict(other.links)
                and self.feature_names == other.feature_names
                and self.output_names == other.output_names)

    def validate(self) -> "Network":
        for nid, node in self.nodes.items():
            if nid != node.id:
                raise NetworkError(f"node key {nid!r} does not match id {node.id!r}")
        for s, t in self.links:
            if s not in self.nodes or t not in self.nodes:
                raise NetworkError(f"dangling link {s!r} -> {t!r}")
            if self.nodes[t].kind == INPUT:
                raise NetworkError(f"link into input node {t!r}")
        ins = [n.id for n in self.nodes.values() if n.kind == INPUT]
        outs = [n.id for n in self.nodes.values() if n.kind == OUTPUT]
        if ins != list(self.feature_names) or outs != list(self.output_names):
            raise NetworkError("feature/output names disagree with node list")
        topological_order(self)
        return self

    # -- functional updates -------------------------------------------------
    def evolve(self, nodes=None, links=None) -> "Network":
        return Network(dict(self.nodes if nodes is None else nodes),
                       dict(self.links if links is None else links),
                       self.feature_names, self.output_names)

    def __repr__(self):
        return (f"Network(inputs={len(self.feature_names)}, hidden={self.hidden_count}, "
                f"outputs={len(self.output_names)}, links={len(self.links)})")


def topological_order(net: Network) -> list[str]:
    """Inputs first (feature order), then a Kahn order breaking ties by node order."""
    index = {nid: i for i, nid in enumerate(net.nodes)}
    indeg = {nid: 0 for nid in net.nodes}
    for _, t in net.links:
        indeg[t] += 1
    order = list(net.feature_names)
    heap = [index[n] for n, d in indeg.items() if d == 0 and net.nodes[n].kind != INPUT]
    ids = list(net.nodes)
    for nid in order:
        for t in net.outgoing[nid]:
            indeg[t] -= 1
            if indeg[t] == 0:
                heap.append(index[t])
    heapq.heapify(heap)
    while heap:
        nid = ids[heapq.heappop(heap)]
        order.append(nid)
        for t in net.outgoing[nid]:
            indeg[t] -= 1
            if indeg[t] == 0:
                heapq.heappush(heap, index[t])
    if len(order) != len(net.nodes):
        raise NetworkError("network contains a cycle")
    return order


def compute_levels(net: Network) -> dict[str, int]:
    """Longest path length from each node to an output; orphans sink below the deepest level."""
    order = topological_order(net)
    level: dict[str, int | None] = {}
    for nid in reversed(order):
        if net.nodes[nid].kind == OUTPUT:
            level[nid] = 0
            continue
        below = [level[t] for t in net.outgoing[nid] if level[t] is not None]
        level[nid] = 1 + max(below) if below else None
    deepest = max((v for v in level.values() if v is not None), default=-1)
    return {nid: (deepest + 1 if level[nid] is None else level[nid]) for nid in net.nodes}


def _descendants_in(out: Mapping[str, list[str]], start: str) -> set[str]:
    seen, stack = {start}, [start]
    while stack:
        for t in out[stack.pop()]:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def _reachable_from_inputs(net: Network) -> set[str]:
    seen = set(net.feature_names)
    stack = list(seen)
    while stack:
        for t in net.outgoing[stack.pop()]:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def ensure_reachable(net: Network, eps: float, rng: np.random.Generator) -> Network:
    """Give every output unreachable from the inputs low-weighted links from all inputs."""
    reach = _reachable_from_inputs(net)
    missing = [o for o in net.output_names if o not in reach]
    if not missing or not net.feature_names:
        return net
    links = dict(net.links)
    for o in missing:
        for f in net.feature_names:
            links[(f, o)] = float(rng.uniform(-eps, eps))
    return net.evolve(links=links)


def add_cross_links(net: Network, eps: float, rng: np.random.Generator) -> Network:
    """Add low-weighted links between unconnected nodes on consecutive levels.

    Every non-input node at level L gets a link from each hidden node at level
    L+1, and every hidden node gets a link from each input. Existing links are
    left alone and no cycle is ever created.
    """
    levels = compute_levels(net)
    hidden_at: dict[int, list[str]] = {}
    for nid in net.hidden_ids:
        hidden_at.setdefault(levels[nid], []).append(nid)
    # Along existing links levels strictly decrease except into orphans, and new
    # links go from level L+1 to L, so only an orphan source can close a cycle.
    inc = net.incoming
    feeds_output = set(net.output_names)
    stack = list(feeds_output)
    while stack:
        for s in inc[stack.pop()]:
            if s not in feeds_output:
                feeds_output.add(s)
                stack.append(s)
    out = {k: list(v) for k, v in net.outgoing.items()}
    links = dict(net.links)
    for j, node in net.nodes.items():
        if node.kind == INPUT:
            continue
        for i in hidden_at.get(levels[j] + 1, ()):
            if (i, j) in links:
                continue
            if i not in feeds_output and i in _descendants_in(out, j):
                continue
            links[(i, j)] = float(rng.uniform(-eps, eps))
            out[i].append(j)
        if node.kind in (AND, OR):
            for f in net.feature_names:
                if (f, j) not in links:
                    links[(f, j)] = float(rng.uniform(-eps, eps))
    return net.evolve(links=links)


def and_bias(omega: float, positives: int) -> float:
    return -omega * (positives - 0.5)


def or_bias(omega: float) -> float:
    return -omega / 2


def _fresh_id(taken, base: str) -> str:
    if base not in taken:
        return base
    for k in range(2, 1 << 30):
        cand = f"{base}_{k}"
        if cand not in taken:
            return cand
    raise AssertionError("unreachable")


def translate(rules: RuleSet, params: TranslationParams = TranslationParams()) -> Network:
    """Compile a rule set into a knowledge-based network.

    Consequents with several rules become an OR node over one AND node per
    rule (``b`` -> ``b1``, ``b2``); single-rule consequents become one AND node.
    Rule links weigh ``+omega`` (``-omega`` when negated). Outputs without any
    rule are OR units with no disjuncts, i.e. false.
    """
    omega = params.omega
    rng = np.random.default_rng(params.seed)
    nodes: dict[str, Node] = {s: Node(s, INPUT) for s in rules.inputs}
    links: dict[tuple[str, str], float] = {}
    taken = set(nodes) | set(rules.consequents) | set(rules.outputs)
    outputs = set(rules.outputs)
    # deepest consequents first so nodes appear roughly bottom-up
    for sym in list(rules.evaluation_order()) + [o for o in rules.outputs if o not in rules.consequents]:
        body = rules.rules_for(sym)
        is_out = sym in outputs
        if len(body) == 1:
            r = body[0]
            nodes[sym] = Node(sym, OUTPUT if is_out else AND, and_bias(omega, r.positives), sym,
                              AND if is_out else None)
            for lit in r.antecedents:
                links[(lit.symbol, sym)] = -omega if lit.negated else omega
            continue
        nodes[sym] = Node(sym, OUTPUT if is_out else OR, or_bias(omega), sym, OR if is_out else None)
        for k, r in enumerate(body, start=1):
            cid = _fresh_id(taken, f"{sym}{k}")
            taken.add(cid)
            nodes[cid] = Node(cid, AND, and_bias(omega, r.positives), sym)
            for lit in r.antecedents:
                links[(lit.symbol, cid)] = -omega if lit.negated else omega
            links[(cid, sym)] = omega
    # inputs first, then hidden, outputs last, keeping the declared output order
    ordered = {s: nodes[s] for s in rules.inputs}
    ordered.update({k: v for k, v in nodes.items() if v.kind in (AND, OR)})
    ordered.update({o: nodes[o] for o in rules.outputs})
    net = Network(ordered, links, tuple(rules.inputs), tuple(rules.outputs)).validate()
    net = add_cross_links(net, params.low_weight_range, rng)
    return ensure_reachable(net, params.low_weight_range, rng)


def delete_node(net: Network, node_id: str, eps: float = 0.05,
                rng: np.random.Generator | None = None) -> Network:
    """Remove a hidden node and its links, repairing output reachability."""
    node = net.nodes.get(node_id)
    if node is None:
        raise NetworkError(f"no node {node_id!r}")
    if node.kind not in (AND, OR):
        raise NetworkError(f"cannot delete {node.kind} node {node_id!r}")
    nodes = {k: v for k, v in net.nodes.items() if k != node_id}
    links = {k: w for k, w in net.links.items() if node_id not in k}
    rng = rng if rng is not None else np.random.default_rng(0)
    return ensure_reachable(net.evolve(nodes, links), eps, rng)


# -------------------------------------------------------------- serialization

def to_document(net: Network) -> dict:
    return {
        "version": DOC_VERSION,
        "features": list(net.feature_names),
        "outputs": list(net.output_names),
        "nodes": [{"id": n.id, "kind": n.kind, "bias": n.bias, "provenance": n.provenance,
                   **({"logic": n.logic} if n.logic else {})} for n in net.nodes.values()],
        "links": [{"source": s, "target": t, "weight": w} for (s, t), w in net.links.items()],
    }


def from_document(doc: Mapping) -> Network:
    try:
        nodes = {}
        for d in doc["nodes"]:
            node = Node(str(d["id"]), d["kind"], float(d.get("bias", 0.0)),
                        d.get("provenance"), d.get("logic"))
            if node.id in nodes:
                raise NetworkError(f"duplicate node id {node.id!r}")
            nodes[node.id] = node
        links = {}
        for d in doc["links"]:
            key = (str(d["source"]), str(d["target"]))
            if key in links:
                raise NetworkError(f"duplicate link {key}")
            links[key] = float(d["weight"])
        net = Network(nodes, links, tuple(doc["features"]), tuple(doc["outputs"]))
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from None
    return net.validate()


def serialize(net: Network) -> str:
    # float repr round-trips exactly, which is what bit-exact checkpoints need
    return json.dumps(to_document(net), indent=1)


def deserialize(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"malformed network document: {exc}") from None
    return from_document(doc)


def empty_network(feature_names: Iterable[str], output_names: Iterable[str],
                  params: TranslationParams = TranslationParams()) -> Network:
    """Network for a theory with no rules: outputs fed only by low-weighted input links."""
    return translate(RuleSet.build((), feature_names, output_names), params)


def with_node(net: Network, node: Node) -> Network:
    nodes = dict(net.nodes)
    nodes[node.id] = node
    return net.evolve(nodes=nodes)


def set_bias(net: Network, node_id: str, bias: float) -> Network:
    return with_node(net, replace(net.nodes[node_id], bias=bias))
