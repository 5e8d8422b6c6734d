"""Error attribution, the four node-addition operators and best-first topology search."""

from __future__ import annotations

import heapq
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .network import (AND, INPUT, OR, OUTPUT, Network, Node, TranslationParams, _fresh_id,
                      and_bias, or_bias, translate)
from .theory import RuleSet
from .train import TrainParams, activations, compiled, predict_batch, score, split_validation, targets
from .train import train as backprop

FN, FP = "fn", "fp"


@dataclass
class NodeErrorStats:
    fn: dict[str, int]
    fp: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.fn.values()) + sum(self.fp.values())

    def is_zero(self) -> bool:
        return self.total == 0


@dataclass(frozen=True, eq=False)
class Candidate:
    network: Network
    fitness: float
    age: int
    lineage: tuple = ((), "kbann")  # (parent ages, operator tag)

    @property
    def hidden_count(self) -> int:
        return self.network.hidden_count

    @property
    def link_count(self) -> int:
        return self.network.link_count

    def queue_key(self):
        """TopGen order: highest fitness, then fewest hidden nodes, then oldest."""
        return (-self.fitness, self.hidden_count, self.age)

    def best_key(self):
        """REGENT order: as ``queue_key`` but fewer links wins before age."""
        return (-self.fitness, self.hidden_count, self.link_count, self.age)


@dataclass(frozen=True)
class TraceRow:
    networks_trained: int
    best_fitness: float
    best_hidden_count: int
    best_age: int
    event: str
    test_error: float | None = None
    wall_seconds: float = field(default=0.0, compare=False)  # informational only

    @property
    def best_val_error(self) -> float:
        return 1.0 - self.best_fitness


@dataclass(frozen=True)
class TopGenConfig:
    budget: int = 50
    children_per_expansion: int = 4
    blame_threshold: float = 1.0
    train_params: TrainParams = field(default_factory=TrainParams)
    translation_params: TranslationParams = field(default_factory=TranslationParams)
    validation_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.children_per_expansion < 1:
            raise ValueError("children_per_expansion must be at least 1")
        if self.blame_threshold < 0:
            raise ValueError("blame_threshold must be nonnegative")


# ----------------------------------------------------------- error attribution

def attribute_errors(net: Network, data: Dataset, tau: float = 1.0) -> NodeErrorStats:
    """Count false-negative / false-positive blame per non-input node.

    Blame starts at wrongly (in)active outputs of misclassified examples and
    follows incoming links with ``|w| >= tau`` whose source is on the wrong side
    of 0.5 in the direction that would explain the error.
    """
    c = compiled(net)
    fn = {nid: 0 for nid, n in net.nodes.items() if n.kind != INPUT}
    fp = dict(fn)
    A = activations(net, data.X)
    wrong = np.flatnonzero(predict_batch(net, data.X) != data.y)
    if len(wrong) == 0:
        return NodeErrorStats(fn, fp)
    T = targets(net, data.y)
    feeders: dict[str, list[tuple[str, float, int]]] = {nid: [] for nid in fn}
    for (s, t), w in net.links.items():
        if net.nodes[s].kind != INPUT and abs(w) >= tau:
            feeders[t].append((s, w, c.pos[s]))
    counters = {FN: fn, FP: fp}
    for r in wrong:
        a = A[r]
        seen = set()
        stack = []
        for k, o in enumerate(net.output_names):
            act = a[c.out_pos[k]]
            if T[r, k] == 1 and act < 0.5:
                stack.append((o, FN))
            elif T[r, k] == 0 and act >= 0.5:
                stack.append((o, FP))
        while stack:
            item = stack.pop()
            if item in seen:
                continue
            seen.add(item)
            nid, kind = item
            counters[kind][nid] += 1
            for s, w, p in feeders[nid]:
                active = a[p] >= 0.5
                if kind == FN:
                    if w > 0 and not active:
                        stack.append((s, FN))
                    elif w < 0 and active:
                        stack.append((s, FP))
                else:
                    if w > 0 and active:
                        stack.append((s, FP))
                    elif w < 0 and not active:
                        stack.append((s, FN))
    return NodeErrorStats(fn, fp)


# ------------------------------------------------------------------ operators

def eligible_nodes(net: Network) -> list[str]:
    return [nid for nid, n in net.nodes.items() if n.kind != INPUT]


def _insert_hidden(nodes: dict[str, Node], new: Sequence[Node]) -> dict[str, Node]:
    """Place new hidden nodes before the outputs so outputs stay last."""
    before = {k: v for k, v in nodes.items() if v.kind != OUTPUT}
    before.update({n.id: n for n in new})
    before.update({k: v for k, v in nodes.items() if v.kind == OUTPUT})
    return before


def _leaf(net: Network, taken, base: str, kind: str, bias: float, eps, rng, links) -> Node:
    nid = _fresh_id(taken, base)
    taken.add(nid)
    for f in net.feature_names:
        links[(f, nid)] = float(rng.uniform(-eps, eps))
    return Node(nid, kind, bias, "added")


def _splice(net: Network, node_id: str, parent_gate: str, leaf_kind: str, leaf_bias: float,
            omega: float, eps: float, rng) -> Network:
    """Put a new ``parent_gate`` unit above ``node_id`` fed by it and by a fresh leaf."""
    node = net.nodes[node_id]
    nodes = dict(net.nodes)
    links = dict(net.links)
    taken = set(nodes)
    parent_bias = or_bias(omega) if parent_gate == OR else and_bias(omega, 2)
    if node.kind == OUTPUT:
        # the output keeps its identity and becomes the new parent; its old
        # function moves into a hidden node that takes over the incoming links
        moved_id = _fresh_id(taken, f"{node_id}_{node.logic}")
        taken.add(moved_id)
        moved = Node(moved_id, node.logic, node.bias, node.provenance)
        for (s, t) in list(links):
            if t == node_id:
                links[(s, moved_id)] = links.pop((s, t))
        leaf = _leaf(net, taken, f"{node_id}_{leaf_kind}", leaf_kind, leaf_bias, eps, rng, links)
        links[(moved_id, node_id)] = omega
        links[(leaf.id, node_id)] = omega
        nodes[node_id] = Node(node_id, OUTPUT, parent_bias, node.provenance, parent_gate)
        new = [moved, leaf]
    else:
        pid = _fresh_id(taken, f"{node_id}_{parent_gate}")
        taken.add(pid)
        for (s, t) in list(links):
            if s == node_id:
                links[(pid, t)] = links.pop((s, t))
        leaf = _leaf(net, taken, f"{node_id}_{leaf_kind}", leaf_kind, leaf_bias, eps, rng, links)
        links[(node_id, pid)] = omega
        links[(leaf.id, pid)] = omega
        new = [Node(pid, parent_gate, parent_bias, "added"), leaf]
    return net.evolve(_insert_hidden(nodes, new), links)


def _attach(net: Network, node_id: str, leaf_kind: str, leaf_bias: float, omega: float,
            eps: float, rng, bias_shift: float = 0.0) -> Network:
    node = net.nodes[node_id]
    nodes = dict(net.nodes)
    links = dict(net.links)
    leaf = _leaf(net, set(nodes), f"{node_id}_{leaf_kind}", leaf_kind, leaf_bias, eps, rng, links)
    links[(leaf.id, node_id)] = omega
    nodes[node_id] = Node(node.id, node.kind, node.bias + bias_shift, node.provenance, node.logic)
    return net.evolve(_insert_hidden(nodes, [leaf]), links)


def _check_target(net: Network, node_id: str):
    node = net.nodes.get(node_id)
    if node is None:
        raise KeyError(f"no node {node_id!r}")
    if node.kind == INPUT:
        raise ValueError(f"cannot add nodes at input {node_id!r}")
    return node


def add_node_fn(net: Network, node_id: str, eps: float = 0.05,
                rng: np.random.Generator | None = None, omega: float = 4.0) -> Network:
    """Broaden a node: a new disjunct below an OR, or a new OR spliced above an AND.

    New disjuncts start inactive (bias ``-omega/2``) so the parent's function
    is initially preserved.
    """
    node = _check_target(net, node_id)
    rng = rng if rng is not None else np.random.default_rng(0)
    if node.gate == OR:
        return _attach(net, node_id, AND, -omega / 2, omega, eps, rng)
    return _splice(net, node_id, OR, AND, -omega / 2, omega, eps, rng)


def add_node_fp(net: Network, node_id: str, eps: float = 0.05,
                rng: np.random.Generator | None = None, omega: float = 4.0) -> Network:
    """Constrain a node: a new conjunct below an AND, or a new AND spliced above an OR.

    New conjuncts start active (bias ``+omega/2``) and the AND's bias drops by
    ``omega`` to account for its extra positive antecedent.
    """
    node = _check_target(net, node_id)
    rng = rng if rng is not None else np.random.default_rng(0)
    if node.gate == AND:
        return _attach(net, node_id, OR, omega / 2, omega, eps, rng, bias_shift=-omega)
    return _splice(net, node_id, AND, OR, omega / 2, omega, eps, rng)


OPERATORS: dict[str, Callable] = {FN: add_node_fn, FP: add_node_fp}


# --------------------------------------------------------------------- search

def train_children(nets: Sequence[Network], data: Dataset, val: Dataset, params: TrainParams,
                   seeds: Sequence[int], jobs: int = 1) -> list[tuple[Network, float]]:
    """Train and score networks; results come back in input order regardless of ``jobs``."""

    def work(pair):
        net, seed = pair
        trained = backprop(net, data, TrainParams(params.learning_rate, params.momentum,
                                                  params.epochs, int(seed), params.loss))
        return trained, score(trained, val).correctness

    if jobs > 1 and len(nets) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, zip(nets, seeds)))
    return [work(p) for p in zip(nets, seeds)]


def draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def plan_children(net: Network, data: Dataset, config: TopGenConfig,
                  rng: np.random.Generator) -> list[tuple[str, str]]:
    """(operator, node) pairs for an expansion: alternate top-FN and top-FP nodes."""
    stats = attribute_errors(net, data, config.blame_threshold)
    order = {nid: i for i, nid in enumerate(net.nodes)}
    by_fn = [n for n in sorted(stats.fn, key=lambda n: (-stats.fn[n], order[n])) if stats.fn[n] > 0]
    by_fp = [n for n in sorted(stats.fp, key=lambda n: (-stats.fp[n], order[n])) if stats.fp[n] > 0]
    plan = []
    i = 0
    while len(plan) < config.children_per_expansion and (i < len(by_fn) or i < len(by_fp)):
        if i < len(by_fn):
            plan.append((FN, by_fn[i]))
        if i < len(by_fp) and len(plan) < config.children_per_expansion:
            plan.append((FP, by_fp[i]))
        i += 1
    if not plan:
        nodes = eligible_nodes(net)
        for _ in range(config.children_per_expansion):
            op = (FN, FP)[int(rng.integers(2))]
            plan.append((op, nodes[int(rng.integers(len(nodes)))]))
    return plan


def expand(candidate: Candidate, train: Dataset, val: Dataset, config: TopGenConfig,
           rng: np.random.Generator, next_age: int = 0, limit: int | None = None,
           jobs: int = 1) -> list[Candidate]:
    """Grow children where blame concentrates, train them from inherited weights, score them."""
    tp = config.translation_params
    plan = plan_children(candidate.network, train, config, rng)
    if limit is not None:
        plan = plan[:limit]
    nets = [OPERATORS[op](candidate.network, nid, tp.low_weight_range, rng, tp.omega)
            for op, nid in plan]
    seeds = [draw_seed(rng) for _ in nets]
    results = train_children(nets, train, val, config.train_params, seeds, jobs)
    return [Candidate(net, fit, next_age + k, ((candidate.age,), f"{op}@{nid}"))
            for k, ((net, fit), (op, nid)) in enumerate(zip(results, plan))]


def search(rules: RuleSet, train: Dataset, val: Dataset | None = None,
           config: TopGenConfig = TopGenConfig(), test: Dataset | None = None,
           jobs: int = 1) -> tuple[Candidate, list[TraceRow]]:
    """Best-first TopGen search; ``test`` is used only to annotate the trace."""
    rng = np.random.default_rng(config.seed)
    if val is None:
        train, val = split_validation(train, config.validation_fraction, draw_seed(rng))
    tp = config.translation_params
    start = translate(rules, TranslationParams(tp.omega, tp.low_weight_range, draw_seed(rng)))
    [(net, fit)] = train_children([start], train, val, config.train_params, [draw_seed(rng)])
    root = Candidate(net, fit, 0)
    trained = 1
    best = root
    report = TestReporter(test)
    trace = [report.row(trained, best, "best")]
    queue = [(root.queue_key(), root)]
    while queue and trained < config.budget:
        _, cand = heapq.heappop(queue)
        children = expand(cand, train, val, config, rng, next_age=trained,
                          limit=config.budget - trained, jobs=jobs)
        for child in children:
            trained += 1
            heapq.heappush(queue, (child.queue_key(), child))
            if child.queue_key() < best.queue_key():
                best = child
                trace.append(report.row(trained, best, "best"))
        trace.append(report.row(trained, best, "expand"))
    return best, trace


class TestReporter:
    """Annotates trace rows with the held-out error of the current best (reporting only)."""

    __test__ = False

    def __init__(self, test: Dataset | None):
        self.test = test
        self._cache: dict[int, float] = {}
        self._start = time.perf_counter()

    def row(self, trained: int, best: Candidate, event: str) -> TraceRow:
        err = None
        if self.test is not None:
            if best.age not in self._cache:
                self._cache[best.age] = 1.0 - score(best.network, self.test).correctness
            err = self._cache[best.age]
        return TraceRow(trained, best.fitness, best.hidden_count, best.age, event, err,
                        time.perf_counter() - self._start)
