"""Genetic search over knowledge-based network topologies.

The population is seeded from the domain theory, then grown by rule-preserving
crossover and blame-directed mutation. Every trained network counts against the
budget; the best network seen so far (by validation correctness, then size) is
reported as the search proceeds and the whole state can be checkpointed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .network import (INPUT, OUTPUT, AND, OR, Network, Node, TranslationParams, _fresh_id,
                      add_cross_links, delete_node, empty_network, ensure_reachable, from_document, to_document,
                      translate)
from .theory import RuleSet, format_rules
from .topgen import (FN, FP, OPERATORS, Candidate, TestReporter, TraceRow, attribute_errors,
                     draw_seed, eligible_nodes, train_children)
from .train import TrainParams, mean_activations, split_validation

RULE_PRESERVING, RANDOM_NODES = "rule_preserving", "random_nodes"
CHECKPOINT_VERSION = 1


class RegentError(ValueError):
    pass


@dataclass(frozen=True)
class RegentConfig:
    population_size: int = 20
    mutation_fraction: float = 0.5
    knn_seed_fraction: float = 1.0
    budget: int = 500
    perturbations_per_member: tuple[int, int] = (1, 3)
    deletion_prob: float = 0.25
    crossover_mode: str = RULE_PRESERVING
    train_params: TrainParams = field(default_factory=TrainParams)
    translation_params: TranslationParams = field(default_factory=TranslationParams)
    blame_threshold: float = 1.0
    validation_fraction: float = 0.10
    checkpoint_every: int = 10
    max_random_hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("mutation_fraction", "knn_seed_fraction", "deletion_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.population_size < 1:
            raise ValueError("population_size must be at least 1")
        lo, hi = self.perturbations_per_member
        if lo < 0 or hi < lo:
            raise ValueError("perturbations_per_member must be a nonempty range")
        if self.crossover_mode not in (RULE_PRESERVING, RANDOM_NODES):
            raise ValueError(f"unknown crossover_mode {self.crossover_mode!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegentConfig":
        d = dict(d)
        d["train_params"] = TrainParams(**d.get("train_params", {}))
        d["translation_params"] = TranslationParams(**d.get("translation_params", {}))
        if "perturbations_per_member" in d:
            d["perturbations_per_member"] = tuple(d["perturbations_per_member"])
        return cls(**d)


# ------------------------------------------------------------------ population

class Population:
    def __init__(self, capacity: int = 20, members: Sequence[Candidate] = ()):
        self.capacity = capacity
        self.members: list[Candidate] = list(members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def weakest(self) -> Candidate:
        """Lowest fitness; the oldest member among ties."""
        return min(self.members, key=lambda c: (c.fitness, c.age))

    def insert(self, cand: Candidate) -> bool:
        """Admit ``cand`` if there is room or it is at least as fit as the weakest member."""
        if len(self.members) < self.capacity:
            self.members.append(cand)
            return True
        worst = self.weakest()
        if cand.fitness >= worst.fitness:
            self.members.remove(worst)
            self.members.append(cand)
            return True
        return False


def insert(pop: Population, cand: Candidate) -> Population:
    pop.insert(cand)
    return pop


def select_parent(pop: Population, rng: np.random.Generator) -> Candidate:
    """Roulette-wheel selection on fitness; uniform when every fitness is zero."""
    if not pop.members:
        raise RegentError("cannot select from an empty population")
    fit = np.array([c.fitness for c in pop.members])
    total = fit.sum()
    if total <= 0:
        return pop.members[int(rng.integers(len(fit)))]
    u = rng.random() * total
    idx = int(np.searchsorted(np.cumsum(fit), u, side="right"))
    return pop.members[min(idx, len(fit) - 1)]


# -------------------------------------------------------------- initialisation

def perturb(net: Network, config: RegentConfig, rng: np.random.Generator) -> Network:
    tp = config.translation_params
    lo, hi = config.perturbations_per_member
    for _ in range(int(rng.integers(lo, hi + 1))):
        hidden = net.hidden_ids
        if hidden and rng.random() < config.deletion_prob:
            net = delete_node(net, hidden[int(rng.integers(len(hidden)))], tp.low_weight_range, rng)
        else:
            net = _random_addition(net, config, rng)
    return net


def _random_addition(net: Network, config: RegentConfig, rng: np.random.Generator) -> Network:
    tp = config.translation_params
    op = (FN, FP)[int(rng.integers(2))]
    nodes = eligible_nodes(net)
    return OPERATORS[op](net, nodes[int(rng.integers(len(nodes)))], tp.low_weight_range, rng,
                         tp.omega)


def generate_random_network(feature_names: Sequence[str], output_names: Sequence[str],
                            config: RegentConfig, rng: np.random.Generator,
                            max_hidden: int | None = None) -> Network:
    """A network grown from an empty theory by random node additions."""
    if not output_names:
        raise RegentError("need at least one output")
    tp = config.translation_params
    net = empty_network(feature_names, output_names,
                        TranslationParams(tp.omega, tp.low_weight_range, draw_seed(rng)))
    h_max = max(1, max_hidden or config.max_random_hidden)
    target = int(rng.integers(1, h_max + 1))
    while net.hidden_count < target:
        net = _random_addition(net, config, rng)
    return add_cross_links(net, tp.low_weight_range, rng)


def _translation(config: RegentConfig, rng) -> TranslationParams:
    tp = config.translation_params
    return TranslationParams(tp.omega, tp.low_weight_range, draw_seed(rng))


def init_population(rules: RuleSet, train: Dataset, val: Dataset, config: RegentConfig,
                    rng: np.random.Generator, jobs: int = 1) -> list[Candidate]:
    """Trained initial members: KBANN, perturbed KBANN networks, then random networks."""
    n = config.population_size
    if n < 1:
        raise RegentError("population_size must be at least 1")
    base = translate(rules, _translation(config, rng))
    n_knn = 0 if config.knn_seed_fraction <= 0 else 1 + int(round(config.knn_seed_fraction * (n - 1)))
    h_max = base.hidden_count or config.max_random_hidden
    nets, tags = [], []
    for k in range(n):
        if k == 0 and n_knn:
            nets.append(base)
            tags.append("kbann")
        elif k < n_knn:
            nets.append(perturb(base, config, rng))
            tags.append("perturb")
        else:
            nets.append(generate_random_network(base.feature_names, base.output_names, config,
                                                rng, h_max))
            tags.append("random")
    seeds = [draw_seed(rng) for _ in nets]
    results = train_children(nets, train, val, config.train_params, seeds, jobs)
    return [Candidate(net, fit, k, ((), tag)) for k, ((net, fit), tag) in enumerate(zip(results, tags))]


# ------------------------------------------------------------------- crossover

@dataclass(frozen=True)
class NodePartition:
    set_a: frozenset
    set_b: frozenset


def eq1_probability(parent: Network, node_id: str, partition: NodePartition) -> float:
    """Probability of putting ``node_id`` in set A: share of its outgoing |weight| into A."""
    if node_id in partition.set_a or node_id in partition.set_b:
        raise RegentError(f"node {node_id!r} is already assigned")
    into_a = into_b = 0.0
    for t in parent.outgoing[node_id]:
        w = abs(parent.links[(node_id, t)])
        if t in partition.set_a:
            into_a += w
        elif t in partition.set_b:
            into_b += w
    total = into_a + into_b
    return 0.5 if total == 0 else into_a / total


def divide_nodes(parent: Network, mode: str = RULE_PRESERVING,
                 rng: np.random.Generator | None = None) -> NodePartition:
    """Split hidden nodes into sets A and B one level at a time, from the outputs down."""
    rng = rng if rng is not None else np.random.default_rng()
    a: set[str] = set()
    b: set[str] = set()
    pending = list(parent.hidden_ids)
    while pending:
        done = a | b
        ready = [h for h in pending
                 if all(t in done or parent.nodes[t].kind == OUTPUT for t in parent.outgoing[h])]
        if not ready:  # pragma: no cover - impossible in an acyclic network
            raise RegentError("could not order hidden nodes for partitioning")
        coin = mode == RANDOM_NODES or not a or not b
        part = NodePartition(frozenset(a), frozenset(b))
        for h in ready:
            p = 0.5 if coin else eq1_probability(parent, h, part)
            (a if rng.random() < p else b).add(h)
        ready_set = set(ready)
        pending = [h for h in pending if h not in ready_set]
    return NodePartition(frozenset(a), frozenset(b))


def adjust_biases(child: Network, removed_links: Sequence[tuple[str, float, float]]) -> Network:
    """Compensate severed incoming links so AND/OR nodes keep their original function.

    For a lost positive link into an AND node, or a lost negative link into an
    OR node, the bias moves by ``w * mean_activation`` of the lost source.
    """
    shift: dict[str, float] = {}
    for target, w, mean_act in removed_links:
        node = child.nodes.get(target)
        if node is None:
            raise RegentError(f"bias repair target {target!r} not in child")
        if (node.gate == AND and w > 0) or (node.gate == OR and w < 0):
            shift[target] = shift.get(target, 0.0) + w * mean_act
    if not shift:
        return child
    nodes = {k: (dataclasses.replace(v, bias=v.bias + shift[k]) if k in shift else v)
             for k, v in child.nodes.items()}
    return child.evolve(nodes=nodes)


@dataclass
class Offspring:
    """One child of a crossover plus bookkeeping used by the invariant checks."""

    network: Network
    origin: dict[str, tuple[int, str]]  # child hidden id -> (parent index, parent id)
    removed: list[tuple[str, float, float]]


def recombine(parents: Sequence[Network], partitions: Sequence[NodePartition],
              means: Sequence[Mapping[str, float]], fitter: int, eps: float,
              rng: np.random.Generator) -> tuple[Offspring, Offspring]:
    """Build the A-child and the B-child from two partitioned parents.

    ``fitter`` (0 or 1) names the parent whose output nodes and direct
    input->output weights win when both parents supply them.
    """
    p1, p2 = parents
    if p1.feature_names != p2.feature_names or p1.output_names != p2.output_names:
        raise RegentError("parents have different feature or output spaces")
    kids = []
    for side in ("set_a", "set_b"):
        keep = [getattr(partitions[0], side), getattr(partitions[1], side)]
        nodes: dict[str, Node] = {f: p1.nodes[f] for f in p1.feature_names}
        rename: list[dict[str, str]] = [{}, {}]
        origin: dict[str, tuple[int, str]] = {}
        for k, parent in enumerate(parents):
            for nid in parent.hidden_ids:
                if nid not in keep[k]:
                    continue
                new_id = _fresh_id(set(nodes) | set(p1.output_names), nid)
                rename[k][nid] = new_id
                origin[new_id] = (k, nid)
                nodes[new_id] = dataclasses.replace(parent.nodes[nid], id=new_id)
        out_parent = parents[fitter]
        for o in out_parent.output_names:
            nodes[o] = out_parent.nodes[o]

        links: dict[tuple[str, str], float] = {}
        removed: list[tuple[str, float, float]] = []
        for k in (fitter, 1 - fitter):
            parent = parents[k]

            def mapped(nid):
                node = parent.nodes[nid]
                if node.kind in (INPUT, OUTPUT):
                    return nid
                return rename[k].get(nid)

            for (s, t), w in parent.links.items():
                ms, mt = mapped(s), mapped(t)
                if mt is not None and ms is None:
                    if parent.nodes[t].kind != OUTPUT or k == fitter:
                        removed.append((mt, w, means[k][s]))
                    continue
                if ms is None or mt is None or (ms, mt) in links:
                    continue
                links[(ms, mt)] = w
        child = Network(nodes, links, p1.feature_names, p1.output_names).validate()
        child = adjust_biases(child, removed)
        child = add_cross_links(child, eps, rng)
        child = ensure_reachable(child, eps, rng)
        kids.append(Offspring(child, origin, removed))
    return kids[0], kids[1]


def crossover(p1: Candidate, p2: Candidate, train: Dataset, config: RegentConfig,
              rng: np.random.Generator) -> tuple[Network, Network]:
    parts = [divide_nodes(p.network, config.crossover_mode, rng) for p in (p1, p2)]
    means = [mean_activations(p.network, train) for p in (p1, p2)]
    fitter = 1 if p2.fitness > p1.fitness else 0
    a, b = recombine([p1.network, p2.network], parts, means, fitter,
                     config.translation_params.low_weight_range, rng)
    return a.network, b.network


# -------------------------------------------------------------------- mutation

def mutate(parent: Candidate, train: Dataset, config: RegentConfig,
           rng: np.random.Generator) -> Network:
    """Add nodes where blame is high: node chosen with probability proportional to fn + fp."""
    net = parent.network
    tp = config.translation_params
    stats = attribute_errors(net, train, config.blame_threshold)
    nodes = eligible_nodes(net)
    weights = np.array([stats.fn[n] + stats.fp[n] for n in nodes], dtype=np.float64)
    if weights.sum() == 0:
        return _random_addition(net, config, rng)
    idx = int(np.searchsorted(np.cumsum(weights), rng.random() * weights.sum(), side="right"))
    nid = nodes[min(idx, len(nodes) - 1)]
    op = FN if stats.fn[nid] >= stats.fp[nid] else FP
    return OPERATORS[op](net, nid, tp.low_weight_range, rng, tp.omega)


# ------------------------------------------------------------------ checkpoints

def _candidate_doc(c: Candidate) -> dict:
    return {"network": to_document(c.network), "fitness": c.fitness, "age": c.age,
            "lineage": [list(c.lineage[0]), c.lineage[1]]}


def _candidate_from(d: Mapping) -> Candidate:
    return Candidate(from_document(d["network"]), float(d["fitness"]), int(d["age"]),
                     (tuple(d["lineage"][0]), d["lineage"][1]))


def config_digest(config: RegentConfig, rules: RuleSet, data: Dataset,
                  val: Dataset | None = None) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    h.update(format_rules(rules).encode())
    for d in (data, val):
        if d is not None:
            h.update(np.ascontiguousarray(d.X).tobytes())
            h.update(np.ascontiguousarray(d.y).tobytes())
    return h.hexdigest()


def write_checkpoint(path, checkpoint: Mapping) -> None:
    """Write-temp-then-rename, so a crash leaves either the old or the new file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(checkpoint, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise RegentError(f"unsupported checkpoint version {doc.get('version')!r}")
    return doc


# ------------------------------------------------------------------ main loop

@dataclass(frozen=True)
class LineageEvent:
    age: int
    operator: str
    parents: tuple[int, ...]
    hidden_count: int
    parent_hidden: tuple[int, ...]
    admitted: bool


class RegentSearch:
    """Resumable REGENT state machine; :func:`run` drives it to the budget."""

    def __init__(self, rules: RuleSet, data: Dataset, config: RegentConfig = RegentConfig(),
                 test: Dataset | None = None, jobs: int = 1, val: Dataset | None = None,
                 metadata: Mapping | None = None):
        if config.budget < config.population_size:
            raise RegentError(f"budget {config.budget} is smaller than the population "
                              f"({config.population_size})")
        self.rules, self.data, self.config, self.jobs = rules, data, config, jobs
        self.metadata = dict(metadata or {})
        self.digest = config_digest(config, rules, data, val)
        self.rng = np.random.default_rng(config.seed)
        if val is None:
            self.train, self.val = split_validation(data, config.validation_fraction,
                                                    draw_seed(self.rng))
        else:
            self.train, self.val = data, val
        self.reporter = TestReporter(test)
        self.population = Population(config.population_size)
        self.trained = 0
        self.cycle = 0
        self.best: Candidate | None = None
        self.trace: list[TraceRow] = []
        self.lineage: list[LineageEvent] = []

    # -- bookkeeping ------------------------------------------------------
    def _admit(self, cand: Candidate, parents: Sequence[Candidate] = ()):
        self.trained += 1
        admitted = self.population.insert(cand)
        self.lineage.append(LineageEvent(cand.age, cand.lineage[1], cand.lineage[0],
                                         cand.hidden_count, tuple(p.hidden_count for p in parents),
                                         admitted))
        if self.best is None or cand.best_key() < self.best.best_key():
            self.best = cand
            self.trace.append(self.reporter.row(self.trained, cand, "best"))

    def initialize(self):
        members = init_population(self.rules, self.train, self.val, self.config, self.rng, self.jobs)
        for cand in members:
            self._admit(cand)
        self.trace.append(self.reporter.row(self.trained, self.best, "init"))

    @property
    def done(self) -> bool:
        return self.trained >= self.config.budget

    def step(self):
        """One generation: a mutation (one child) or a crossover (two children)."""
        cfg, rng = self.config, self.rng
        pop = self.population
        if rng.random() < cfg.mutation_fraction:
            parent = select_parent(pop, rng)
            nets = [mutate(parent, self.train, cfg, rng)]
            parents, tag = [parent], "mutation"
        else:
            p1 = select_parent(pop, rng)
            p2 = select_parent(pop, rng)
            if p2 is p1:
                p2 = select_parent(pop, rng)
            nets = list(crossover(p1, p2, self.train, cfg, rng))
            parents, tag = [p1, p2], "crossover"
        nets = nets[: cfg.budget - self.trained]
        seeds = [draw_seed(rng) for _ in nets]
        results = train_children(nets, self.train, self.val, cfg.train_params, seeds, self.jobs)
        ages = tuple(p.age for p in parents)
        for net, fit in results:
            self._admit(Candidate(net, fit, self.trained, (ages, tag)), parents)
        self.cycle += 1
        self.trace.append(self.reporter.row(self.trained, self.best, "cycle"))

    # -- persistence ------------------------------------------------------
    def checkpoint(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config_digest": self.digest,
            "config": self.config.to_dict(),
            "rng_state": self.rng.bit_generator.state,
            "networks_trained": self.trained,
            "cycle": self.cycle,
            "population": [_candidate_doc(c) for c in self.population],
            "best": _candidate_doc(self.best) if self.best else None,
            "trace": [dataclasses.asdict(r) for r in self.trace],
            "lineage": [dataclasses.asdict(e) for e in self.lineage],
            "metadata": self.metadata,
        }

    def restore(self, doc: Mapping):
        if doc.get("config_digest") != self.digest:
            raise RegentError("checkpoint does not match this configuration, theory and data")
        self.rng.bit_generator.state = doc["rng_state"]
        self.trained = int(doc["networks_trained"])
        self.cycle = int(doc["cycle"])
        self.population = Population(self.config.population_size,
                                     [_candidate_from(d) for d in doc["population"]])
        self.best = _candidate_from(doc["best"]) if doc["best"] else None
        self.trace = [TraceRow(**r) for r in doc["trace"]]
        self.lineage = [LineageEvent(**{**e, "parents": tuple(e["parents"]),
                                        "parent_hidden": tuple(e["parent_hidden"])})
                        for e in doc["lineage"]]


def run(rules: RuleSet, data: Dataset, config: RegentConfig = RegentConfig(),
        resume: Mapping | None = None, test: Dataset | None = None, jobs: int = 1,
        checkpoint_path=None, on_checkpoint: Callable[[dict], None] | None = None,
        max_cycles: int | None = None, val: Dataset | None = None,
        metadata: Mapping | None = None) -> tuple[Candidate, list[TraceRow], dict]:
    """Run REGENT until ``config.budget`` networks have been trained.

    Without ``val`` a stratified ``config.validation_fraction`` of ``data`` is
    held out for fitness; with it, all of ``data`` is used for training.

    Checkpoints are emitted every ``config.checkpoint_every`` cycles (to
    ``checkpoint_path`` and/or ``on_checkpoint``) and once at the end.
    ``max_cycles`` suspends the run early, as if interrupted. ``metadata`` is
    stored verbatim in every checkpoint.
    """
    search = RegentSearch(rules, data, config, test, jobs, val, metadata)
    if resume is not None:
        search.restore(resume)
    else:
        search.initialize()

    def emit():
        doc = search.checkpoint()
        if checkpoint_path is not None:
            write_checkpoint(checkpoint_path, doc)
        if on_checkpoint is not None:
            on_checkpoint(doc)
        return doc

    cycles = 0
    while not search.done and (max_cycles is None or cycles < max_cycles):
        search.step()
        cycles += 1
        if config.checkpoint_every and search.cycle % config.checkpoint_every == 0:
            emit()
    final = emit()
    return search.best, search.trace, final
