"""Desk-scale studies shared by the scripts and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Dataset, from_theory, random_binary
from .network import TranslationParams, translate
from .regent import RegentConfig, run as regent_run
from .theory import RuleSet, SynthesisParams, parse_rules, synthesize_theory, truth_table
from .topgen import TopGenConfig, search
from .train import TrainParams, score, train

# a small theory with a two-rule consequent, a negated antecedent and a shared output
EXAMPLE_THEORY = """\
a :- b, c.
b :- not d, e, f.
b :- d, not e.
c :- g.
"""
MISSING_RULE = "b :- not d, e, g.\n"


def missing_rule_task() -> tuple[RuleSet, RuleSet, Dataset]:
    """(theory, target, all 16 examples labelled by the target)."""
    theory = parse_rules(EXAMPLE_THEORY)
    target = parse_rules(EXAMPLE_THEORY + MISSING_RULE)
    X, _ = truth_table(theory)
    return theory, target, from_theory(target, X, "a")


@dataclass(frozen=True)
class MissingRuleResult:
    seeds: tuple[int, ...]
    kbann_perfect: tuple[bool, ...]
    topgen_perfect: tuple[bool, ...]
    regent_perfect: tuple[bool, ...]


def missing_rule_study(seeds: Sequence[int] = range(10), kbann_epochs: int = 500,
                       topgen_budget: int = 50, regent_budget: int = 60,
                       regent_population: int = 10) -> MissingRuleResult:
    """Which methods learn the 16 examples perfectly when one rule for ``b`` is missing.

    Every example serves as both training and validation data.
    """
    theory, _, data = missing_rule_task()
    kb, tg, rg = [], [], []
    for s in seeds:
        net = translate(theory, TranslationParams(seed=s))
        net = train(net, data, TrainParams(epochs=kbann_epochs, seed=s))
        kb.append(score(net, data).correctness == 1.0)
        best, _ = search(theory, data, data, TopGenConfig(budget=topgen_budget, seed=s))
        tg.append(score(best.network, data).correctness == 1.0)
        cfg = RegentConfig(population_size=regent_population, budget=regent_budget, seed=s)
        best, _, _ = regent_run(theory, data, cfg, val=data)
        rg.append(score(best.network, data).correctness == 1.0)
    return MissingRuleResult(tuple(seeds), tuple(kb), tuple(tg), tuple(rg))


# ----------------------------------------------------------- synthetic ordering

@dataclass(frozen=True)
class OrderingTask:
    seed: int
    target: RuleSet
    theory: RuleSet
    train: Dataset
    test: Dataset


def ordering_tasks(count: int = 20, input_count: int = 12, n_train: int = 200,
                   n_test: int = 200, base_seed: int = 0,
                   params: SynthesisParams | None = None) -> list[OrderingTask]:
    """Impoverished-theory tasks whose theory mislabels at least one training example."""
    params = params or SynthesisParams(input_count=input_count)
    tasks = []
    seed = base_seed
    while len(tasks) < count:
        target, theory = synthesize_theory(replace(params, seed=seed))
        rng = np.random.default_rng([seed, 1])
        tr = from_theory(target, random_binary(n_train, input_count, rng), "out")
        te = from_theory(target, random_binary(n_test, input_count, rng), "out")
        labels = from_theory(theory, tr.X, "out").y
        if np.any(labels != tr.y):
            tasks.append(OrderingTask(seed, target, theory, tr, te))
        seed += 1
    return tasks


@dataclass(frozen=True)
class OrderingResult:
    kbann: tuple[float, ...]
    topgen: tuple[float, ...]
    regent: tuple[float, ...]

    def means(self) -> dict[str, float]:
        return {k: float(np.mean(getattr(self, k))) for k in ("kbann", "topgen", "regent")}


def compare_on_task(task: OrderingTask, budget: int = 100, seed: int = 0,
                    train_params: TrainParams = TrainParams(), jobs: int = 1
                    ) -> tuple[float, float, float]:
    """Test errors of KBANN, TopGen and REGENT on one task."""
    net = translate(task.theory, TranslationParams(seed=seed))
    net = train(net, task.train, replace(train_params, seed=seed))
    kb = score(net, task.test).error
    best, _ = search(task.theory, task.train,
                     config=TopGenConfig(budget=budget, seed=seed, train_params=train_params),
                     jobs=jobs)
    tg = score(best.network, task.test).error
    cfg = RegentConfig(budget=budget, seed=seed, train_params=train_params)
    best, _, _ = regent_run(task.theory, task.train, cfg, jobs=jobs)
    rg = score(best.network, task.test).error
    return kb, tg, rg


def synthetic_ordering(tasks: Sequence[OrderingTask], budget: int = 100, seed: int = 0,
                       jobs: int = 1) -> OrderingResult:
    rows = [compare_on_task(t, budget, seed, jobs=jobs) for t in tasks]
    kb, tg, rg = zip(*rows)
    return OrderingResult(kb, tg, rg)


def sign_test(better: Sequence[float], worse: Sequence[float]) -> float:
    """One-sided paired sign test p-value for ``better < worse``; ties are dropped."""
    wins = sum(b < w for b, w in zip(better, worse))
    losses = sum(b > w for b, w in zip(better, worse))
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n
