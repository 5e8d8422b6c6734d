import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbrefine import topgen
from kbrefine.data import Dataset, FeatureSpace
from kbrefine.experiments import missing_rule_task
from kbrefine.network import (AND, INPUT, OR, OUTPUT, Network, Node, TranslationParams,
                              compute_levels, topological_order, translate)
from kbrefine.theory import parse_rules
from kbrefine.topgen import (FN, FP, Candidate, NodeErrorStats, TopGenConfig, add_node_fn,
                             add_node_fp, attribute_errors, eligible_nodes, expand, plan_children,
                             search)
from kbrefine.train import forward, predict_batch, score, train

from conftest import all_assignments, layered_rules, random_networks


@pytest.fixture
def example_net(example_rules):
    return translate(example_rules, TranslationParams(seed=0))


def chain(weight):
    """x -> h -> o where h is inactive on x = 0 and o needs h."""
    nodes = {"x": Node("x", INPUT), "h": Node("h", AND, -2.0),
             "o": Node("o", OUTPUT, -2.0, None, AND)}
    net = Network(nodes, {("x", "h"): 4.0, ("h", "o"): weight}, ("x",), ("o",))
    data = Dataset(FeatureSpace.binary(["x"]), np.array([[0.0]]), np.array([1]))
    return net, data


def test_no_blame_for_perfect_network(example_net, example_data):
    stats = attribute_errors(example_net, example_data)
    assert stats.is_zero()


def test_blame_follows_heavy_links():
    net, data = chain(4.0)
    stats = attribute_errors(net, data, 1.0)
    assert stats.fn == {"h": 1, "o": 1}
    assert stats.fp == {"h": 0, "o": 0}


def test_blame_stops_at_light_links():
    net, data = chain(0.05)
    stats = attribute_errors(net, data, 1.0)
    assert stats.fn == {"h": 0, "o": 1}


def test_negative_links_flip_blame():
    nodes = {"x": Node("x", INPUT), "h": Node("h", AND, -2.0),
             "o": Node("o", OUTPUT, 1.0, None, AND)}
    net = Network(nodes, {("x", "h"): 4.0, ("h", "o"): -4.0}, ("x",), ("o",))
    data = Dataset(FeatureSpace.binary(["x"]), np.array([[1.0]]), np.array([1]))
    stats = attribute_errors(net, data)
    assert stats.fn["o"] == 1 and stats.fp["h"] == 1


@settings(max_examples=40, deadline=None)
@given(random_networks(), st.integers(0, 1000))
def test_zero_tau_counters_vanish_iff_perfect(net, seed):
    rng = np.random.default_rng(seed)
    k = max(2, len(net.output_names))
    X = rng.integers(0, 2, size=(8, len(net.feature_names))).astype(float)
    y = rng.integers(0, k, size=8) if len(net.output_names) > 1 else rng.integers(0, 2, size=8)
    data = Dataset(FeatureSpace.binary(net.feature_names, tuple(f"c{i}" for i in range(k))), X, y)
    perfect = score(net, data).correctness == 1.0
    assert attribute_errors(net, data, 0.0).is_zero() == perfect
    if perfect:
        assert attribute_errors(net, data, 1.0).is_zero()


def _children(net, node_id):
    return [s for s in net.incoming[node_id] if abs(net.links[(s, node_id)]) > 1.0
            and net.nodes[s].kind != INPUT]


def test_fn_at_or_adds_disjunct(example_net):
    out = add_node_fn(example_net, "b", rng=np.random.default_rng(0))
    assert out.hidden_count == 5
    assert len(_children(out, "b")) == 3


def test_fn_at_and_splices_or(example_net):
    out = add_node_fn(example_net, "c", rng=np.random.default_rng(0))
    assert out.hidden_count == 6
    assert ("c", "a") not in out.links
    parent = [t for t in out.outgoing["c"] if out.nodes[t].kind == OR]
    assert len(parent) == 1 and (parent[0], "a") in out.links
    assert len(_children(out, parent[0])) == 2


def test_fp_at_and_adds_conjunct(example_net):
    out = add_node_fp(example_net, "c", rng=np.random.default_rng(0))
    assert out.hidden_count == 5
    assert len(_children(out, "c")) == 1  # c had only input antecedents before
    assert out.nodes["c"].bias == pytest.approx(example_net.nodes["c"].bias - 4.0)


def test_fp_at_or_splices_and(example_net):
    out = add_node_fp(example_net, "b", rng=np.random.default_rng(0))
    assert out.hidden_count == 6
    parent = [t for t in out.outgoing["b"] if out.nodes[t].kind == AND]
    assert len(parent) == 1 and (parent[0], "a") in out.links and ("b", "a") not in out.links


@pytest.mark.parametrize("op", [add_node_fn, add_node_fp])
def test_splice_at_output_keeps_its_name(example_net, op):
    out = op(example_net, "a", rng=np.random.default_rng(0))
    assert out.output_names == ("a",)
    assert out.nodes["a"].kind == OUTPUT
    assert out.hidden_count - example_net.hidden_count in (1, 2)


@pytest.mark.parametrize("op", [add_node_fn, add_node_fp])
def test_operators_are_deterministic(example_net, op):
    a = op(example_net, "b", rng=np.random.default_rng(5))
    b = op(example_net, "b", rng=np.random.default_rng(5))
    assert a.equals(b)


def test_operators_reject_inputs(example_net):
    with pytest.raises(ValueError):
        add_node_fn(example_net, "d")
    with pytest.raises(KeyError):
        add_node_fp(example_net, "nope")


def test_operators_preserve_example_function(example_net):
    X = all_assignments(4)
    before = predict_batch(example_net, X)
    for op in (add_node_fn, add_node_fp):
        for nid in eligible_nodes(example_net):
            out = op(example_net, nid, rng=np.random.default_rng(0))
            assert np.array_equal(predict_batch(out, X), before), (op.__name__, nid)


@settings(max_examples=40, deadline=None)
@given(layered_rules(max_inputs=6), st.integers(0, 1000))
def test_new_nodes_start_neutral(rules, seed):
    # exact preservation can fail where many inactive disjuncts leak activation,
    # so the invariant is that every added node sits on its neutral side
    net = translate(rules, TranslationParams(seed=seed))
    X = all_assignments(len(rules.inputs))
    for op, neutral in ((add_node_fn, False), (add_node_fp, True)):
        for nid in eligible_nodes(net):
            out = op(net, nid, rng=np.random.default_rng(seed))
            topological_order(out)
            assert out.hidden_count - net.hidden_count in (1, 2)
            leaves = [k for k in out.nodes if k not in net.nodes and
                      all(abs(out.links[(s, k)]) <= 0.05 for s in out.incoming[k])]
            assert len(leaves) == 1
            for x in X:
                acts = forward(out, x)
                assert (acts[leaves[0]] > 0.5) == neutral
            lv = compute_levels(out)
            assert all(lv[o] == 0 for o in out.output_names)
            assert all(out.incoming[o] for o in out.output_names)


def _fake_stats(fn, fp):
    def fake(net, data, tau=1.0):
        zero = {nid: 0 for nid, n in net.nodes.items() if n.kind != INPUT}
        return NodeErrorStats({**zero, **fn}, {**zero, **fp})
    return fake


def test_plan_alternates_fn_and_fp(example_net, example_data, monkeypatch):
    monkeypatch.setattr(topgen, "attribute_errors", _fake_stats({"b": 7}, {"c": 3}))
    rng = np.random.default_rng(0)
    assert plan_children(example_net, example_data, TopGenConfig(children_per_expansion=2), rng) \
        == [(FN, "b"), (FP, "c")]
    assert plan_children(example_net, example_data, TopGenConfig(children_per_expansion=1), rng) \
        == [(FN, "b")]


def test_plan_ranks_and_skips_zero(example_net, example_data, monkeypatch):
    monkeypatch.setattr(topgen, "attribute_errors",
                        _fake_stats({"b": 2, "c": 5, "a": 1}, {"b1": 4}))
    plan = plan_children(example_net, example_data, TopGenConfig(), np.random.default_rng(0))
    assert plan == [(FN, "c"), (FP, "b1"), (FN, "b"), (FN, "a")]


def test_plan_random_when_no_blame(example_net, example_data):
    plan = plan_children(example_net, example_data, TopGenConfig(), np.random.default_rng(0))
    assert len(plan) == 4
    assert all(op in (FN, FP) and nid in eligible_nodes(example_net) for op, nid in plan)


def test_expand_grows_every_child(example_rules):
    theory, target, data = missing_rule_task()
    net = train(translate(theory), data)
    parent = Candidate(net, score(net, data).correctness, 0)
    kids = expand(parent, data, data, TopGenConfig(), np.random.default_rng(0), next_age=1)
    assert 1 <= len(kids) <= 4
    assert [k.age for k in kids] == list(range(1, 1 + len(kids)))
    for k in kids:
        assert k.hidden_count - parent.hidden_count in (1, 2)
        assert 0.0 <= k.fitness <= 1.0


def test_search_budget_one_returns_kbann(example_rules, example_data):
    best, trace = search(example_rules, example_data, example_data, TopGenConfig(budget=1))
    assert best.age == 0 and best.hidden_count == 4
    assert len({r.networks_trained for r in trace}) == 1


def test_search_trace_is_monotone():
    theory, _, data = missing_rule_task()
    best, trace = search(theory, data, data, TopGenConfig(budget=20, seed=3))
    fits = [r.best_fitness for r in trace]
    assert fits == sorted(fits)
    assert trace[-1].networks_trained == 20
    assert best.fitness == fits[-1]


def test_search_is_deterministic_across_jobs():
    theory, _, data = missing_rule_task()
    a = search(theory, data, data, TopGenConfig(budget=13, seed=1), jobs=1)
    b = search(theory, data, data, TopGenConfig(budget=13, seed=1), jobs=3)
    assert a[1] == b[1]
    assert a[0].network.equals(b[0].network)


def test_queue_keys_are_total():
    net = translate(parse_rules("q :- x."))
    nets = [Candidate(net, 0.5, age) for age in range(5)]
    keys = [c.queue_key() for c in nets]
    assert len(set(keys)) == len(keys)


def test_config_validation():
    with pytest.raises(ValueError):
        TopGenConfig(budget=0)
    with pytest.raises(ValueError):
        TopGenConfig(children_per_expansion=0)
