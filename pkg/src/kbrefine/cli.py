"""Command-line front end and the cross-validation experiment harness.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import statistics
import sys
import time
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence, get_type_hints

import numpy as np

from .data import DataError, align_theory, from_theory, kfold, load_dataset, random_binary, save_features
from .network import NetworkError, TranslationParams, deserialize, serialize, translate
from .regent import RegentConfig, RegentError, read_checkpoint
from .regent import run as regent_run
from .theory import SynthesisParams, TheoryError, format_rules, load_rules, synthesize_theory
from .topgen import TopGenConfig, TraceRow, search
from .train import ScoreReport, TrainError, TrainParams, score, train

ALGORITHMS = ("kbann", "topgen", "regent")
TRACE_COLUMNS = ("networks_trained", "best_val_error", "test_error_of_best", "best_hidden_count",
                 "wall_seconds")
DATA_ERRORS = (DataError, TheoryError, NetworkError, TrainError, RegentError, OSError,
               json.JSONDecodeError)


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class ExperimentConfig:
    rules: str | None = None
    dataset: str | None = None
    output_dir: str = "results"
    algorithm: str = "regent"
    folds: int = 10
    seed: int = 0
    jobs: int = 1
    dna_offset: int = 0
    train_params: TrainParams = field(default_factory=TrainParams)
    translation_params: TranslationParams = field(default_factory=TranslationParams)
    topgen: TopGenConfig = field(default_factory=TopGenConfig)
    regent: RegentConfig = field(default_factory=RegentConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"algorithm must be one of {ALGORITHMS}")
        if self.folds < 2:
            raise UsageError("folds must be at least 2")
        if self.jobs < 1:
            raise UsageError("jobs must be at least 1")

    def resolved(self) -> "ExperimentConfig":
        """Push the shared training and translation settings into the search configs."""
        shared = dict(train_params=self.train_params, translation_params=self.translation_params)
        return dataclasses.replace(self, topgen=dataclasses.replace(self.topgen, **shared),
                                   regent=dataclasses.replace(self.regent, **shared))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def from_dict(cls, d: Mapping[str, Any]):
    """Build a (possibly nested) frozen dataclass from a partial mapping; defaults fill gaps."""
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} key(s): {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        t = hints[name]
        if is_dataclass(t) and isinstance(value, Mapping):
            value = from_dict(t, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return from_dict(ExperimentConfig, json.load(fh))


# -------------------------------------------------------------- experiment

def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, np.uint64)[0] >> 1)


def _trace_rows(trace: Sequence[TraceRow]) -> list[dict]:
    """One row per networks_trained value (the last state reached at that count)."""
    rows: dict[int, TraceRow] = {}
    for r in trace:
        rows[r.networks_trained] = r
    return [{"networks_trained": n, "best_val_error": r.best_val_error,
             "test_error_of_best": r.test_error, "best_hidden_count": r.best_hidden_count,
             "wall_seconds": round(r.wall_seconds, 3)} for n, r in sorted(rows.items())]


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Mapping]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in columns})


def run_fold(config: ExperimentConfig, rules, train_set, test_set, fold: int, out: Path):
    """Run one algorithm on one fold; returns (best network, trace rows, networks trained)."""
    seed = fold_seed(config.seed, fold)
    start = time.perf_counter()
    if config.algorithm == "kbann":
        tp = dataclasses.replace(config.translation_params, seed=seed)
        net = train(translate(rules, tp), train_set, dataclasses.replace(config.train_params, seed=seed))
        row = {"networks_trained": 1, "best_val_error": None,
               "test_error_of_best": score(net, test_set).error,
               "best_hidden_count": net.hidden_count,
               "wall_seconds": round(time.perf_counter() - start, 3)}
        return net, [row], 1, None
    if config.algorithm == "topgen":
        cfg = dataclasses.replace(config.topgen, seed=seed)
        best, trace = search(rules, train_set, config=cfg, test=test_set, jobs=config.jobs)
        return best.network, _trace_rows(trace), trace[-1].networks_trained, best.fitness
    cfg = dataclasses.replace(config.regent, seed=seed)
    best, trace, _ = regent_run(rules, train_set, cfg, test=test_set, jobs=config.jobs,
                                checkpoint_path=out / f"checkpoint_fold{fold}.json")
    return best.network, _trace_rows(trace), trace[-1].networks_trained, best.fitness


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """k-fold cross-validation; writes config.json, traces, best networks and summary.csv."""
    config = config.resolved()
    if not config.dataset:
        raise UsageError("a dataset is required")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    data = load_dataset(config.dataset, config.dna_offset)
    rules = align_theory(load_rules(config.rules) if config.rules else None, data)
    summary = []
    flag = out / "INCOMPLETE"
    flag.write_text("run in progress or failed\n", encoding="utf-8")
    for i, (tr, te) in enumerate(kfold(data, config.folds, config.seed)):
        net, rows, trained, fitness = run_fold(config, rules, tr, te, i, out)
        _write_csv(out / f"trace_fold{i}.csv", TRACE_COLUMNS, rows)
        (out / f"best_fold{i}.json").write_text(serialize(net) + "\n", encoding="utf-8")
        summary.append({"fold": i, "test_error": score(net, te).error,
                        "hidden_count": net.hidden_count, "networks_trained": trained,
                        "val_error": None if fitness is None else 1.0 - fitness})
    errs = [r["test_error"] for r in summary]
    hidden = [r["hidden_count"] for r in summary]
    rows = list(summary)
    rows.append({"fold": "mean", "test_error": statistics.fmean(errs),
                 "hidden_count": statistics.fmean(hidden)})
    rows.append({"fold": "stdev", "test_error": statistics.stdev(errs),
                 "hidden_count": statistics.stdev(hidden)})
    _write_csv(out / "summary.csv",
               ("fold", "test_error", "hidden_count", "networks_trained", "val_error"), rows)
    flag.unlink()
    return summary


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_training_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float, dest="learning_rate")
    g.add_argument("--momentum", type=float)
    g.add_argument("--loss", choices=("sse", "xent"))


def _add_search_flags(p):
    g = p.add_argument_group("search")
    g.add_argument("--budget", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int)
    g.add_argument("--validation-fraction", type=float)
    g.add_argument("--children", type=int, dest="children_per_expansion")
    g.add_argument("--population", type=int, dest="population_size")
    g.add_argument("--mutation-fraction", type=float)
    g.add_argument("--knn-fraction", type=float, dest="knn_seed_fraction")
    g.add_argument("--crossover-mode", choices=("rule_preserving", "random_nodes"))
    g.add_argument("--checkpoint-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kbrefine", description="Knowledge-based network refinement toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("parse", help="check a rule file and print it normalized")
    s.add_argument("rules")

    s = sub.add_parser("translate", help="compile rules into a network document")
    s.add_argument("rules")
    s.add_argument("--data", help="align inputs/outputs with this dataset")
    s.add_argument("--omega", type=float, default=4.0)
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")

    s = sub.add_parser("train", help="backpropagate a network on a dataset")
    s.add_argument("network")
    s.add_argument("data")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    _add_training_flags(s)

    for name in ("topgen", "regent"):
        s = sub.add_parser(name, help=f"run a single {name} search")
        s.add_argument("--rules")
        s.add_argument("--data", required=True)
        s.add_argument("--test", help="held-out data used only to annotate the trace")
        s.add_argument("-o", "--output", help="best network document")
        s.add_argument("--trace", help="trace CSV path")
        _add_training_flags(s)
        _add_search_flags(s)
        if name == "regent":
            s.add_argument("--checkpoint", help="checkpoint path (written every few cycles)")
            s.add_argument("--max-cycles", type=int, help="suspend after this many cycles")

    s = sub.add_parser("resume", help="continue a suspended regent run")
    s.add_argument("checkpoint")
    s.add_argument("-o", "--output")
    s.add_argument("--trace")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--max-cycles", type=int)

    s = sub.add_parser("eval", help="score a network on a dataset")
    s.add_argument("network")
    s.add_argument("data")

    s = sub.add_parser("synth", help="write a synthetic (target, impoverished, data) triple")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--inputs", type=int, default=12)
    s.add_argument("--train", type=int, default=200)
    s.add_argument("--test", type=int, default=200)

    s = sub.add_parser("run", help="cross-validated experiment")
    s.add_argument("--config", help="JSON experiment config; flags override it")
    s.add_argument("--rules")
    s.add_argument("--data", dest="dataset")
    s.add_argument("--out", dest="output_dir")
    s.add_argument("--algorithm", choices=ALGORITHMS)
    s.add_argument("--folds", type=int)
    s.add_argument("--dna-offset", type=int)
    _add_training_flags(s)
    _add_search_flags(s)
    return p


# ---------------------------------------------------------------- commands

def _given(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _train_params(args, base: TrainParams = TrainParams()) -> TrainParams:
    return dataclasses.replace(base, **_given(args, ("epochs", "learning_rate", "momentum", "loss")))


def _topgen_config(args) -> TopGenConfig:
    cfg = TopGenConfig(train_params=_train_params(args))
    return dataclasses.replace(cfg, **_given(args, ("budget", "seed", "validation_fraction",
                                                    "children_per_expansion")))


def _regent_config(args) -> RegentConfig:
    cfg = RegentConfig(train_params=_train_params(args))
    return dataclasses.replace(cfg, **_given(args, (
        "budget", "seed", "validation_fraction", "population_size", "mutation_fraction",
        "knn_seed_fraction", "crossover_mode", "checkpoint_every")))


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _report(r: ScoreReport) -> str:
    lines = [f"correctness {r.correctness}", f"correct {r.correct}/{r.total}", "confusion"]
    lines += ["  " + " ".join(str(int(v)) for v in row) for row in r.confusion]
    return "\n".join(lines)


def cmd_parse(args):
    rules = load_rules(args.rules)
    print(format_rules(rules), end="")
    print(f"% {len(rules)} rules, {len(rules.inputs)} inputs, outputs: {', '.join(rules.outputs)}")


def cmd_translate(args):
    rules = load_rules(args.rules)
    if args.data:
        rules = align_theory(rules, load_dataset(args.data))
    net = translate(rules, TranslationParams(args.omega, args.eps, args.seed))
    _emit(serialize(net), args.output)


def _load_network(path):
    return deserialize(Path(path).read_text(encoding="utf-8"))


def cmd_train(args):
    net = _load_network(args.network)
    data = load_dataset(args.data)
    trained = train(net, data, dataclasses.replace(_train_params(args), seed=args.seed))
    print(f"training correctness {score(trained, data).correctness}", file=sys.stderr)
    _emit(serialize(trained), args.output)


def _search_inputs(args):
    data = load_dataset(args.data)
    rules = align_theory(load_rules(args.rules) if args.rules else None, data)
    test = load_dataset(args.test) if args.test else None
    return rules, data, test


def _finish_search(best, trace, args):
    if args.trace:
        _write_csv(Path(args.trace), TRACE_COLUMNS, _trace_rows(trace))
    _emit(serialize(best.network), args.output)
    print(f"best validation correctness {best.fitness} with {best.hidden_count} hidden nodes "
          f"after {trace[-1].networks_trained} networks", file=sys.stderr)


def cmd_topgen(args):
    rules, data, test = _search_inputs(args)
    best, trace = search(rules, data, config=_topgen_config(args), test=test, jobs=args.jobs or 1)
    _finish_search(best, trace, args)


def cmd_regent(args):
    rules, data, test = _search_inputs(args)
    cfg = _regent_config(args)
    source = {"rules": args.rules, "data": args.data, "test": args.test}
    best, trace, ck = regent_run(rules, data, cfg, test=test, jobs=args.jobs or 1,
                                 checkpoint_path=args.checkpoint, max_cycles=args.max_cycles,
                                 metadata={"source": source})
    _finish_search(best, trace, args)


def cmd_resume(args):
    ck = read_checkpoint(args.checkpoint)
    source = ck.get("metadata", {}).get("source")
    if not source:
        raise DataError("checkpoint does not record its rules/data source")
    data = load_dataset(source["data"])
    rules = align_theory(load_rules(source["rules"]) if source["rules"] else None, data)
    test = load_dataset(source["test"]) if source.get("test") else None
    cfg = RegentConfig.from_dict(ck["config"])
    best, trace, _ = regent_run(rules, data, cfg, resume=ck, test=test, jobs=args.jobs,
                                checkpoint_path=args.checkpoint, max_cycles=args.max_cycles,
                                metadata=ck["metadata"])
    _finish_search(best, trace, args)


def cmd_eval(args):
    print(_report(score(_load_network(args.network), load_dataset(args.data))))


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target, theory = synthesize_theory(SynthesisParams(input_count=args.inputs, seed=args.seed))
    rng = np.random.default_rng([args.seed, 1])
    (out / "target.rules").write_text(format_rules(target), encoding="utf-8")
    (out / "impoverished.rules").write_text(format_rules(theory), encoding="utf-8")
    save_features(from_theory(target, random_binary(args.train, args.inputs, rng), "out"),
                  out / "train.data")
    save_features(from_theory(target, random_binary(args.test, args.inputs, rng), "out"),
                  out / "test.data")
    print(f"wrote target.rules, impoverished.rules, train.data, test.data to {out}")


def cmd_run(args):
    base = load_config(args.config) if args.config else ExperimentConfig()
    top = _given(args, ("rules", "dataset", "output_dir", "algorithm", "folds", "seed", "jobs",
                        "dna_offset"))
    tp = _train_params(args, base.train_params)
    topgen = dataclasses.replace(base.topgen, **_given(args, (
        "budget", "validation_fraction", "children_per_expansion")))
    regent = dataclasses.replace(base.regent, **_given(args, (
        "budget", "validation_fraction", "population_size", "mutation_fraction",
        "knn_seed_fraction", "crossover_mode", "checkpoint_every")))
    config = dataclasses.replace(base, train_params=tp, topgen=topgen, regent=regent, **top)
    summary = run_experiment(config)
    mean = statistics.fmean(r["test_error"] for r in summary)
    print(f"{config.algorithm}: mean test error {mean:.4f} over {len(summary)} folds; "
          f"results in {config.output_dir}")


COMMANDS = {"parse": cmd_parse, "translate": cmd_translate, "train": cmd_train,
            "topgen": cmd_topgen, "regent": cmd_regent, "resume": cmd_resume, "eval": cmd_eval,
            "synth": cmd_synth, "run": cmd_run}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
