"""Datasets: feature files, DNA windows, theory-labelled data and k-fold splits.

Feature file (``.data``)::

    # comment
    color:red|green|blue, flag:binary, class:neg|pos
    red, 1, pos

Nominal features are one-hot encoded as ``name=value`` columns, binary
features keep their name. DNA files (``.dna``) hold ``label, [name,] sequence``
rows; position ``p`` of the window is encoded as ``pos<p+offset>=<base>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .theory import RuleSet, evaluate


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    values: tuple[str, ...] | None = None  # None means binary

    @property
    def encoded_names(self) -> list[str]:
        if self.values is None:
            return [self.name]
        return [f"{self.name}={v}" for v in self.values]


@dataclass(frozen=True)
class FeatureSpace:
    features: tuple[Feature, ...]
    classes: tuple[str, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if any(f.values is not None and not f.values for f in self.features):
            raise DataError("nominal domains must be nonempty")
        if not self.classes:
            raise DataError("at least one class required")

    @property
    def encoded_names(self) -> tuple[str, ...]:
        return tuple(n for f in self.features for n in f.encoded_names)

    @classmethod
    def binary(cls, names: Sequence[str], classes=("false", "true")) -> "FeatureSpace":
        return cls(tuple(Feature(n) for n in names), tuple(classes))


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded examples: ``X`` is (m, d) in [0, 1], ``y`` holds class indices."""

    space: FeatureSpace
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != len(self.space.encoded_names):
            raise DataError(f"X has shape {X.shape}, expected (m, {len(self.space.encoded_names)})")
        if y.shape != (X.shape[0],):
            raise DataError("y must be a vector with one label per example")
        if len(y) and (y.min() < 0 or y.max() >= len(self.space.classes)):
            raise DataError("label outside the class list")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.space.encoded_names

    @property
    def classes(self) -> tuple[str, ...]:
        return self.space.classes

    @property
    def examples(self) -> list[Example]:
        return [Example(x, int(c)) for x, c in zip(self.X, self.y)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.space, self.X[idx], self.y[idx])

    def equals(self, other: "Dataset") -> bool:
        return (self.space == other.space and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    @classmethod
    def from_examples(cls, space: FeatureSpace, examples: Sequence[Example]) -> "Dataset":
        d = len(space.encoded_names)
        X = np.array([e.features for e in examples], dtype=np.float64).reshape(-1, d)
        return cls(space, X, np.array([e.label for e in examples], dtype=np.int64))


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def load_features(path) -> Dataset:
    lines = _lines(path)
    try:
        _, header = next(lines)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    cols = [c.strip() for c in header.split(",")]
    decls = []
    for c in cols:
        name, sep, dom = c.partition(":")
        if not sep or not name.strip():
            raise DataError(f"{path}: bad header entry {c!r}")
        dom = dom.strip()
        decls.append((name.strip(), None if dom == "binary" else tuple(v.strip() for v in dom.split("|"))))
    *feats, (_, classes) = decls
    if classes is None:
        raise DataError(f"{path}: last header column must list the classes")
    space = FeatureSpace(tuple(Feature(n, v) for n, v in feats), classes)
    X, y = [], []
    for lineno, line in lines:
        vals = [v.strip() for v in line.split(",")]
        if len(vals) != len(cols):
            raise DataError(f"{path}: row {lineno} has {len(vals)} fields, expected {len(cols)}")
        row = []
        for col, (f, v) in enumerate(zip(space.features, vals), start=1):
            if f.values is None:
                if v not in ("0", "1"):
                    raise DataError(f"{path}: row {lineno}, column {col} ({f.name}): {v!r} is not 0/1")
                row.append(float(v))
            else:
                if v not in f.values:
                    raise DataError(f"{path}: row {lineno}, column {col} ({f.name}): "
                                    f"unknown value {v!r}")
                row.extend(float(v == u) for u in f.values)
        if vals[-1] not in classes:
            raise DataError(f"{path}: row {lineno}: unknown label {vals[-1]!r}")
        X.append(row)
        y.append(classes.index(vals[-1]))
    return Dataset(space, np.array(X, dtype=np.float64).reshape(len(y), -1), np.array(y))


def dna_feature_name(coord: int, base: str) -> str:
    return f"pos{coord}={base}"


def load_dna(path, alphabet: Sequence[str] = "ACGT", offset: int = 0,
             classes: Sequence[str] | None = None) -> Dataset:
    """Load ``label, [name,] sequence`` rows; non-alphabet symbols encode as all zeros."""
    alphabet = tuple(a.upper() for a in alphabet)
    labels, seqs = [], []
    for lineno, line in _lines(path):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            raise DataError(f"{path}: row {lineno} needs a label and a sequence")
        labels.append(parts[0])
        seqs.append("".join(parts[-1].split()).upper())
    if not seqs:
        raise DataError(f"{path}: empty file")
    length = len(seqs[0])
    for k, s in enumerate(seqs):
        if len(s) != length:
            raise DataError(f"{path}: sequence {k + 1} has length {len(s)}, expected {length}")
    if classes is None:
        found = sorted(set(labels))
        classes = ["-", "+"] if set(found) == {"+", "-"} else found
    classes = tuple(classes)
    unknown = set(labels) - set(classes)
    if unknown:
        raise DataError(f"{path}: unknown label(s) {sorted(unknown)}")
    feats = tuple(Feature(f"pos{p + offset}", alphabet) for p in range(length))
    space = FeatureSpace(feats, classes)
    lookup = {b: i for i, b in enumerate(alphabet)}
    X = np.zeros((len(seqs), length * len(alphabet)))
    for r, s in enumerate(seqs):
        for p, ch in enumerate(s):
            i = lookup.get(ch)
            if i is not None:
                X[r, p * len(alphabet) + i] = 1.0
    return Dataset(space, X, np.array([classes.index(l) for l in labels]))


def from_theory(rules: RuleSet, X: np.ndarray, output: str | None = None) -> Dataset:
    """Label binary examples (columns in ``rules.inputs`` order) with the theory.

    One output: class 1 means the output symbol is true. Several outputs: the
    label is the first true output (rows where none is true get the last class).
    """
    X = np.asarray(X, dtype=np.float64)
    outs = [output] if output else list(rules.outputs)
    y = []
    for row in X:
        vals = evaluate(rules, dict(zip(rules.inputs, row.astype(bool))))
        if len(outs) == 1:
            y.append(int(vals[outs[0]]))
        else:
            y.append(next((k for k, o in enumerate(outs) if vals[o]), len(outs) - 1))
    classes = ("false", "true") if len(outs) == 1 else tuple(outs)
    return Dataset(FeatureSpace.binary(rules.inputs, classes), X, np.array(y, dtype=np.int64))


def align_theory(rules: RuleSet | None, data: Dataset) -> RuleSet:
    """Re-declare a theory over a dataset's encoded features and classes.

    Network inputs become every encoded feature in column order. A two-class
    dataset uses the theory's single output as the positive class; otherwise
    each class name must be an output symbol (classes without rules are false).
    A missing theory gives an empty one with a single output ``out``.
    """
    feats = data.feature_names
    if rules is None:
        outs = ["out"] if len(data.classes) <= 2 else list(data.classes)
        return RuleSet.build((), feats, outs)
    unknown = [s for s in rules.inputs if s not in set(feats)]
    if unknown:
        raise DataError(f"theory refers to unknown feature(s) {unknown[:5]}")
    outs = list(rules.outputs)
    if len(data.classes) > 2 or (len(outs) > 1 and set(outs) == set(data.classes)):
        extra = [o for o in outs if o not in data.classes]
        if extra:
            raise DataError(f"theory output(s) {extra} are not class names")
        outs = list(data.classes)
    elif len(outs) != 1:
        raise DataError(f"a two-class dataset needs a single-output theory, got {outs}")
    return RuleSet.build(rules.rules, feats, outs)


def load_dataset(path, dna_offset: int = 0) -> Dataset:
    """Dispatch on extension: ``.dna`` files are sequences, anything else a feature file."""
    if str(path).endswith(".dna"):
        return load_dna(path, offset=dna_offset)
    return load_features(path)


def random_binary(n_examples: int, n_inputs: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(n_examples, n_inputs)).astype(np.float64)


def kfold(dataset: Dataset, k: int, seed: int = 0) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold split; fold sizes differ by at most one."""
    n = len(dataset)
    if k < 2:
        raise DataError("k must be at least 2")
    if k > n:
        raise DataError(f"k={k} exceeds the number of examples ({n})")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for c in np.unique(dataset.y):
        idx = np.flatnonzero(dataset.y == c)
        for i in rng.permutation(idx):
            folds[slot % k].append(int(i))
            slot += 1
    pairs = []
    for i in range(k):
        test = sorted(folds[i])
        train = sorted(j for f in range(k) if f != i for j in folds[f])
        pairs.append((dataset.subset(train), dataset.subset(test)))
    return pairs


def save_features(dataset: Dataset, path) -> None:
    """Write a binary-feature dataset in the ``.data`` format."""
    if any(f.values is not None for f in dataset.space.features):
        raise DataError("save_features only writes binary feature spaces")
    names = [f"{f.name}:binary" for f in dataset.space.features]
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(", ".join(names + ["class:" + "|".join(dataset.classes)]) + "\n")
        for x, c in zip(dataset.X, dataset.y):
            fh.write(", ".join([str(int(v)) for v in x] + [dataset.classes[c]]) + "\n")
