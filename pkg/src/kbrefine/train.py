"""Backpropagation with momentum, scoring, validation splits and activation statistics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .data import Dataset
from .network import INPUT, Network, topological_order


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.10
    momentum: float = 0.9
    epochs: int = 20
    seed: int = 0
    loss: str = "sse"  # or "xent"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.loss not in ("sse", "xent"):
            raise ValueError("loss must be 'sse' or 'xent'")


@dataclass(frozen=True)
class ScoreReport:
    correctness: float
    correct: int
    total: int
    confusion: np.ndarray  # rows: true class, columns: predicted class

    @property
    def error(self) -> float:
        return 1.0 - self.correctness


class Compiled:
    """A network flattened into arrays for the compiled kernels."""

    def __init__(self, net: Network):
        self.net = net
        self.order = topological_order(net)
        self.pos = {nid: i for i, nid in enumerate(self.order)}
        self.n_in = len(net.feature_names)
        n = len(self.order)
        self.bias = np.array([net.nodes[nid].bias for nid in self.order], dtype=np.float64)
        by_target: list[list[tuple[int, tuple[str, str]]]] = [[] for _ in range(n)]
        for key in net.links:
            by_target[self.pos[key[1]]].append((self.pos[key[0]], key))
        self.edges: list[tuple[str, str]] = []
        start = [0]
        src = []
        for j in range(n):
            for p, key in sorted(by_target[j]):
                src.append(p)
                self.edges.append(key)
            start.append(len(src))
        self.start = np.array(start, dtype=np.int64)
        self.src = np.array(src, dtype=np.int64)
        self.w = np.array([net.links[k] for k in self.edges], dtype=np.float64)
        self.out_pos = np.array([self.pos[o] for o in net.output_names], dtype=np.int64)

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64).reshape(-1, self.n_in)
        return _kernels.forward_batch(X, self.n_in, self.bias, self.start, self.src, self.w)

    def rebuild(self, bias: np.ndarray, w: np.ndarray) -> Network:
        nodes = {nid: (node if node.kind == INPUT else replace(node, bias=float(bias[self.pos[nid]])))
                 for nid, node in self.net.nodes.items()}
        new_w = dict(zip(self.edges, map(float, w)))
        links = {k: new_w[k] for k in self.net.links}
        return self.net.evolve(nodes, links)


def compiled(net: Network) -> Compiled:
    c = net.__dict__.get("_compiled")
    if c is None:
        c = Compiled(net)
        net.__dict__["_compiled"] = c
    return c


def _check_dims(net: Network, X: np.ndarray):
    if X.ndim != 2 or X.shape[1] != len(net.feature_names):
        raise TrainError(f"feature dimension {X.shape[-1]} does not match network "
                         f"({len(net.feature_names)} inputs)")


def _as_X(features) -> np.ndarray:
    if isinstance(features, Dataset):
        return features.X
    return np.asarray(features, dtype=np.float64)


def activations(net: Network, X) -> np.ndarray:
    """Activation matrix (examples x nodes) in ``compiled(net).order`` column order."""
    X = _as_X(X)
    X = X.reshape(1, -1) if X.ndim == 1 else X
    _check_dims(net, X)
    return compiled(net).forward(X)


def forward(net: Network, features) -> dict[str, float]:
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    _check_dims(net, x)
    c = compiled(net)
    a = c.forward(x)[0]
    return {nid: float(a[i]) for i, nid in enumerate(c.order)}


def output_activations(net: Network, X) -> np.ndarray:
    return activations(net, X)[:, compiled(net).out_pos]


def predict_batch(net: Network, X) -> np.ndarray:
    out = output_activations(net, X)
    if out.shape[1] == 1:
        return (out[:, 0] >= 0.5).astype(np.int64)
    return np.argmax(out, axis=1)  # first maximum wins ties


def predict(net: Network, features) -> int:
    return int(predict_batch(net, np.asarray(features, dtype=np.float64).reshape(1, -1))[0])


def targets(net: Network, y: np.ndarray) -> np.ndarray:
    k = len(net.output_names)
    y = np.asarray(y, dtype=np.int64)
    if k == 1:
        return (y == 1).astype(np.float64).reshape(-1, 1)
    T = np.zeros((len(y), k))
    T[np.arange(len(y)), y] = 1.0
    return T


def train(net: Network, data: Dataset, params: TrainParams = TrainParams()) -> Network:
    """Online backpropagation; returns a new network with the same topology."""
    if len(data) == 0:
        raise TrainError("cannot train on an empty example list")
    _check_dims(net, data.X)
    if params.epochs == 0:
        return net
    c = compiled(net)
    rng = np.random.default_rng(params.seed)
    orders = np.array([rng.permutation(len(data)) for _ in range(params.epochs)], dtype=np.int64)
    bias, w = c.bias.copy(), c.w.copy()
    _kernels.train_online(data.X, targets(net, data.y), orders, c.n_in, bias, c.start, c.src, w,
                          c.out_pos, params.learning_rate, params.momentum, params.loss == "xent")
    return c.rebuild(bias, w)


def gradients(net: Network, x, label: int, loss: str = "sse") -> tuple[dict, dict]:
    """Analytic dE/dw per link and dE/dbias per node for one example."""
    c = compiled(net)
    x = np.ascontiguousarray(x, dtype=np.float64)
    t = targets(net, np.array([label]))[0]
    gw, gb = _kernels.example_gradient(x, t, c.n_in, c.bias, c.start, c.src, c.w, c.out_pos,
                                       loss == "xent")
    return (dict(zip(c.edges, map(float, gw))),
            {nid: float(gb[i]) for i, nid in enumerate(c.order) if net.nodes[nid].kind != INPUT})


def loss(net: Network, x, label: int, kind: str = "sse") -> float:
    acts = output_activations(net, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    t = targets(net, np.array([label]))[0]
    if kind == "xent":
        return float(-np.sum(t * np.log(acts) + (1 - t) * np.log(1 - acts)))
    return float(0.5 * np.sum((acts - t) ** 2))


def score(net: Network, data: Dataset) -> ScoreReport:
    if len(data) == 0:
        raise TrainError("cannot score an empty example list")
    _check_dims(net, data.X)
    pred = predict_batch(net, data.X)
    k = max(len(data.classes), 2)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (data.y, pred), 1)
    correct = int(np.sum(pred == data.y))
    return ScoreReport(correct / len(data), correct, len(data), confusion)


def mean_activations(net: Network, data: Dataset) -> dict[str, float]:
    if len(data) == 0:
        raise TrainError("mean activations need at least one example")
    A = activations(net, data.X)
    means = A.mean(axis=0)
    return {nid: float(means[i]) for i, nid in enumerate(compiled(net).order)}


def split_validation(data: Dataset, fraction: float = 0.10, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified hold-out split: returns ``(train_part, validation_part)``."""
    if not 0 < fraction < 1:
        raise TrainError("fraction must lie strictly between 0 and 1")
    n = len(data)
    if n < 2:
        raise TrainError("need at least two examples to split")
    rng = np.random.default_rng(seed)
    classes = np.unique(data.y)
    counts = [int(np.sum(data.y == c)) for c in classes]
    val: list[int] = []
    if len(classes) > 1 and min(counts) < 2:
        warnings.warn("too few examples per class to stratify; using an unstratified split",
                      stacklevel=2)
        perm = rng.permutation(n)
        k = min(max(1, int(round(fraction * n))), n - 1)
        val = sorted(perm[:k].tolist())
    else:
        for c, cnt in zip(classes, counts):
            idx = rng.permutation(np.flatnonzero(data.y == c))
            k = min(max(1, int(np.floor(fraction * cnt + 0.5))), cnt - 1) if cnt > 1 else 0
            val.extend(idx[:k].tolist())
        val.sort()
    vset = set(val)
    train_idx = [i for i in range(n) if i not in vset]
    return data.subset(train_idx), data.subset(val)
