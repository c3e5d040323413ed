"""C4.5-style gain-ratio decision tree over continuous flow features.

Binary splits only (all features are continuous); a value ``<= threshold``
goes left. No post-pruning: ``min_leaf_size``, ``min_gain_ratio`` and
``max_depth`` act as pre-pruning knobs.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import EmptyDataset, UndefinedSplit
from .flows import CLASS_TABLE, N_FEATURES, FeatureVector, LabeledExample

LABELS = tuple(sorted(CLASS_TABLE))
# Gain ratios closer than this are treated as ties.
TIE_EPS = 1e-12


@dataclass(frozen=True)
class TrainParams:
    min_leaf_size: int = 2
    min_gain_ratio: float = 1e-6
    max_depth: int = 32
    rng_seed: int = 0  # reserved: the tie-break rule makes training order-free

    def __post_init__(self):
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass(frozen=True)
class Leaf:
    label: int
    counts: tuple[int, ...]


@dataclass(frozen=True)
class Split:
    feature: int  # 1-based
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


def _entropy(counts) -> float:
    total = sum(counts)
    h = 0.0
    for c in counts:
        if c:
            p = c / total
            h -= p * math.log2(p)
    return h


def gain_ratio(examples: Sequence[LabeledExample], feature_index: int,
               threshold: float) -> float:
    """Information gain / split information (bits) of a binary split."""
    if not examples:
        raise EmptyDataset("no examples")
    left = Counter(ex.label for ex in examples if ex.features[feature_index] <= threshold)
    right = Counter(ex.label for ex in examples if ex.features[feature_index] > threshold)
    n_l, n_r = sum(left.values()), sum(right.values())
    if n_l == 0 or n_r == 0:
        raise UndefinedSplit(f"f{feature_index} <= {threshold} leaves one side empty")
    n = n_l + n_r
    parent = _entropy((left + right).values())
    gain = parent - n_l / n * _entropy(left.values()) - n_r / n * _entropy(right.values())
    split_info = _entropy((n_l, n_r))
    return gain / split_info


def _as_arrays(examples: Sequence[LabeledExample]):
    X = np.array([ex.features.as_tuple() for ex in examples], dtype=float).reshape(-1, N_FEATURES)
    y = np.array([ex.label for ex in examples], dtype=int)
    return X, y


def _plogp_sum(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    # row-wise entropy in bits of class-count rows
    with np.errstate(divide="ignore", invalid="ignore"):
        p = counts / totals[:, None]
        terms = np.where(counts > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=1)


def _best_split_arrays(X: np.ndarray, y: np.ndarray, params: TrainParams):
    n = len(y)
    onehot = (y[:, None] == np.array(LABELS)[None, :]).astype(float)
    total = onehot.sum(axis=0)
    if np.count_nonzero(total) <= 1:
        return None
    parent_h = _plogp_sum(total[None, :], np.array([float(n)]))[0]
    per_feature = []  # (feature, sorted values, gain ratios)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        distinct = xs[:-1] < xs[1:]
        if not distinct.any():
            continue
        cum = np.cumsum(onehot[order], axis=0)[:-1]
        n_l = np.arange(1, n, dtype=float)
        n_r = n - n_l
        h_l = _plogp_sum(cum, n_l)
        h_r = _plogp_sum(total[None, :] - cum, n_r)
        gain = parent_h - n_l / n * h_l - n_r / n * h_r
        split_info = _plogp_sum(np.stack([n_l, n_r], axis=1), np.full(n - 1, float(n)))
        ok = distinct & (n_l >= params.min_leaf_size) & (n_r >= params.min_leaf_size)
        ok &= gain >= params.min_gain_ratio
        if ok.any():
            gr = np.where(ok, gain / np.where(split_info > 0, split_info, 1.0), -np.inf)
            per_feature.append((j + 1, xs, gr))
    if not per_feature:
        return None
    top = max(float(gr.max()) for _, _, gr in per_feature)
    for feature, xs, gr in per_feature:
        hits = np.flatnonzero(gr >= top - TIE_EPS)
        if len(hits):
            i = int(hits[0])
            thr = (xs[i] + xs[i + 1]) / 2.0
            if not xs[i] <= thr < xs[i + 1]:
                thr = xs[i]
            return float(gr[i]), feature, float(thr)


def best_split(examples: Sequence[LabeledExample], params: TrainParams = TrainParams()):
    """Return ``(feature_index, threshold)`` maximising gain ratio, or None."""
    if not examples:
        raise EmptyDataset("no examples")
    X, y = _as_arrays(examples)
    found = _best_split_arrays(X, y, params)
    return None if found is None else (found[1], found[2])


def _leaf(y: np.ndarray) -> Leaf:
    counts = tuple(int(np.count_nonzero(y == lab)) for lab in LABELS)
    # first maximum => lowest label wins ties
    label = LABELS[int(np.argmax(counts))]
    return Leaf(label, counts)


def train(examples: Sequence[LabeledExample], params: TrainParams = TrainParams()) -> Node:
    if not examples:
        raise EmptyDataset("cannot train on an empty set")
    X, y = _as_arrays(examples)
    return _grow(X, y, params, depth=0)


def _grow(X, y, params: TrainParams, depth: int) -> Node:
    if (len(np.unique(y)) == 1 or depth >= params.max_depth
            or len(y) < 2 * params.min_leaf_size):
        return _leaf(y)
    found = _best_split_arrays(X, y, params)
    if found is None:
        return _leaf(y)
    _, feature, thr = found
    mask = X[:, feature - 1] <= thr
    return Split(feature, thr,
                 _grow(X[mask], y[mask], params, depth + 1),
                 _grow(X[~mask], y[~mask], params, depth + 1))


def predict(tree: Node, fv: FeatureVector) -> int:
    values = fv.as_tuple()
    node = tree
    while isinstance(node, Split):
        node = node.left if values[node.feature - 1] <= node.threshold else node.right
    return node.label


def evaluate(tree: Node, test: Sequence[LabeledExample]) -> float:
    if not test:
        raise EmptyDataset("empty test set")
    hits = sum(predict(tree, ex.features) == ex.label for ex in test)
    return hits / len(test)


def confusion_matrix(tree: Node, test: Sequence[LabeledExample]) -> dict[tuple[int, int], int]:
    """Counts keyed by (true label, predicted label)."""
    out = {(a, b): 0 for a in LABELS for b in LABELS}
    for ex in test:
        out[ex.label, predict(tree, ex.features)] += 1
    return out


def depth(tree: Node) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(depth(tree.left), depth(tree.right))


def leaves(tree: Node):
    if isinstance(tree, Leaf):
        yield tree
    else:
        yield from leaves(tree.left)
        yield from leaves(tree.right)


def dump_tree(tree: Node) -> str:
    lines = []

    def walk(node):
        if isinstance(node, Leaf):
            lines.append("L %d %s" % (node.label, " ".join(map(str, node.counts))))
        else:
            lines.append("S %d %r" % (node.feature, node.threshold))
            walk(node.left)
            walk(node.right)

    walk(tree)
    return "\n".join(lines) + "\n"


def load_tree(text: str) -> Node:
    tokens = iter(line.split() for line in text.splitlines() if line.strip())

    def read():
        try:
            parts = next(tokens)
        except StopIteration:
            raise ValueError("truncated tree text") from None
        if parts[0] == "L":
            return Leaf(int(parts[1]), tuple(int(c) for c in parts[2:]))
        if parts[0] == "S":
            feature, thr = int(parts[1]), float(parts[2])
            left = read()
            return Split(feature, thr, left, read())
        raise ValueError(f"unknown node tag {parts[0]!r}")

    tree = read()
    if next(tokens, None) is not None:
        raise ValueError("trailing lines after tree")
    return tree
