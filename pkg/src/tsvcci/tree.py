"""Per-covariate partition trees.

Each covariate's coefficient is piecewise constant over a binary tree whose
internal nodes test another covariate against a threshold (``<=`` goes left).
Leaves are numbered 0..M-1 in left-to-right order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = ["SplitRule", "Leaf", "Node", "PartitionTree", "ModelStructure"]


@dataclass(frozen=True)
class SplitRule:
    """Split the coefficient of covariate `target` at ``X[modifier] <= threshold``."""

    target: int
    modifier: int
    threshold: float

    def __post_init__(self):
        if self.target == self.modifier:
            raise ValueError("a covariate cannot modify its own effect")


@dataclass(frozen=True)
class Leaf:
    pass


@dataclass(frozen=True)
class Node:
    modifier: int
    threshold: float
    left: "Tree"
    right: "Tree"

    @property
    def leaf_count(self) -> int:
        return _count(self)


Tree = Union[Leaf, Node]
LEAF = Leaf()


def _count(node) -> int:
    if isinstance(node, Leaf):
        return 1
    return _count(node.left) + _count(node.right)


def _split(node, m, modifier, threshold):
    # returns (new_node, remaining m)
    if isinstance(node, Leaf):
        if m == 0:
            return Node(modifier, float(threshold), LEAF, LEAF), -1
        return node, m - 1
    left, m = _split(node.left, m, modifier, threshold)
    if m < 0:
        return Node(node.modifier, node.threshold, left, node.right), m
    right, m = _split(node.right, m, modifier, threshold)
    return Node(node.modifier, node.threshold, left, right), m


@dataclass(frozen=True)
class PartitionTree:
    covariate: int
    root: Tree = LEAF

    @property
    def leaf_count(self) -> int:
        return _count(self.root)

    @property
    def n_splits(self) -> int:
        return self.leaf_count - 1

    def assign(self, covariates) -> np.ndarray:
        """Leaf index of every row of an (n, p) matrix."""
        x = np.asarray(covariates, dtype=float)
        out = np.zeros(x.shape[0], dtype=np.intp)
        stack = [(self.root, np.arange(x.shape[0]), 0)]
        while stack:
            node, rows, offset = stack.pop()
            if isinstance(node, Leaf):
                out[rows] = offset
                continue
            go_left = x[rows, node.modifier] <= node.threshold
            stack.append((node.left, rows[go_left], offset))
            stack.append((node.right, rows[~go_left], offset + _count(node.left)))
        return out

    def assign_row(self, row) -> int:
        node, offset = self.root, 0
        while isinstance(node, Node):
            if row[node.modifier] <= node.threshold:
                node = node.left
            else:
                offset += _count(node.left)
                node = node.right
        return offset

    def split(self, leaf: int, modifier: int, threshold: float) -> "PartitionTree":
        """New tree with `leaf` replaced by a split; children become leaf, leaf + 1."""
        if modifier == self.covariate:
            raise ValueError("a covariate cannot modify its own effect")
        if not 0 <= leaf < self.leaf_count:
            raise IndexError(leaf)
        root, _ = _split(self.root, leaf, modifier, threshold)
        return PartitionTree(self.covariate, root)

    def rules(self) -> list:
        """SplitRules of all internal nodes, pre-order."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Node):
                out.append(SplitRule(self.covariate, node.modifier, node.threshold))
                stack.extend([node.right, node.left])
        return out

    def leaf_paths(self) -> list:
        """Per leaf, the list of (modifier, op, threshold) conditions from the root."""
        out = []

        def walk(node, path):
            if isinstance(node, Leaf):
                out.append(path)
                return
            walk(node.left, path + [(node.modifier, "<=", node.threshold)])
            walk(node.right, path + [(node.modifier, ">", node.threshold)])

        walk(self.root, [])
        return out

    def describe_leaf(self, m: int, names) -> str:
        path = self.leaf_paths()[m]
        if not path:
            return "all"
        return " & ".join(f"{names[k]} {op} {c:g}" for k, op, c in path)


@dataclass(frozen=True)
class ModelStructure:
    """One partition tree per covariate."""

    trees: tuple

    @classmethod
    def empty(cls, p: int) -> "ModelStructure":
        return cls(tuple(PartitionTree(j) for j in range(p)))

    @property
    def p(self) -> int:
        return len(self.trees)

    @property
    def n_splits(self) -> int:
        return sum(t.n_splits for t in self.trees)

    def leaf_counts(self) -> tuple:
        return tuple(t.leaf_count for t in self.trees)

    def split(self, leaf: int, rule: SplitRule) -> "ModelStructure":
        trees = list(self.trees)
        trees[rule.target] = trees[rule.target].split(leaf, rule.modifier, rule.threshold)
        return ModelStructure(tuple(trees))

    def split_pairs(self) -> dict:
        """Count of splits per (target covariate, modifier) pair."""
        counts = {}
        for tree in self.trees:
            for rule in tree.rules():
                key = (rule.target, rule.modifier)
                counts[key] = counts.get(key, 0) + 1
        return counts
