"""Pruning of likely level-0 comments before model propagation.

A linear max-margin classifier flags probable level-0 comments from their
standardized context features. A flagged node is actually removed only
when its whole descendant subtree is flagged too, which keeps the
retained nodes connected. The removed material is remembered through
three per-node counts that later scale learned bias vectors:

  * ``pruned_child_levels``: depth (in levels) of the pruned run at the
    head of a node's children chain, which is what its hierarchical
    edge lost;
  * ``pruned_prev_siblings``: contiguous pruned siblings immediately
    before a node;
  * ``pruned_succ_nodes``: total nodes in the subtrees of the contiguous
    pruned-sibling run between a node and its next retained sibling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .thread_graph import ThreadTree


class PrunerError(ValueError):
    pass


@dataclass
class LinearPruneClassifier:
    """Primal linear SVM: decision sign(w . x + b), positive = prune."""

    weights: np.ndarray
    bias: float
    lam: float

    def decision(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def flags(self, x: np.ndarray) -> np.ndarray:
        return self.decision(x) > 0.0

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"weights": self.weights.tolist(), "bias": self.bias, "lambda": self.lam},
                fh,
            )
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LinearPruneClassifier":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            weights=np.asarray(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            lam=float(obj["lambda"]),
        )

    def to_json_obj(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias, "lambda": self.lam}

    @classmethod
    def from_json_obj(cls, obj) -> "LinearPruneClassifier":
        return cls(
            weights=np.asarray(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            lam=float(obj["lambda"]),
        )


def train_pruner(
    features: np.ndarray,
    levels,
    lam: float = 1e-3,
    epochs: int = 2000,
    step_scale: float = 1.0,
    seed: int = 0,
) -> LinearPruneClassifier:
    """Fit the level-0 detector by full-batch subgradient descent on the
    L2-regularized hinge loss. Deterministic for a given seed.

    ``levels`` are quantized karma levels; level 0 is the positive class.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.where(np.asarray(levels) == 0, 1.0, -1.0)
    if len(np.unique(y)) < 2:
        raise PrunerError("training set contains a single class")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.01, 0.01, size=x.shape[1])
    b = 0.0
    n = len(y)
    for t in range(1, epochs + 1):
        margin = y * (x @ w + b)
        viol = margin < 1.0
        gw = -(y[viol] @ x[viol]) / n + 2.0 * lam * w
        gb = -float(y[viol].sum()) / n
        eta = step_scale / np.sqrt(t)
        w -= eta * gw
        b -= eta * gb
    return LinearPruneClassifier(weights=w, bias=float(b), lam=lam)


@dataclass(frozen=True)
class PrunedTree:
    """Retained subgraph of a thread with rewired pointers and the counts
    of what was removed around each retained node."""

    base: ThreadTree
    retained: frozenset
    pruned: frozenset
    parent: dict
    first_child: dict
    prev_sibling: dict
    next_sibling: dict
    pruned_child_levels: dict
    pruned_prev_siblings: dict
    pruned_succ_nodes: dict
    retained_chrono: tuple

    @property
    def root(self) -> str:
        return self.base.root

    def pruned_fraction(self) -> float:
        n_comments = len(self.base.nodes) - 1
        return len(self.pruned) / n_comments if n_comments else 0.0


def prune(tree, flags: Mapping[str, bool]) -> PrunedTree:
    """Remove every maximal fully-flagged subtree and rewire pointers.

    A flagged node with an unflagged descendant is retained, so the
    retained set always stays a tree under the original root. Flags are
    only meaningful for non-root nodes; a flagged root is an error.
    """
    if isinstance(tree, PrunedTree):
        # Re-pruning is supported only as the identity; the count merge
        # semantics of a second pass are not defined.
        if any(flags.get(i, False) for i in tree.base.nodes):
            raise PrunerError("re-pruning an already pruned tree is not supported")
        return tree
    if flags.get(tree.root, False):
        raise PrunerError("the root post can not be pruned")

    chrono = tree.chrono
    removed = {}
    for i in reversed(chrono):  # children first
        removed[i] = bool(flags.get(i, False)) and all(
            removed[c] for c in tree.children(i)
        )

    retained = [i for i in chrono if not removed[i]]
    retained_set = frozenset(retained)

    # depth of pruned material directly below each retained node
    pruned_levels = {}
    for i in reversed(chrono):
        if removed[i]:
            below = [pruned_levels.get(c, 0) for c in tree.children(i)]
            pruned_levels[i] = 1 + (max(below) if below else 0)

    subtree_size = {}
    for i in reversed(chrono):
        subtree_size[i] = 1 + sum(subtree_size[c] for c in tree.children(i))

    parent = {}
    first_child = {}
    prev_sibling = {}
    next_sibling = {}
    child_levels = {}
    prev_counts = {}
    succ_counts = {}

    for i in retained:
        parent[i] = tree.parent[i]  # parent of a retained node is retained
        kids = [c for c in tree.children(i) if c in retained_set]
        first_child[i] = kids[0] if kids else None
        # Only the pruned run at the head of the children chain is lost to
        # the hierarchical edge; later pruned runs are covered by the
        # sibling-chain counts of their retained neighbors.
        leading = []
        for c in tree.children(i):
            if c in retained_set:
                break
            leading.append(c)
        if leading:
            child_levels[i] = max(pruned_levels[c] for c in leading)

    for i in tree.nodes:
        sibs = tree.children(i)
        kept = [c for c in sibs if c in retained_set]
        for a, b in zip(kept, kept[1:]):
            next_sibling[a] = b
            prev_sibling[b] = a
        if kept:
            prev_sibling.setdefault(kept[0], None)
            next_sibling.setdefault(kept[-1], None)
        # contiguous pruned runs around each retained sibling
        run = 0
        run_nodes = 0
        run_owner = None
        for c in sibs:
            if c in retained_set:
                if run:
                    prev_counts[c] = run
                    if run_owner is not None:
                        succ_counts[run_owner] = run_nodes
                run = 0
                run_nodes = 0
                run_owner = c
            else:
                run += 1
                run_nodes += subtree_size[c]
        if run and run_owner is not None:
            succ_counts[run_owner] = run_nodes

    prev_sibling[tree.root] = None
    next_sibling[tree.root] = None

    return PrunedTree(
        base=tree,
        retained=retained_set,
        pruned=frozenset(i for i in tree.nodes if removed[i]),
        parent=parent,
        first_child=first_child,
        prev_sibling=prev_sibling,
        next_sibling=next_sibling,
        pruned_child_levels=child_levels,
        pruned_prev_siblings=prev_counts,
        pruned_succ_nodes=succ_counts,
        retained_chrono=tuple(retained),
    )


def apply_pruner(
    tree: ThreadTree,
    classifier: LinearPruneClassifier,
    featurizer: Callable[[ThreadTree, str], np.ndarray],
) -> PrunedTree:
    """Flag every non-root comment with the classifier, then prune.

    Testing-time accounting (pruned comments scored as level 0) reads the
    resulting ``pruned`` set.
    """
    flags = {}
    for i in tree.chrono:
        if i == tree.root:
            continue
        flags[i] = bool(classifier.decision(featurizer(tree, i)) > 0.0)
    return prune(tree, flags)


def pruning_report_rows(pruned_trees) -> list:
    """Rows (thread_id, n_total, n_pruned, fraction) for the report CSV;
    the thread id is the root comment id."""
    rows = []
    for pt in pruned_trees:
        rows.append(
            (pt.base.root, len(pt.base.nodes), len(pt.pruned), pt.pruned_fraction())
        )
    return rows
