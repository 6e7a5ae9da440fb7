"""Submission-context features: timing, author, and graph statistics.

Every node gets a fixed-order vector of 15 real features. Conventions
that the tests pin down:

  * times are hours, never negative;
  * ``depth`` counts edges from the root, ``subtree_size`` includes the
    node itself, ``subtree_height`` counts edges below it;
  * ``n_previous`` / ``n_later`` count against the whole thread's
    contribution order;
  * ``author_comment_count`` counts every node by the same author in the
    thread, the node itself and the root included;
  * thread-level normalization of child/subtree counts subtracts the
    thread mean, or divides by sqrt of the descending competition rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .thread_graph import ThreadTree

FEATURE_NAMES = (
    "time_since_root_h",
    "time_since_parent_h",
    "n_later_comments",
    "n_previous_comments",
    "is_original_poster",
    "author_comment_count",
    "depth",
    "n_siblings",
    "n_children",
    "subtree_height",
    "subtree_size",
    "children_norm_mean",
    "children_norm_rank",
    "subtree_size_norm_mean",
    "subtree_size_norm_rank",
)

N_CONTEXT_FEATURES = len(FEATURE_NAMES)


def normalize_mean(values_in_thread: Sequence[float], v: float) -> float:
    """Center ``v`` on the thread mean of its feature."""
    return float(v) - sum(values_in_thread) / len(values_in_thread)


def normalize_rank(values_in_thread: Sequence[float], v: float) -> float:
    """Dampen ``v`` by sqrt of its descending competition rank.

    Rank 1 is the largest value in the thread; ties share the smallest
    rank of their group.
    """
    rank = 1 + sum(1 for u in values_in_thread if u > v)
    return float(v) / math.sqrt(rank)


def context_matrix(tree: ThreadTree) -> tuple:
    """Feature matrix for every node, rows in contribution order.

    Returns ``(node_ids, matrix)`` where ``matrix`` is float64 of shape
    (n, 15). One linear pass each way suffices because the contribution
    order puts parents before children.
    """
    ids = list(tree.chrono)
    n = len(ids)
    pos = {i: k for k, i in enumerate(ids)}
    root = tree.nodes[tree.root]

    depth = np.zeros(n, dtype=np.int64)
    subtree_size = np.ones(n, dtype=np.int64)
    subtree_height = np.zeros(n, dtype=np.int64)
    n_children = np.zeros(n, dtype=np.int64)

    for k, i in enumerate(ids):
        pid = tree.parent[i]
        if pid is not None:
            depth[k] = depth[pos[pid]] + 1
        n_children[k] = len(tree.children(i))

    for k in range(n - 1, -1, -1):
        pid = tree.parent[ids[k]]
        if pid is not None:
            kp = pos[pid]
            subtree_size[kp] += subtree_size[k]
            subtree_height[kp] = max(subtree_height[kp], subtree_height[k] + 1)

    author_counts: dict = {}
    for rec in tree.nodes.values():
        author_counts[rec.author_id] = author_counts.get(rec.author_id, 0) + 1

    child_vals = n_children.astype(np.float64)
    size_vals = subtree_size.astype(np.float64)
    child_mean = child_vals.mean()
    size_mean = size_vals.mean()
    child_sorted = np.sort(child_vals)
    size_sorted = np.sort(size_vals)
    # descending competition rank: 1 + count of strictly larger values
    child_rank = 1 + n - np.searchsorted(child_sorted, child_vals, side="right")
    size_rank = 1 + n - np.searchsorted(size_sorted, size_vals, side="right")

    out = np.zeros((n, N_CONTEXT_FEATURES), dtype=np.float64)
    for k, i in enumerate(ids):
        rec = tree.nodes[i]
        pid = tree.parent[i]
        parent_created = root.created_utc if pid is None else tree.nodes[pid].created_utc
        siblings = 0 if pid is None else len(tree.children(pid)) - 1
        out[k, 0] = (rec.created_utc - root.created_utc) / 3600.0
        out[k, 1] = 0.0 if pid is None else (rec.created_utc - parent_created) / 3600.0
        out[k, 2] = n - 1 - k
        out[k, 3] = k
        out[k, 4] = 1.0 if rec.author_id == root.author_id else 0.0
        out[k, 5] = author_counts[rec.author_id]
        out[k, 6] = depth[k]
        out[k, 7] = siblings
        out[k, 8] = n_children[k]
        out[k, 9] = subtree_height[k]
        out[k, 10] = subtree_size[k]
        out[k, 11] = child_vals[k] - child_mean
        out[k, 12] = child_vals[k] / math.sqrt(child_rank[k])
        out[k, 13] = size_vals[k] - size_mean
        out[k, 14] = size_vals[k] / math.sqrt(size_rank[k])
    return ids, out


def extract_context(tree: ThreadTree, node_id: str) -> np.ndarray:
    """The 15-feature vector of one node (see FEATURE_NAMES for order)."""
    ids, mat = context_matrix(tree)
    return mat[ids.index(node_id)].copy()


@dataclass(frozen=True)
class FeatureStandardizer:
    """Per-dimension z-scoring statistics fitted on training comments."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def to_json_obj(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FeatureStandardizer":
        return cls(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            std=np.asarray(obj["std"], dtype=np.float64),
        )


def fit_standardizer(vectors: np.ndarray) -> FeatureStandardizer:
    """Fit mean/std per dimension; zero-variance dimensions get std 1."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("standardizer needs at least one training vector")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    # relative tolerance so constant-but-large dimensions are caught too
    flat = std <= 1e-9 * np.maximum(1.0, np.abs(mean))
    std = np.where(flat, 1.0, std)
    return FeatureStandardizer(mean=mean, std=std)
