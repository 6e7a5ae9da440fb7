"""Synthetic discussion threads with planted, context-dependent karma.

The generator grows seeded branching-process trees and plants rules that
make graph context genuinely informative:

  * crowd-pleaser comments get high karma, spawn extra replies, and those
    replies tend to contain the praise token;
  * controversial comments spawn even larger subtrees but end below
    karma 1, so models that lean on response volume overpredict them;
    their own marker token is present only part of the time, while the
    *absence* of praise among many replies gives the response side away;
  * early, short follow-ups to a crowd-pleaser get mid-high karma despite
    their small subtrees (the underprediction trap);
  * everything else hovers around zero karma.

Karma is a deterministic function of the seeded role draws, the parent's
role, the realized reply counts, and the position in the thread, so a
model that sees tree context always has strictly more signal than a
node-independent one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .thread_graph import CommentRecord, ThreadTree, build_tree, dump_thread

POPULAR_TOKEN = "popular"
CONTROVERSY_TOKEN = "controversy"
PRAISE_TOKEN = "praise"

FILLER_WORDS = (
    "the", "a", "and", "of", "to", "in", "it", "is", "was", "for",
    "on", "that", "with", "as", "at", "this", "but", "they", "you", "we",
    "not", "have", "had", "one", "all", "out", "up", "so", "what", "when",
    "who", "how", "now", "then", "there", "here", "just", "like", "really", "very",
)

_ROLE_FILLER = 0
_ROLE_POPULAR = 1
_ROLE_CONTROVERSY = 2


@dataclass(frozen=True)
class SynthConfig:
    n_threads: int = 100
    mean_branching: float = 1.7
    branching_decay: float = 0.55
    max_depth: int = 6
    max_children: int = 8
    max_nodes: int = 80
    seed: int = 0
    p_popular: float = 0.10
    p_controversy: float = 0.08
    popular_marker_rate: float = 0.80
    controversy_marker_rate: float = 0.55
    praise_reply_rate: float = 0.80
    child_boost_popular: float = 2.2
    child_boost_controversy: float = 3.2

    def __post_init__(self):
        if self.n_threads < 0 or self.max_depth < 0 or self.max_nodes < 1:
            raise ValueError("sizes must be non-negative (max_nodes >= 1)")
        if self.mean_branching < 0:
            raise ValueError("mean_branching must be non-negative")
        for name in (
            "p_popular",
            "p_controversy",
            "popular_marker_rate",
            "controversy_marker_rate",
            "praise_reply_rate",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _grow_structure(cfg: SynthConfig, rng: np.random.Generator):
    """Branching process: returns parent indices, roles, depths."""
    parents = [-1]
    roles = [_ROLE_FILLER]  # the root post is plain
    depths = [0]
    queue = [0]
    while queue:
        u = queue.pop(0)
        if depths[u] >= cfg.max_depth or len(parents) >= cfg.max_nodes:
            continue
        boost = 1.0
        if roles[u] == _ROLE_POPULAR:
            boost = cfg.child_boost_popular
        elif roles[u] == _ROLE_CONTROVERSY:
            boost = cfg.child_boost_controversy
        lam = cfg.mean_branching * cfg.branching_decay ** depths[u] * boost
        n_kids = min(int(rng.poisson(lam)), cfg.max_children)
        n_kids = min(n_kids, cfg.max_nodes - len(parents))
        for _ in range(n_kids):
            r = rng.random()
            if r < cfg.p_popular:
                role = _ROLE_POPULAR
            elif r < cfg.p_popular + cfg.p_controversy:
                role = _ROLE_CONTROVERSY
            else:
                role = _ROLE_FILLER
            parents.append(u)
            roles.append(role)
            depths.append(depths[u] + 1)
            queue.append(len(parents) - 1)
    return parents, roles, depths


def _chrono_extension(parents, rng: np.random.Generator):
    """Random linear extension of the tree order: a node becomes available
    once its parent has been placed."""
    n = len(parents)
    children = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p >= 0:
            children[p].append(i)
    available = [0]
    order = []
    while available:
        j = int(rng.integers(0, len(available)))
        u = available.pop(j)
        order.append(u)
        available.extend(children[u])
    return order


def _karma(role, parent_role, n_children, chrono_pos, n_total, rng: np.random.Generator) -> int:
    if role == _ROLE_CONTROVERSY:
        return -int(rng.integers(0, 6))
    if role == _ROLE_POPULAR:
        return 18 + 5 * n_children + int(rng.integers(0, 12))
    if parent_role == _ROLE_POPULAR and chrono_pos < 0.4 * n_total and n_children <= 1:
        return 7 + int(rng.integers(0, 5))
    return int(rng.choice([-1, 0, 1, 2, 3], p=[0.15, 0.35, 0.30, 0.15, 0.05]))


def generate_thread(cfg: SynthConfig, rng: np.random.Generator, start_utc: int) -> ThreadTree:
    parents, roles, depths = _grow_structure(cfg, rng)
    order = _chrono_extension(parents, rng)
    n = len(order)
    pos = {u: k for k, u in enumerate(order)}
    ids = {u: f"c{pos[u]:04d}" for u in order}

    stamps = start_utc + np.cumsum(rng.integers(30, 1800, size=n))
    n_children = [0] * len(parents)
    for p in parents:
        if p >= 0:
            n_children[p] += 1

    records = []
    for u in order:
        k = pos[u]
        p = parents[u]
        tokens = list(rng.choice(FILLER_WORDS, size=int(rng.integers(3, 9))))
        role = roles[u]
        if role == _ROLE_POPULAR and rng.random() < cfg.popular_marker_rate:
            tokens.append(POPULAR_TOKEN)
        elif role == _ROLE_CONTROVERSY and rng.random() < cfg.controversy_marker_rate:
            tokens.append(CONTROVERSY_TOKEN)
        if p >= 0 and roles[p] == _ROLE_POPULAR and rng.random() < cfg.praise_reply_rate:
            tokens.append(PRAISE_TOKEN)
        tokens = [tokens[j] for j in rng.permutation(len(tokens))]

        if u == 0:
            author = "op"
            karma = 1
        else:
            author = "op" if rng.random() < 0.08 else f"u{int(rng.integers(0, 24)):02d}"
            karma = _karma(role, roles[p], n_children[u], k, n, rng)
        records.append(
            CommentRecord(
                id=ids[u],
                parent_id=None if p < 0 else ids[p],
                author_id=author,
                created_utc=int(stamps[k]),
                text=" ".join(tokens),
                karma=karma,
            )
        )
    return build_tree(records)


def generate(cfg: SynthConfig) -> list:
    """The full corpus; thread ``t`` is seeded by ``(cfg.seed, t)`` so a
    prefix of the corpus never depends on its total size."""
    threads = []
    for t in range(cfg.n_threads):
        rng = np.random.default_rng((cfg.seed, t))
        threads.append(generate_thread(cfg, rng, start_utc=1_400_000_000 + t * 100_000))
    return threads


def write_corpus(threads, directory) -> list:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, tree in enumerate(threads):
        path = os.path.join(directory, f"thread_{k:05d}.jsonl")
        dump_thread(tree, path)
        paths.append(path)
    return paths
