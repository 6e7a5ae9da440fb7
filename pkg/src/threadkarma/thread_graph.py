"""Discussion threads as timestamped trees with sibling-order pointers.

A thread is a tree of comments rooted at the original post. Besides the
usual parent pointer, every node carries temporal pointers that chain the
children of a common parent in contribution order: earliest child,
predecessor sibling, successor sibling. The model's propagation passes
walk exactly these four pointers, so they are materialized once at build
time and never mutated afterwards.

Threads are interchanged as JSON Lines, one comment object per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional


class ThreadError(ValueError):
    """Raised when thread records violate structural requirements."""


@dataclass(frozen=True)
class CommentRecord:
    """One comment (or the original post, which has no parent)."""

    id: str
    parent_id: Optional[str]
    author_id: str
    created_utc: int
    text: str
    karma: int


def _chrono_key(rec: CommentRecord) -> tuple:
    # Timestamp ties are broken lexicographically by id for determinism.
    return (rec.created_utc, rec.id)


@dataclass(frozen=True)
class ThreadTree:
    """Immutable thread: comment records plus the four pointer maps.

    ``parent`` / ``first_child`` hold the hierarchical structure,
    ``prev_sibling`` / ``next_sibling`` the temporal structure among the
    children of a common parent. ``chrono`` is the global contribution
    order, keyed by (created_utc, id). Treat all fields as read-only.
    """

    nodes: dict
    root: str
    parent: dict
    first_child: dict
    prev_sibling: dict
    next_sibling: dict
    children_map: dict
    chrono: tuple

    def children(self, node_id: str) -> tuple:
        """Children of ``node_id`` in contribution order."""
        return self.children_map[node_id]

    def __len__(self) -> int:
        return len(self.nodes)


def build_tree(records: Iterable[CommentRecord]) -> ThreadTree:
    """Assemble a ThreadTree from comment records.

    Raises ThreadError for: duplicate ids, missing root, multiple roots,
    a parent_id that names no record, or a comment that does not follow
    its parent in (created_utc, id) order. The last check is what makes
    the contribution order a valid propagation schedule.
    """
    nodes: dict = {}
    roots = []
    for rec in records:
        if rec.id in nodes:
            raise ThreadError(f"duplicate comment id {rec.id!r}")
        nodes[rec.id] = rec
        if rec.parent_id is None:
            roots.append(rec.id)
    if not roots:
        raise ThreadError("missing root: no record has parent_id null")
    if len(roots) > 1:
        raise ThreadError("multiple roots: " + ", ".join(repr(r) for r in sorted(roots)))
    root = roots[0]

    for rec in nodes.values():
        if rec.parent_id is not None:
            if rec.parent_id not in nodes:
                raise ThreadError(
                    f"dangling parent_id {rec.parent_id!r} for comment {rec.id!r}"
                )
            if _chrono_key(nodes[rec.parent_id]) >= _chrono_key(rec):
                raise ThreadError(
                    f"comment {rec.id!r} does not follow its parent "
                    f"{rec.parent_id!r} in time order"
                )

    chrono = tuple(sorted(nodes, key=lambda i: _chrono_key(nodes[i])))

    children_map: dict = {i: [] for i in nodes}
    for i in chrono:
        pid = nodes[i].parent_id
        if pid is not None:
            children_map[pid].append(i)
    children_map = {i: tuple(c) for i, c in children_map.items()}

    parent = {i: nodes[i].parent_id for i in nodes}
    first_child = {i: (c[0] if c else None) for i, c in children_map.items()}
    prev_sibling = {i: None for i in nodes}
    next_sibling = {i: None for i in nodes}
    for c in children_map.values():
        for a, b in zip(c, c[1:]):
            next_sibling[a] = b
            prev_sibling[b] = a

    return ThreadTree(
        nodes=nodes,
        root=root,
        parent=parent,
        first_child=first_child,
        prev_sibling=prev_sibling,
        next_sibling=next_sibling,
        children_map=children_map,
        chrono=chrono,
    )


def forward_order(tree: ThreadTree) -> list:
    """Processing order for the ancestor-side pass.

    Contribution order works: a comment's parent and its predecessor
    sibling are both earlier in time, so they always appear first.
    """
    return list(tree.chrono)


def backward_order(tree: ThreadTree) -> list:
    """Processing order for the descendant-side pass: reverse contribution
    order, so every node's earliest child and successor sibling come first."""
    return list(reversed(tree.chrono))


_FIELDS = ("id", "parent_id", "author_id", "created_utc", "text", "karma")
_STR_FIELDS = ("id", "author_id", "text")
_INT_FIELDS = ("created_utc", "karma")


def _record_from_obj(obj, where: str) -> CommentRecord:
    if not isinstance(obj, dict):
        raise ThreadError(f"{where}: expected a JSON object")
    extra = sorted(set(obj) - set(_FIELDS))
    missing = sorted(set(_FIELDS) - set(obj))
    if extra or missing:
        parts = []
        if missing:
            parts.append("missing fields: " + ", ".join(missing))
        if extra:
            parts.append("unexpected fields: " + ", ".join(extra))
        raise ThreadError(f"{where}: " + "; ".join(parts))
    for f in _STR_FIELDS:
        if not isinstance(obj[f], str):
            raise ThreadError(f"{where}: field {f!r} must be a string")
    for f in _INT_FIELDS:
        if isinstance(obj[f], bool) or not isinstance(obj[f], int):
            raise ThreadError(f"{where}: field {f!r} must be an integer")
    if obj["parent_id"] is not None and not isinstance(obj["parent_id"], str):
        raise ThreadError(f"{where}: field 'parent_id' must be a string or null")
    return CommentRecord(**obj)


def parse_thread_jsonl(stream: Iterable[str]) -> ThreadTree:
    """Parse one thread from an iterable of JSON lines."""
    records = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ThreadError(f"line {lineno}: malformed JSON ({e.msg})") from e
        records.append(_record_from_obj(obj, f"line {lineno}"))
    return build_tree(records)


def serialize_thread(tree: ThreadTree, stream: IO[str]) -> None:
    """Write the thread as JSON lines in contribution order."""
    for i in tree.chrono:
        rec = tree.nodes[i]
        obj = {f: getattr(rec, f) for f in _FIELDS}
        stream.write(json.dumps(obj, ensure_ascii=False, sort_keys=True))
        stream.write("\n")


def load_thread(path) -> ThreadTree:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_thread_jsonl(fh)


def dump_thread(tree: ThreadTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_thread(tree, fh)


def load_corpus(directory) -> list:
    """Load every ``*.jsonl`` thread under ``directory``, sorted by filename."""
    import os

    names = sorted(n for n in os.listdir(directory) if n.endswith(".jsonl"))
    return [load_thread(os.path.join(directory, n)) for n in names]


def iter_comments(tree: ThreadTree) -> Iterator[CommentRecord]:
    """All non-root comments in contribution order."""
    for i in tree.chrono:
        if i != tree.root:
            yield tree.nodes[i]
