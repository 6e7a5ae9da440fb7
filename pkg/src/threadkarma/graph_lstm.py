"""The dual-recursion LSTM over a (possibly pruned) thread tree.

Each comment is one LSTM unit with two forget gates: one over the
previous sibling in time, one over the parent. The ancestor-side pass
walks contribution order, feeding every node its predecessor sibling's
and parent's states; the descendant-side pass walks the reverse order,
substituting successor sibling and earliest child. Where material was
pruned away, learned bias vectors scaled by the pruned counts stand in
for the missing hidden-state contributions (hidden states only, never
cell states).

A linear softmax head over the concatenated direction states (or the
ancestor-side state alone in forward-only mode) yields the 8-level
distribution.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .pruner import PrunedTree

N_GATES = 5  # input, time-forget, hier-forget, candidate, output
N_LEVELS = 8

MODE_BIDIRECTIONAL = "bidirectional"
MODE_FORWARD_ONLY = "forward_only"
MODES = (MODE_BIDIRECTIONAL, MODE_FORWARD_ONLY)


class GraphLSTMError(ValueError):
    pass


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class GateParams:
    """One direction's gate parameters, rows stacked gate-major.

    Row blocks of size d_h, in order: input gate, time-forget gate,
    hier-forget gate, candidate, output gate.
    """

    w_in: np.ndarray  # (5*d_h, d_x)
    u_time: np.ndarray  # (5*d_h, d_h)
    v_hier: np.ndarray  # (5*d_h, d_h)
    bias: np.ndarray  # (5*d_h,)

    @property
    def d_h(self) -> int:
        return self.u_time.shape[1]

    @property
    def d_x(self) -> int:
        return self.w_in.shape[1]

    def gate_rows(self, name: str) -> slice:
        k = "ifgco".index(name)
        return slice(k * self.d_h, (k + 1) * self.d_h)


@dataclass
class PrunedBiases:
    """Stand-ins for pruned hidden-state inputs, scaled by pruned counts."""

    prev_siblings: np.ndarray  # temporal input, ancestor-side pass
    succ_siblings: np.ndarray  # temporal input, descendant-side pass
    child_levels: np.ndarray  # hierarchical input, descendant-side pass

    @classmethod
    def zeros(cls, d_h: int) -> "PrunedBiases":
        return cls(np.zeros(d_h), np.zeros(d_h), np.zeros(d_h))


@dataclass
class SoftmaxHead:
    """Bias-free linear map from state vectors to the 8 level logits."""

    matrix: np.ndarray  # (8, 2*d_h) bidirectional, (8, d_h) forward-only


def cell(x, h_time, c_time, h_hier, c_hier, gates: GateParams):
    """One LSTM unit update; absent predecessors enter as zero vectors.

    The candidate is a plain affine combination (not squashed); the cell
    state mixes it with both remembered states through the two forget
    gates, and the hidden state is the gated tanh of the cell.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (gates.d_x,):
        raise GraphLSTMError(f"input has shape {x.shape}, expected ({gates.d_x},)")
    for name, v in (("h_time", h_time), ("c_time", c_time), ("h_hier", h_hier), ("c_hier", c_hier)):
        if np.shape(v) != (gates.d_h,):
            raise GraphLSTMError(f"{name} has shape {np.shape(v)}, expected ({gates.d_h},)")
    a = gates.w_in @ x + gates.u_time @ h_time + gates.v_hier @ h_hier + gates.bias
    d = gates.d_h
    i = _sigmoid(a[:d])
    f = _sigmoid(a[d : 2 * d])
    g = _sigmoid(a[2 * d : 3 * d])
    c_cand = a[3 * d : 4 * d]
    o = _sigmoid(a[4 * d :])
    c = f * c_time + g * c_hier + i * c_cand
    h = o * np.tanh(c)
    return h, c


@dataclass
class CompiledThread:
    """Index form of a pruned thread, ready for the propagation passes.

    ``node_ids`` lists retained nodes (root first) in contribution order;
    pointer arrays hold row indices, -1 for absent. Optional model inputs
    ride along for the training path.
    """

    node_ids: tuple
    parent: np.ndarray
    prev_sib: np.ndarray
    next_sib: np.ndarray
    first_child: np.ndarray
    n_pruned_prev: np.ndarray
    n_pruned_succ: np.ndarray
    n_pruned_child: np.ndarray
    pruned_ids: tuple
    context: Optional[np.ndarray] = None
    token_rows: Optional[tuple] = None
    labels: Optional[np.ndarray] = None
    pruned_labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.node_ids)


def compile_thread(
    pruned: PrunedTree,
    context: Optional[Mapping[str, np.ndarray]] = None,
    token_rows: Optional[Mapping[str, np.ndarray]] = None,
    labels: Optional[Mapping[str, int]] = None,
) -> CompiledThread:
    ids = pruned.retained_chrono
    index = {i: k for k, i in enumerate(ids)}
    n = len(ids)

    def ptr(mapping):
        out = np.full(n, -1, dtype=np.int64)
        for k, i in enumerate(ids):
            j = mapping.get(i)
            if j is not None:
                out[k] = index[j]
        return out

    def counts(mapping):
        out = np.zeros(n, dtype=np.int64)
        for k, i in enumerate(ids):
            out[k] = mapping.get(i, 0)
        return out

    ctx = None
    if context is not None:
        try:
            ctx = np.stack([np.asarray(context[i], dtype=np.float64) for i in ids])
        except KeyError as e:
            raise GraphLSTMError(f"missing input vector for comment {e.args[0]!r}") from e
    rows = None
    if token_rows is not None:
        try:
            rows = tuple(np.asarray(token_rows[i], dtype=np.int64) for i in ids)
        except KeyError as e:
            raise GraphLSTMError(f"missing token rows for comment {e.args[0]!r}") from e
    lab = None
    pruned_lab = None
    pruned_ids = tuple(sorted(pruned.pruned, key=lambda i: pruned.base.chrono.index(i)))
    if labels is not None:
        lab = np.array(
            [-1 if i == pruned.root else int(labels[i]) for i in ids], dtype=np.int64
        )
        pruned_lab = np.array([int(labels[i]) for i in pruned_ids], dtype=np.int64)

    return CompiledThread(
        node_ids=ids,
        parent=ptr(pruned.parent),
        prev_sib=ptr(pruned.prev_sibling),
        next_sib=ptr(pruned.next_sibling),
        first_child=ptr(pruned.first_child),
        n_pruned_prev=counts(pruned.pruned_prev_siblings),
        n_pruned_succ=counts(pruned.pruned_succ_nodes),
        n_pruned_child=counts(pruned.pruned_child_levels),
        pruned_ids=pruned_ids,
        context=ctx,
        token_rows=rows,
        labels=lab,
        pruned_labels=pruned_lab,
    )


@dataclass
class PassCache:
    """Per-node intermediates of one pass, kept for reverse-mode needs."""

    h_time: np.ndarray
    c_time: np.ndarray
    h_hier: np.ndarray
    c_hier: np.ndarray
    gate_i: np.ndarray
    gate_f: np.ndarray
    gate_g: np.ndarray
    gate_o: np.ndarray
    candidate: np.ndarray
    tanh_c: np.ndarray


def _run_pass(
    X: np.ndarray,
    gates: GateParams,
    time_ptr: np.ndarray,
    hier_ptr: np.ndarray,
    time_counts: np.ndarray,
    hier_counts: Optional[np.ndarray],
    time_bias: np.ndarray,
    hier_bias: Optional[np.ndarray],
    order,
    want_cache: bool = False,
):
    n = X.shape[0]
    d = gates.d_h
    H = np.zeros((n, d))
    C = np.zeros((n, d))
    cache = None
    if want_cache:
        cache = PassCache(*(np.zeros((n, d)) for _ in range(10)))
    zero = np.zeros(d)
    for k in order:
        tp = time_ptr[k]
        h_t = H[tp] if tp >= 0 else zero
        if time_counts[k]:
            h_t = h_t + time_counts[k] * time_bias
        c_t = C[tp] if tp >= 0 else zero
        hp = hier_ptr[k]
        h_h = H[hp] if hp >= 0 else zero
        if hier_counts is not None and hier_counts[k]:
            h_h = h_h + hier_counts[k] * hier_bias
        c_h = C[hp] if hp >= 0 else zero

        a = gates.w_in @ X[k] + gates.u_time @ h_t + gates.v_hier @ h_h + gates.bias
        gi = _sigmoid(a[:d])
        gf = _sigmoid(a[d : 2 * d])
        gg = _sigmoid(a[2 * d : 3 * d])
        cand = a[3 * d : 4 * d]
        go = _sigmoid(a[4 * d :])
        c = gf * c_t + gg * c_h + gi * cand
        tc = np.tanh(c)
        H[k] = go * tc
        C[k] = c
        if want_cache:
            cache.h_time[k] = h_t
            cache.c_time[k] = c_t
            cache.h_hier[k] = h_h
            cache.c_hier[k] = c_h
            cache.gate_i[k] = gi
            cache.gate_f[k] = gf
            cache.gate_g[k] = gg
            cache.gate_o[k] = go
            cache.candidate[k] = cand
            cache.tanh_c[k] = tc
    return H, C, cache


def run_forward(compiled: CompiledThread, X, gates, biases: PrunedBiases, want_cache=False):
    """Ancestor-side pass in contribution order."""
    return _run_pass(
        X,
        gates,
        compiled.prev_sib,
        compiled.parent,
        compiled.n_pruned_prev,
        None,
        biases.prev_siblings,
        None,
        range(len(compiled)),
        want_cache,
    )


def run_backward(compiled: CompiledThread, X, gates, biases: PrunedBiases, want_cache=False):
    """Descendant-side pass in reverse contribution order."""
    return _run_pass(
        X,
        gates,
        compiled.next_sib,
        compiled.first_child,
        compiled.n_pruned_succ,
        compiled.n_pruned_child,
        biases.succ_siblings,
        biases.child_levels,
        range(len(compiled) - 1, -1, -1),
        want_cache,
    )


@dataclass
class StateCache:
    """Per-node state vectors of both directions for one thread."""

    node_ids: tuple
    index: dict
    h_fwd: Optional[np.ndarray] = None
    c_fwd: Optional[np.ndarray] = None
    h_bwd: Optional[np.ndarray] = None
    c_bwd: Optional[np.ndarray] = None

    @classmethod
    def for_thread(cls, compiled: CompiledThread) -> "StateCache":
        return cls(
            node_ids=compiled.node_ids,
            index={i: k for k, i in enumerate(compiled.node_ids)},
        )


def _gather_inputs(compiled: CompiledThread, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
    try:
        return np.stack([np.asarray(inputs[i], dtype=np.float64) for i in compiled.node_ids])
    except KeyError as e:
        raise GraphLSTMError(f"missing input vector for comment {e.args[0]!r}") from e


def forward_pass(
    pruned: PrunedTree,
    inputs: Mapping[str, np.ndarray],
    params: GateParams,
    biases: Optional[PrunedBiases] = None,
    cache: Optional[StateCache] = None,
) -> StateCache:
    """Compute ancestor-side states for every retained node."""
    compiled = compile_thread(pruned)
    if biases is None:
        biases = PrunedBiases.zeros(params.d_h)
    X = _gather_inputs(compiled, inputs)
    H, C, _ = run_forward(compiled, X, params, biases)
    if cache is None:
        cache = StateCache.for_thread(compiled)
    cache.h_fwd, cache.c_fwd = H, C
    return cache


def backward_pass(
    pruned: PrunedTree,
    inputs: Mapping[str, np.ndarray],
    params: GateParams,
    biases: Optional[PrunedBiases] = None,
    cache: Optional[StateCache] = None,
) -> StateCache:
    """Compute descendant-side states for every retained node."""
    compiled = compile_thread(pruned)
    if biases is None:
        biases = PrunedBiases.zeros(params.d_h)
    X = _gather_inputs(compiled, inputs)
    H, C, _ = run_backward(compiled, X, params, biases)
    if cache is None:
        cache = StateCache.for_thread(compiled)
    cache.h_bwd, cache.c_bwd = H, C
    return cache


def predict(
    pruned: PrunedTree,
    states: StateCache,
    head: SoftmaxHead,
    mode: str = MODE_BIDIRECTIONAL,
) -> dict:
    """Level distributions for every non-root comment.

    Retained comments get the softmax of the head applied to their state;
    pruned comments get the deterministic level-0 point mass.
    """
    if mode not in MODES:
        raise GraphLSTMError(f"unknown mode {mode!r}")
    if states.h_fwd is None:
        raise GraphLSTMError("forward states missing")
    if mode == MODE_BIDIRECTIONAL:
        if states.h_bwd is None:
            raise GraphLSTMError("backward states required for bidirectional mode")
        Z = np.hstack([states.h_fwd, states.h_bwd])
    else:
        Z = states.h_fwd
    if head.matrix.shape[1] != Z.shape[1]:
        raise GraphLSTMError(
            f"head expects dim {head.matrix.shape[1]}, states give {Z.shape[1]}"
        )
    out = {}
    root = pruned.root
    probs = softmax(Z @ head.matrix.T)
    for k, node_id in enumerate(states.node_ids):
        if node_id != root:
            out[node_id] = probs[k]
    level0 = np.zeros(N_LEVELS)
    level0[0] = 1.0
    for node_id in pruned.pruned:
        out[node_id] = level0.copy()
    return out


# ---------------------------------------------------------------------------
# Trainable parameter sets and the checkpoint container
# ---------------------------------------------------------------------------

GRAPH_KINDS = ("graph_bi", "graph_fwd")
CHECKPOINT_FORMAT = "threadkarma-checkpoint"
CHECKPOINT_VERSION = 1


def init_graph_params(
    rng: np.random.Generator,
    d_h: int,
    d_ctx: int,
    mode: str,
    vocab_size: int = 0,
    d_emb: int = 0,
    scale: float = 0.08,
) -> dict:
    """Fresh parameter dict, every weight uniform in [-scale, scale].

    Both directions are always allocated; forward-only mode simply never
    reads the descendant-side set, so its gradients stay exactly zero.
    """
    if mode not in MODES:
        raise GraphLSTMError(f"unknown mode {mode!r}")
    d_x = d_ctx + d_emb
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)
    params = {}
    for side in ("fwd", "bwd"):
        params[f"{side}.w_in"] = u(N_GATES * d_h, d_x)
        params[f"{side}.u_time"] = u(N_GATES * d_h, d_h)
        params[f"{side}.v_hier"] = u(N_GATES * d_h, d_h)
        params[f"{side}.bias"] = u(N_GATES * d_h)
    params["bias_pruned_prev"] = u(d_h)
    params["bias_pruned_succ"] = u(d_h)
    params["bias_pruned_child"] = u(d_h)
    z = 2 * d_h if mode == MODE_BIDIRECTIONAL else d_h
    params["head"] = u(N_LEVELS, z)
    if d_emb:
        params["emb"] = u(vocab_size, d_emb)
    return params


def gate_params(params: dict, side: str) -> GateParams:
    return GateParams(
        w_in=params[f"{side}.w_in"],
        u_time=params[f"{side}.u_time"],
        v_hier=params[f"{side}.v_hier"],
        bias=params[f"{side}.bias"],
    )


def pruned_biases(params: dict) -> PrunedBiases:
    return PrunedBiases(
        prev_siblings=params["bias_pruned_prev"],
        succ_siblings=params["bias_pruned_succ"],
        child_levels=params["bias_pruned_child"],
    )


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {
        "shape": list(arr.shape),
        "dtype": "float64",
        "data": base64.b64encode(data).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def encode_params(params: dict) -> dict:
    return {k: _encode_array(v) for k, v in params.items()}

def decode_params(obj: dict) -> dict:
    return {k: _decode_array(v) for k, v in obj.items()}


def save_checkpoint(path, kind: str, params: dict, meta: dict) -> None:
    """Single-file JSON checkpoint: versioned header, model kind tag,
    metadata (dimensions, vocab hash, config fingerprint), and all
    parameter tensors as base64 little-endian float64."""
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "meta": meta,
        "params": encode_params(params),
    }
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)
        fh.write("\n")


def load_checkpoint(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise GraphLSTMError(f"{path} is not a model checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise GraphLSTMError(f"unsupported checkpoint version {obj.get('version')!r}")
    return obj["kind"], decode_params(obj["params"]), obj["meta"]
