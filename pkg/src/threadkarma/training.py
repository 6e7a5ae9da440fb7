"""Loss, exact reverse-mode gradients, adadelta updates, and the loop.

Gradients are derived by hand: the per-thread loss is backpropagated
through the softmax head, then through the descendant-side pass in
contribution order and the ancestor-side pass in reverse contribution
order (each the reverse of its own processing order), and finally into
the touched embedding rows. A finite-difference harness (``gradcheck``)
validates every parameter group on random trees, with and without
pruning and text, in both modes.

Updates are per-thread adadelta steps. For reproducible parallelism,
threads are consumed in fixed-size rounds: all gradients of a round are
evaluated against the parameter snapshot taken at its start (possibly by
worker processes), then applied one thread at a time in order. Results
are therefore bit-identical for any worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import evaluation
from .context_features import (
    N_CONTEXT_FEATURES,
    FeatureStandardizer,
    context_matrix,
    fit_standardizer,
)
from .evaluation import KarmaQuantizer, fit_quantizer
from .graph_lstm import (
    MODE_BIDIRECTIONAL,
    MODE_FORWARD_ONLY,
    N_LEVELS,
    CompiledThread,
    GraphLSTMError,
    compile_thread,
    gate_params,
    init_graph_params,
    log_softmax,
    pruned_biases,
    run_backward,
    run_forward,
    softmax,
)
from .baseline_ffnn import init_ffnn_params
from .pruner import LinearPruneClassifier, prune, train_pruner
from .text_features import Vocabulary, build_vocab, comment_rows, load_pretrained
from .thread_graph import ThreadTree

MODEL_KINDS = ("graph_bi", "graph_fwd", "node_indep")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "graph_bi"
    hidden_dims: tuple = (16, 32, 64)
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    rho: float = 0.95
    eps: float = 1e-6
    init_scale: float = 0.08
    use_text: bool = True
    d_emb: int = 100
    min_count: int = 10
    grad_clip: float = 5.0
    pruning: bool = False
    workers: int = 1
    round_size: int = 8
    embeddings_path: Optional[str] = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}")
        if not self.hidden_dims or any(d <= 0 for d in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        self.hidden_dims = tuple(self.hidden_dims)

    @property
    def mode(self) -> str:
        return MODE_FORWARD_ONLY if self.model == "graph_fwd" else MODE_BIDIRECTIONAL

    def fingerprint(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Adadelta
# ---------------------------------------------------------------------------


@dataclass
class AdadeltaState:
    sq_grad: dict
    sq_delta: dict
    rho: float = 0.95
    eps: float = 1e-6

    @classmethod
    def init_like(cls, params: dict, rho: float = 0.95, eps: float = 1e-6) -> "AdadeltaState":
        return cls(
            sq_grad={k: np.zeros_like(v) for k, v in params.items()},
            sq_delta={k: np.zeros_like(v) for k, v in params.items()},
            rho=rho,
            eps=eps,
        )


def adadelta_step(params: dict, grads: dict, state: AdadeltaState):
    """One elementwise adadelta update, in place.

    E[g2] <- rho E[g2] + (1-rho) g2
    dx    <- -sqrt(E[dx2]+eps) / sqrt(E[g2]+eps) * g
    E[dx2]<- rho E[dx2] + (1-rho) dx2
    """
    rho, eps = state.rho, state.eps
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape mismatch for {key}")
        sq = state.sq_grad[key]
        acc = state.sq_delta[key]
        sq *= rho
        sq += (1.0 - rho) * g * g
        delta = -np.sqrt((acc + eps) / (sq + eps)) * g
        acc *= rho
        acc += (1.0 - rho) * delta * delta
        p += delta
    return params, state


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most ``max_norm``."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def thread_loss(pruned, predictions: Mapping[str, np.ndarray], labels: Mapping[str, int]) -> float:
    """Mean cross-entropy over retained non-root comments.

    Pruned comments never enter the loss; they are accounted for at
    evaluation time instead.
    """
    total = 0.0
    count = 0
    for i in pruned.retained_chrono:
        if i == pruned.root:
            continue
        total -= float(np.log(predictions[i][labels[i]]))
        count += 1
    if count == 0:
        return 0.0
    return total / count


def node_inputs(compiled: CompiledThread, params: dict, use_text: bool) -> np.ndarray:
    """Model input rows: standardized context, plus the averaged comment
    embedding when text is on."""
    if compiled.context is None:
        raise GraphLSTMError("compiled thread carries no context features")
    if not use_text:
        return compiled.context
    if compiled.token_rows is None:
        raise GraphLSTMError("compiled thread carries no token rows")
    emb = params["emb"]
    text = np.zeros((len(compiled), emb.shape[1]))
    for k, rows in enumerate(compiled.token_rows):
        if len(rows):
            text[k] = emb[rows].mean(axis=0)
    return np.hstack([compiled.context, text])


@dataclass
class _Forward:
    X: np.ndarray
    label_rows: np.ndarray
    labels: np.ndarray
    Z: Optional[np.ndarray]
    log_probs: Optional[np.ndarray]
    loss: float
    h_fwd: Optional[np.ndarray] = None
    cache_fwd: Optional[object] = None
    h_bwd: Optional[np.ndarray] = None
    cache_bwd: Optional[object] = None
    hidden: Optional[np.ndarray] = None  # baseline tanh layer


def _graph_forward(compiled, params, config: TrainConfig, want_cache: bool) -> _Forward:
    X = node_inputs(compiled, params, config.use_text)
    gates_f = gate_params(params, "fwd")
    biases = pruned_biases(params)
    Hf, Cf, cf = run_forward(compiled, X, gates_f, biases, want_cache)
    Hb = cb = None
    if config.mode == MODE_BIDIRECTIONAL:
        gates_b = gate_params(params, "bwd")
        Hb, Cb, cb = run_backward(compiled, X, gates_b, biases, want_cache)
    label_rows = np.where(compiled.labels >= 0)[0]
    labels = compiled.labels[label_rows]
    if len(label_rows) == 0:
        return _Forward(X, label_rows, labels, None, None, 0.0, Hf, cf, Hb, cb)
    Z = Hf[label_rows] if Hb is None else np.hstack([Hf[label_rows], Hb[label_rows]])
    log_probs = log_softmax(Z @ params["head"].T)
    loss = -float(log_probs[np.arange(len(labels)), labels].mean())
    return _Forward(X, label_rows, labels, Z, log_probs, loss, Hf, cf, Hb, cb)


def _baseline_forward(compiled, params, config: TrainConfig) -> _Forward:
    X = node_inputs(compiled, params, config.use_text)
    label_rows = np.where(compiled.labels >= 0)[0]
    labels = compiled.labels[label_rows]
    if len(label_rows) == 0:
        return _Forward(X, label_rows, labels, None, None, 0.0)
    Xl = X[label_rows]
    hidden = np.tanh(Xl @ params["w_hidden"].T + params["b_hidden"])
    log_probs = log_softmax(hidden @ params["head"].T)
    loss = -float(log_probs[np.arange(len(labels)), labels].mean())
    fwd = _Forward(X, label_rows, labels, Xl, log_probs, loss)
    fwd.hidden = hidden
    return fwd


def model_loss(compiled: CompiledThread, params: dict, config: TrainConfig) -> float:
    """Thread cross-entropy under the configured model, from raw params."""
    if compiled.labels is None:
        raise TrainingError("compiled thread carries no labels")
    if config.model == "node_indep":
        return _baseline_forward(compiled, params, config).loss
    return _graph_forward(compiled, params, config, want_cache=False).loss


def _backprop_pass(
    grads: dict,
    side: str,
    gates,
    cache,
    X,
    dH,
    dC,
    dX,
    time_ptr,
    hier_ptr,
    time_counts,
    hier_counts,
    time_bias_key,
    hier_bias_key,
    order,
) -> None:
    d = gates.d_h
    dW = grads[f"{side}.w_in"]
    dU = grads[f"{side}.u_time"]
    dV = grads[f"{side}.v_hier"]
    db = grads[f"{side}.bias"]
    da = np.empty(5 * d)
    for k in order:
        dh = dH[k]
        tc = cache.tanh_c[k]
        go = cache.gate_o[k]
        dc = dC[k] + dh * go * (1.0 - tc * tc)
        gi = cache.gate_i[k]
        gf = cache.gate_f[k]
        gg = cache.gate_g[k]
        do = dh * tc
        da[:d] = dc * cache.candidate[k] * gi * (1.0 - gi)
        da[d : 2 * d] = dc * cache.c_time[k] * gf * (1.0 - gf)
        da[2 * d : 3 * d] = dc * cache.c_hier[k] * gg * (1.0 - gg)
        da[3 * d : 4 * d] = dc * gi
        da[4 * d :] = do * go * (1.0 - go)
        dW += np.outer(da, X[k])
        dU += np.outer(da, cache.h_time[k])
        dV += np.outer(da, cache.h_hier[k])
        db += da
        dX[k] += gates.w_in.T @ da
        dht = gates.u_time.T @ da
        dhh = gates.v_hier.T @ da
        tp = time_ptr[k]
        if tp >= 0:
            dH[tp] += dht
            dC[tp] += dc * gf
        if time_counts[k]:
            grads[time_bias_key] += time_counts[k] * dht
        hp = hier_ptr[k]
        if hp >= 0:
            dH[hp] += dhh
            dC[hp] += dc * gg
        if hier_counts is not None and hier_counts[k]:
            grads[hier_bias_key] += hier_counts[k] * dhh


def gradients(compiled: CompiledThread, params: dict, config: TrainConfig):
    """Exact reverse-mode derivatives of the thread loss.

    Returns ``(loss, grads)`` where ``grads`` has the same keys and
    shapes as ``params``; parameters the loss never touches (e.g. the
    descendant-side set in forward-only mode) get exact zeros.
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    if config.model == "node_indep":
        fwd = _baseline_forward(compiled, params, config)
        if len(fwd.label_rows) == 0:
            return 0.0, grads
        m = len(fwd.labels)
        dlogits = np.exp(fwd.log_probs)
        dlogits[np.arange(m), fwd.labels] -= 1.0
        dlogits /= m
        grads["head"] += dlogits.T @ fwd.hidden
        dhid = (dlogits @ params["head"]) * (1.0 - fwd.hidden * fwd.hidden)
        grads["w_hidden"] += dhid.T @ fwd.Z  # fwd.Z holds the input rows here
        grads["b_hidden"] += dhid.sum(axis=0)
        dX_rows = dhid @ params["w_hidden"]
        if config.use_text:
            _scatter_text_grads(grads, compiled, dX_rows, fwd.label_rows)
        _check_finite(grads, fwd.loss)
        return fwd.loss, grads

    fwd = _graph_forward(compiled, params, config, want_cache=True)
    if len(fwd.label_rows) == 0:
        return 0.0, grads
    n = len(compiled)
    d_h = params["fwd.u_time"].shape[1]
    m = len(fwd.labels)
    dlogits = np.exp(fwd.log_probs)
    dlogits[np.arange(m), fwd.labels] -= 1.0
    dlogits /= m
    grads["head"] += dlogits.T @ fwd.Z
    dZ = dlogits @ params["head"]

    dX = np.zeros_like(fwd.X)
    dHf = np.zeros((n, d_h))
    dCf = np.zeros((n, d_h))
    dHf[fwd.label_rows] += dZ[:, :d_h]
    if config.mode == MODE_BIDIRECTIONAL:
        dHb = np.zeros((n, d_h))
        dCb = np.zeros((n, d_h))
        dHb[fwd.label_rows] += dZ[:, d_h:]
        # reverse of the descendant-side processing order = contribution order
        _backprop_pass(
            grads,
            "bwd",
            gate_params(params, "bwd"),
            fwd.cache_bwd,
            fwd.X,
            dHb,
            dCb,
            dX,
            compiled.next_sib,
            compiled.first_child,
            compiled.n_pruned_succ,
            compiled.n_pruned_child,
            "bias_pruned_succ",
            "bias_pruned_child",
            range(n),
        )
    _backprop_pass(
        grads,
        "fwd",
        gate_params(params, "fwd"),
        fwd.cache_fwd,
        fwd.X,
        dHf,
        dCf,
        dX,
        compiled.prev_sib,
        compiled.parent,
        compiled.n_pruned_prev,
        None,
        "bias_pruned_prev",
        None,
        range(n - 1, -1, -1),
    )
    if config.use_text:
        _scatter_text_grads(grads, compiled, dX, np.arange(n))
    _check_finite(grads, fwd.loss)
    return fwd.loss, grads


def _scatter_text_grads(grads, compiled, dX_rows, rows) -> None:
    demb = grads["emb"]
    d_ctx = compiled.context.shape[1]
    for r, k in enumerate(rows):
        token_rows = compiled.token_rows[k]
        if len(token_rows):
            np.add.at(demb, token_rows, dX_rows[r, d_ctx:] / len(token_rows))


def _check_finite(grads: dict, loss: float) -> None:
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {key}")


# ---------------------------------------------------------------------------
# Corpus preparation
# ---------------------------------------------------------------------------


@dataclass
class Artifacts:
    """Everything fitted on the training split besides model parameters."""

    quantizer: KarmaQuantizer
    standardizer: FeatureStandardizer
    vocab: Optional[Vocabulary]
    pruner: Optional[LinearPruneClassifier]


def fit_artifacts(train_threads: Sequence[ThreadTree], config: TrainConfig) -> Artifacts:
    karma = [t.nodes[i].karma for t in train_threads for i in t.chrono if i != t.root]
    quantizer = fit_quantizer(karma)

    rows = []
    levels = []
    for t in train_threads:
        ids, mat = context_matrix(t)
        for i, row in zip(ids, mat):
            if i != t.root:
                rows.append(row)
                levels.append(quantizer.level(t.nodes[i].karma))
    standardizer = fit_standardizer(np.array(rows))

    vocab = None
    if config.use_text:
        corpus = (t.nodes[i].text for t in train_threads for i in t.chrono)
        vocab = build_vocab(corpus, min_count=config.min_count)

    clf = None
    if config.pruning:
        clf = train_pruner(
            standardizer.apply(np.array(rows)), np.array(levels), seed=config.seed
        )
    return Artifacts(quantizer=quantizer, standardizer=standardizer, vocab=vocab, pruner=clf)


def prepare_thread(tree: ThreadTree, artifacts: Artifacts, config: TrainConfig) -> CompiledThread:
    """Featurize, optionally prune, and index one thread for the model."""
    ids, mat = context_matrix(tree)
    std = artifacts.standardizer.apply(mat)
    ctx = {i: std[k] for k, i in enumerate(ids)}
    flags = {}
    if artifacts.pruner is not None:
        dec = artifacts.pruner.decision(std)
        flags = {i: bool(dec[k] > 0.0) for k, i in enumerate(ids) if i != tree.root}
    pruned = prune(tree, flags)
    rows = None
    if config.use_text:
        rows = {i: comment_rows(tree.nodes[i].text, artifacts.vocab) for i in ids}
    labels = {
        i: artifacts.quantizer.level(tree.nodes[i].karma) for i in ids if i != tree.root
    }
    return compile_thread(pruned, context=ctx, token_rows=rows, labels=labels)


def prepare_corpus(threads, artifacts, config) -> list:
    return [prepare_thread(t, artifacts, config) for t in threads]


def predict_compiled(compiled: CompiledThread, params: dict, config: TrainConfig):
    """Distributions for the labeled retained comments of one thread.

    Returns ``(comment_ids, probs)``; pruned comments are not included
    here (they are deterministic level 0, see ``compiled.pruned_ids``).
    """
    if config.model == "node_indep":
        fwd = _baseline_forward(compiled, params, config)
    else:
        fwd = _graph_forward(compiled, params, config, want_cache=False)
    ids = [compiled.node_ids[k] for k in fwd.label_rows]
    probs = np.exp(fwd.log_probs) if fwd.log_probs is not None else np.zeros((0, N_LEVELS))
    return ids, probs


def _dev_scores(compiled_list, params, config) -> tuple:
    y_true = []
    y_pred = []
    for compiled in compiled_list:
        fwd = (
            _baseline_forward(compiled, params, config)
            if config.model == "node_indep"
            else _graph_forward(compiled, params, config, want_cache=False)
        )
        if len(fwd.label_rows):
            y_true.extend(int(v) for v in fwd.labels)
            y_pred.extend(int(v) for v in fwd.log_probs.argmax(axis=1))
        if compiled.pruned_labels is not None and len(compiled.pruned_labels):
            y_true.extend(int(v) for v in compiled.pruned_labels)
            y_pred.extend(0 for _ in compiled.pruned_labels)
    if not y_true:
        return 0.0, 0.0
    return evaluation.macro_f1(y_true, y_pred), evaluation.weighted_f1(y_true, y_pred)


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    d_h: int
    config: TrainConfig
    artifacts: Artifacts
    log_rows: list
    dev_macro_f1: float
    dev_weighted_f1: float
    best_epoch: int

    def checkpoint_meta(self) -> dict:
        meta = {
            "mode": self.config.mode,
            "use_text": self.config.use_text,
            "d_h": self.d_h,
            "d_ctx": N_CONTEXT_FEATURES,
            "d_emb": self.config.d_emb if self.config.use_text else 0,
            "vocab_sha256": self.artifacts.vocab.sha256() if self.artifacts.vocab else None,
            "config_fingerprint": self.config.fingerprint(),
            "standardizer": self.artifacts.standardizer.to_json_obj(),
            "pruner": self.artifacts.pruner.to_json_obj() if self.artifacts.pruner else None,
        }
        return meta


def _grad_task(args):
    compiled, params, config = args
    return gradients(compiled, params, config)


def _init_params(rng, d_h, config: TrainConfig, vocab_size: int) -> dict:
    d_emb = config.d_emb if config.use_text else 0
    if config.model == "node_indep":
        return init_ffnn_params(
            rng, d_h, N_CONTEXT_FEATURES, vocab_size, d_emb, config.init_scale
        )
    return init_graph_params(
        rng, d_h, N_CONTEXT_FEATURES, config.mode, vocab_size, d_emb, config.init_scale
    )


def _fit_candidate(compiled_train, compiled_dev, config, d_h, vocab, executor):
    rng = np.random.default_rng((config.seed, d_h))
    params = _init_params(rng, d_h, config, len(vocab) if vocab else 0)
    if config.use_text and config.embeddings_path:
        params["emb"] = load_pretrained(
            config.embeddings_path,
            vocab,
            config.d_emb,
            rng=np.random.default_rng((config.seed, d_h, 7777)),
            scale=config.init_scale,
        )
    state = AdadeltaState.init_like(params, config.rho, config.eps)

    best = {"weighted": -1.0, "macro": 0.0, "epoch": 0, "params": None}
    stale = 0
    log_rows = []
    n = len(compiled_train)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.round_size):
            chunk = order[start : start + config.round_size]
            snapshot = {k: v.copy() for k, v in params.items()}
            tasks = [(compiled_train[j], snapshot, config) for j in chunk]
            if executor is not None:
                results = list(executor.map(_grad_task, tasks))
            else:
                results = [_grad_task(t) for t in tasks]
            for loss, grads in results:
                if not np.isfinite(loss):
                    raise TrainingError(f"divergent loss at epoch {epoch}")
                clip_gradients(grads, config.grad_clip)
                adadelta_step(params, grads, state)
                losses.append(loss)
        train_loss = float(np.mean(losses)) if losses else 0.0
        macro, weighted = _dev_scores(compiled_dev, params, config)
        log_rows.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "dev_macro_f1": macro,
                "dev_weighted_f1": weighted,
                "seconds": time.perf_counter() - t0,
            }
        )
        if weighted > best["weighted"]:
            best = {
                "weighted": weighted,
                "macro": macro,
                "epoch": epoch,
                "params": {k: v.copy() for k, v in params.items()},
            }
            stale = 0
        else:
            stale += 1
        if stale >= config.patience:
            break
    if best["params"] is None:  # dev never scored (e.g. empty dev labels)
        best["params"] = params
    return best, log_rows


def train(train_threads, dev_threads, config: TrainConfig) -> TrainResult:
    """Fit the configured model, tuning the hidden dimension on dev.

    Deterministic for a given config and seed, whatever the worker count.
    """
    if not train_threads or not dev_threads:
        raise TrainingError("training and development splits must be non-empty")
    artifacts = fit_artifacts(train_threads, config)
    compiled_train = prepare_corpus(train_threads, artifacts, config)
    compiled_dev = prepare_corpus(dev_threads, artifacts, config)

    executor = None
    best_overall = None
    best_rows = []
    all_rows = []
    try:
        if config.workers > 1:
            executor = ProcessPoolExecutor(max_workers=config.workers)
        for d_h in config.hidden_dims:
            best, rows = _fit_candidate(
                compiled_train, compiled_dev, config, d_h, artifacts.vocab, executor
            )
            all_rows.extend(rows)
            if best_overall is None or best["weighted"] > best_overall[0]["weighted"]:
                best_overall = (best, d_h)
                best_rows = rows
    finally:
        if executor is not None:
            executor.shutdown()

    best, d_h = best_overall
    return TrainResult(
        params=best["params"],
        d_h=d_h,
        config=config,
        artifacts=artifacts,
        log_rows=all_rows,
        dev_macro_f1=best["macro"],
        dev_weighted_f1=best["weighted"],
        best_epoch=best["epoch"],
    )


def log_csv(rows) -> str:
    lines = ["epoch,train_loss,dev_macro_f1,dev_weighted_f1,seconds"]
    for r in rows:
        lines.append(
            f"{r['epoch']},{r['train_loss']!r},{r['dev_macro_f1']!r},"
            f"{r['dev_weighted_f1']!r},{r['seconds']:.3f}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    trials: int
    tolerance: float
    group_errors: dict
    max_rel_error: float
    passed: bool
    seconds: float

    def lines(self) -> list:
        out = [f"gradcheck: {self.trials} random configurations"]
        for key in sorted(self.group_errors):
            out.append(f"  {key:24s} max rel err {self.group_errors[key]:.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        out.append(
            f"overall max rel err {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.0e}) {verdict}"
        )
        return out


def _random_compiled(trng: np.random.Generator, use_text: bool, with_pruning: bool, vocab_size: int):
    from .thread_graph import CommentRecord, build_tree

    n = int(trng.integers(3, 13))
    records = [
        CommentRecord(
            id=f"n{i:02d}",
            parent_id=None if i == 0 else f"n{int(trng.integers(0, i)):02d}",
            author_id=f"u{int(trng.integers(0, 4))}",
            created_utc=i * 60,
            text="",
            karma=int(trng.integers(-3, 40)),
        )
        for i in range(n)
    ]
    tree = build_tree(records)
    flags = {}
    if with_pruning:
        flags = {i: bool(trng.random() < 0.4) for i in tree.chrono if i != tree.root}
        flags[tree.chrono[1]] = False  # keep at least one scored comment
    pruned = prune(tree, flags)
    context = {i: trng.normal(size=N_CONTEXT_FEATURES) for i in tree.chrono}
    token_rows = None
    if use_text:
        token_rows = {
            i: trng.integers(0, vocab_size, size=int(trng.integers(0, 7)))
            for i in tree.chrono
        }
    labels = {i: int(trng.integers(0, N_LEVELS)) for i in tree.chrono if i != tree.root}
    return compile_thread(pruned, context=context, token_rows=token_rows, labels=labels)


def gradcheck(
    trials: int = 50,
    seed: int = 0,
    step: float = 1e-4,
    tolerance: float = 1e-5,
    max_coords_per_group: int = 150,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences on
    random trees, pruning masks, dimensions, modes, and text settings.

    Large parameter groups are checked on a seeded random subset of
    coordinates; small groups exhaustively. Relative error is
    |a - b| / max(1, |a|, |b|).
    """
    t0 = time.perf_counter()
    group_errors: dict = {}
    vocab_size = 9
    d_emb = 4
    for trial in range(trials):
        trng = np.random.default_rng((seed, trial))
        use_text = bool(trng.integers(0, 2))
        with_pruning = bool(trng.integers(0, 2))
        model = "graph_fwd" if trng.integers(0, 2) else "graph_bi"
        d_h = int(trng.choice([2, 4, 8]))
        compiled = _random_compiled(trng, use_text, with_pruning, vocab_size)
        config = TrainConfig(
            model=model,
            hidden_dims=(d_h,),
            use_text=use_text,
            d_emb=d_emb,
            epochs=1,
        )
        params = init_graph_params(
            trng,
            d_h,
            N_CONTEXT_FEATURES,
            config.mode,
            vocab_size=vocab_size,
            d_emb=d_emb if use_text else 0,
            scale=0.3,
        )
        _, grads = gradients(compiled, params, config)
        for key, arr in params.items():
            size = arr.size
            if size <= max_coords_per_group:
                coords = np.arange(size)
            else:
                coords = trng.choice(size, size=max_coords_per_group, replace=False)
            flat = arr.reshape(-1)
            gflat = grads[key].reshape(-1)
            for idx in coords:
                old = flat[idx]
                flat[idx] = old + step
                up = model_loss(compiled, params, config)
                flat[idx] = old - step
                down = model_loss(compiled, params, config)
                flat[idx] = old
                fd = (up - down) / (2.0 * step)
                a = gflat[idx]
                rel = abs(a - fd) / max(1.0, abs(a), abs(fd))
                group_errors[key] = max(group_errors.get(key, 0.0), rel)
    max_err = max(group_errors.values()) if group_errors else 0.0
    return GradCheckReport(
        trials=trials,
        tolerance=tolerance,
        group_errors=group_errors,
        max_rel_error=max_err,
        passed=max_err < tolerance,
        seconds=time.perf_counter() - t0,
    )
