"""Node-independent feedforward baseline and prediction interpolation.

The baseline scores each comment from its own input vector alone:
softmax(W2 tanh(W1 x + b1)), bias-free at the output like the graph
model's head. The interpolation contrast mixes two models' distributions
with a weight tuned on the development set by weighted F1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import weighted_f1
from .graph_lstm import softmax

N_LEVELS = 8

ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass
class FeedforwardParams:
    hidden_weights: np.ndarray  # (d_h, d_x)
    hidden_bias: np.ndarray  # (d_h,)
    output_weights: np.ndarray  # (8, d_h)

    @classmethod
    def from_params(cls, params: dict) -> "FeedforwardParams":
        return cls(
            hidden_weights=params["w_hidden"],
            hidden_bias=params["b_hidden"],
            output_weights=params["head"],
        )


def init_ffnn_params(
    rng: np.random.Generator,
    d_h: int,
    d_ctx: int,
    vocab_size: int = 0,
    d_emb: int = 0,
    scale: float = 0.08,
) -> dict:
    d_x = d_ctx + d_emb
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)
    params = {
        "w_hidden": u(d_h, d_x),
        "b_hidden": u(d_h),
        "head": u(N_LEVELS, d_h),
    }
    if d_emb:
        params["emb"] = u(vocab_size, d_emb)
    return params


def ffnn_predict(x: np.ndarray, params: FeedforwardParams) -> np.ndarray:
    """Level distribution(s) for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    hidden = np.tanh(x @ params.hidden_weights.T + params.hidden_bias)
    return softmax(hidden @ params.output_weights.T)


def interpolate(p_a: np.ndarray, p_b: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * p_a + (1 - alpha) * p_b, still a distribution."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * np.asarray(p_a) + (1.0 - alpha) * np.asarray(p_b)


def tune_alpha(preds_a: np.ndarray, preds_b: np.ndarray, labels) -> float:
    """Grid-search the interpolation weight on dev predictions.

    Maximizes weighted F1 over alpha in {0.0, 0.1, ..., 1.0}; ties go to
    the larger alpha (more weight on the first model).
    """
    preds_a = np.asarray(preds_a, dtype=np.float64)
    preds_b = np.asarray(preds_b, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty development set")
    if preds_a.shape != preds_b.shape or preds_a.shape[0] != len(labels):
        raise ValueError("prediction sets are not aligned")
    best_alpha = 0.0
    best_score = -1.0
    for alpha in ALPHA_GRID:
        mixed = interpolate(preds_a, preds_b, alpha)
        score = weighted_f1(labels, mixed.argmax(axis=1))
        if score >= best_score:
            best_score = score
            best_alpha = alpha
    return best_alpha
