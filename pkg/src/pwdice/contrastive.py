"""InfoNCE reachability embeddings with a PSD bilinear score.

Scores are ``L[i, j] = g(s_i)^T W g(s'_j)`` with ``W = softplus(W0) softplus(W0)^T``.
Each row of ``L`` is a B-way classification whose correct label is ``i``.
Gradients are analytic; no autodiff framework is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .data import TransitionDataset


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class Encoder:
    """State embedding ``g``.

    Tabular states use an embedding table (``table[s]``); feature-vector states
    use an affine map ``features @ weight + bias``.
    """

    table: np.ndarray | None = None
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if (self.table is None) == (self.weight is None):
            raise ValueError("give exactly one of an embedding table or an affine weight")
        if self.weight is not None and self.bias is None:
            self.bias = np.zeros(self.weight.shape[1])

    @property
    def dim(self) -> int:
        return (self.table if self.table is not None else self.weight).shape[1]

    def encode(self, states) -> np.ndarray:
        if self.table is not None:
            return self.table[np.asarray(states, dtype=int)]
        return np.asarray(states, dtype=float) @ self.weight + self.bias

    def all_embeddings(self, features: np.ndarray | None = None) -> np.ndarray:
        if self.table is not None:
            return self.table
        if features is None:
            raise ValueError("an affine encoder needs state features")
        return self.encode(features)

    def params(self) -> list:
        return [self.table] if self.table is not None else [self.weight, self.bias]

    def copy(self) -> "Encoder":
        if self.table is not None:
            return Encoder(table=self.table.copy())
        return Encoder(weight=self.weight.copy(), bias=self.bias.copy())


def effective_W(W0: np.ndarray) -> np.ndarray:
    sp = softplus(W0)
    return sp @ sp.T


def infonce_loss_and_grad(encoder: Encoder, W0: np.ndarray, batch, W: np.ndarray | None = None):
    """Mean cross-entropy of the B-way score rows, with analytic gradients.

    ``batch`` is an array of shape (B, 2) of (s, s') pairs for a tabular
    encoder, or a pair ``(X, X_next)`` of (B, n) feature arrays. Passing ``W``
    holds the bilinear matrix fixed (no gradient for ``W0``).

    Returns
    -------
    loss : float
    grads : dict with ``"encoder"`` (list matching ``encoder.params()``) and ``"W0"``.
    """
    if encoder.table is not None:
        pairs = np.asarray(batch, dtype=int)
        x, x_next = pairs[:, 0], pairs[:, 1]
    else:
        x, x_next = (np.asarray(b, dtype=float) for b in batch)
    B = len(x)
    if B < 2:
        raise ValueError("InfoNCE needs a batch of at least 2 pairs")
    fixed = W is not None
    if not fixed:
        sp = softplus(W0)
        W = sp @ sp.T
    Q = encoder.encode(x)
    K = encoder.encode(x_next)
    L = Q @ W @ K.T
    logp = log_softmax(L, axis=1)
    loss = -np.mean(np.diag(logp))

    G = softmax(L, axis=1)
    G[np.arange(B), np.arange(B)] -= 1.0
    G /= B
    dQ = G @ K @ W.T
    dK = G.T @ Q @ W

    if encoder.table is not None:
        d_table = np.zeros_like(encoder.table)
        np.add.at(d_table, x, dQ)
        np.add.at(d_table, x_next, dK)
        enc_grads = [d_table]
    else:
        enc_grads = [x.T @ dQ + x_next.T @ dK, dQ.sum(axis=0) + dK.sum(axis=0)]

    if fixed:
        dW0 = np.zeros_like(W0)
    else:
        dW = Q.T @ G @ K
        dsp = (dW + dW.T) @ sp
        dW0 = dsp * expit(W0)
    return float(loss), {"encoder": enc_grads, "W0": dW0}


def tabular_infonce_from_counts(table: np.ndarray, W0: np.ndarray, counts: np.ndarray):
    """InfoNCE over a tabular batch summarised by pair counts.

    ``counts[s, t]`` is the number of (s, t) pairs in the batch. Every score
    depends only on the state pair, so this equals
    :func:`infonce_loss_and_grad` on the expanded batch at O(S^2 M) cost.
    Returns ``(loss, d_table, dW0)``.
    """
    B = counts.sum()
    if B < 2:
        raise ValueError("InfoNCE needs a batch of at least 2 pairs")
    sp = softplus(W0)
    W = sp @ sp.T
    scores = table @ W @ table.T
    rows = counts.sum(axis=1)
    keys = counts.sum(axis=0)
    present = keys > 0
    z = scores[:, present] + np.log(keys[present])
    lse = np.logaddexp.reduce(z, axis=1)
    loss = (rows @ lse - np.sum(counts * scores)) / B

    probs = np.zeros_like(scores)
    probs[:, present] = np.exp(z - lse[:, None])
    dS = (rows[:, None] * probs - counts) / B
    d_table = dS @ table @ W.T + dS.T @ table @ W
    dW = table.T @ dS @ table
    dW0 = ((dW + dW.T) @ sp) * expit(W0)
    return float(loss), d_table, dW0


def initial_W0(dim: int, mode: str = "identity") -> np.ndarray:
    """Raw bilinear parameter at initialisation.

    ``"zeros"`` gives ``softplus(W0)`` constant, hence a rank-one ``W``;
    ``"identity"`` gives ``softplus(W0) ~= I`` (off-diagonal softplus(-6)).
    """
    if mode == "zeros":
        return np.zeros((dim, dim))
    if mode == "identity":
        # softplus^-1(1) = log(e - 1)
        return np.full((dim, dim), -6.0) + np.eye(dim) * (6.0 + np.log(np.e - 1.0))
    raise ValueError(f"unknown W0 init {mode!r}")


@dataclass
class ContrastiveConfig:
    dim: int = 32
    epochs: int = 200
    batch_size: int | None = None
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    init_scale: float = 0.1
    w0_init: str = "identity"
    seed: int = 0


@dataclass
class TrainingResult:
    encoder: Encoder
    W0: np.ndarray
    losses: list = field(default_factory=list)


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_embedding(dataset: TransitionDataset, num_states: int, config: ContrastiveConfig | None = None,
                    features: np.ndarray | None = None) -> TrainingResult:
    """Fit an encoder so consecutive states (s, s') score high against in-batch negatives.

    Actions in ``dataset`` are ignored. With ``features`` (shape (S, n)) an
    affine encoder is trained on state features instead of a table.
    """
    config = config or ContrastiveConfig()
    rng = np.random.default_rng(config.seed)
    pairs = np.stack([dataset.states, dataset.next_states], axis=1)
    n = len(pairs)
    if features is None:
        encoder = Encoder(table=config.init_scale * rng.standard_normal((num_states, config.dim)))
    else:
        features = np.asarray(features, dtype=float)
        encoder = Encoder(weight=config.init_scale * rng.standard_normal((features.shape[1], config.dim)))
    W0 = initial_W0(config.dim, config.w0_init)
    batch_size = config.batch_size or min(4096, n)
    full_batch = batch_size >= n

    params = encoder.params() + [W0]
    opt = _Adam(params, config.learning_rate) if config.optimizer == "adam" else None
    losses = []
    for epoch in range(config.epochs):
        order = np.arange(n) if full_batch else rng.permutation(n)
        epoch_loss, count = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if idx.size < 2:
                continue
            if features is None:
                counts = np.zeros((num_states, num_states))
                np.add.at(counts, (pairs[idx, 0], pairs[idx, 1]), 1.0)
                loss, d_table, dW0 = tabular_infonce_from_counts(encoder.table, W0, counts)
                grad_list = [d_table, dW0]
            else:
                batch = (features[pairs[idx, 0]], features[pairs[idx, 1]])
                loss, grads = infonce_loss_and_grad(encoder, W0, batch)
                grad_list = grads["encoder"] + [grads["W0"]]
            if not np.isfinite(loss):
                raise FloatingPointError(f"InfoNCE loss diverged at epoch {epoch}; trace={losses[-5:]}")
            if opt is not None:
                opt.step(params, grad_list)
            else:
                for p, g in zip(params, grad_list):
                    p -= config.learning_rate * g
            epoch_loss += loss * idx.size
            count += idx.size
        losses.append(epoch_loss / max(count, 1))
    return TrainingResult(encoder, W0, losses)


def embedding_cost(encoder: Encoder, beta: float, features: np.ndarray | None = None) -> np.ndarray:
    """``beta * ||g(s_i) - g(s_j)||^2`` over all state pairs."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    G = encoder.all_embeddings(features)
    sq = np.sum(G ** 2, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * G @ G.T
    D = np.maximum(D, 0.0)
    np.fill_diagonal(D, 0.0)
    D = 0.5 * (D + D.T)
    return beta * D


def save_encoder(encoder: Encoder, W0: np.ndarray, path) -> None:
    if encoder.table is None:
        raise ValueError("only table encoders serialise to the embedding JSON format")
    doc = {"dim": encoder.dim, "embeddings": encoder.table.tolist(), "W0": W0.tolist()}
    Path(path).write_text(json.dumps(doc))


def load_encoder(path):
    doc = json.loads(Path(path).read_text())
    table = np.asarray(doc["embeddings"], dtype=float)
    if table.shape[1] != doc["dim"]:
        raise ValueError("embedding width disagrees with declared dim")
    return Encoder(table=table), np.asarray(doc["W0"], dtype=float)
