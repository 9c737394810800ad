"""Client-local fine-tuning: frozen featurizer + tri-LoRA adapted layers
trained with mini-batch SGD on cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter as ad
from .errors import DataError, ShapeMismatchError


@dataclass
class Featurizer:
    """Frozen seeded random projection + tanh, standing in for a frozen
    encoder.  Its outputs feed both the trainable head and the GMM fits."""

    P: np.ndarray  # d_raw x d

    @classmethod
    def create(cls, d_raw: int, d: int, seed) -> "Featurizer":
        rng = np.random.default_rng(seed)
        P = rng.standard_normal((d_raw, d)) / np.sqrt(d_raw)
        P.setflags(write=False)
        return cls(P=P)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.P.shape[0]:
            raise ShapeMismatchError(
                f"featurizer expects (n, {self.P.shape[0]}), got {X.shape}"
            )
        return np.tanh(X @ self.P)


@dataclass
class LocalModel:
    """Frozen featurizer plus an ordered stack of adapted linear layers.

    Hidden layers (all but the last) are d -> d with a tanh nonlinearity;
    the last layer is the d -> num_classes classification head.
    """

    featurizer: Featurizer
    layers: list[ad.TriLoRAAdapter]
    num_classes: int

    def logits(self, X_raw: np.ndarray) -> np.ndarray:
        h = self.featurizer(X_raw)
        for i, layer in enumerate(self.layers):
            z = ad.forward(layer, h)
            h = np.tanh(z) if i < len(self.layers) - 1 else z
        return h

    def copy(self) -> "LocalModel":
        return LocalModel(self.featurizer, [l.copy() for l in self.layers], self.num_classes)


@dataclass
class TrainConfig:
    epochs_per_round: int
    batch_size: int
    learning_rate: float
    seed: int
    # Which factors SGD updates; baselines pin subsets (e.g. FFA freezes A,
    # vanilla federated LoRA pins C at the identity).
    train_a: bool = True
    train_b: bool = True
    train_c: bool = True

    def __post_init__(self):
        if self.epochs_per_round < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("invalid training hyperparameters")


@dataclass
class LocalFitResult:
    final_loss: float
    train_accuracy: float
    model: LocalModel


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / n, using a
    log-sum-exp shifted by the row max for stability.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatchError(f"labels shape {labels.shape} != ({n},)")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DataError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - logz[:, None])
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def _forward_cached(model: LocalModel, X_raw):
    """Forward pass keeping each layer's input for backprop."""
    h = model.featurizer(X_raw)
    inputs = []
    for i, layer in enumerate(model.layers):
        inputs.append(h)
        z = ad.forward(layer, h)
        h = np.tanh(z) if i < len(model.layers) - 1 else z
    return h, inputs


def _sgd_step(model: LocalModel, X_raw, y, cfg: TrainConfig):
    logits, inputs = _forward_cached(model, X_raw)
    loss, G = cross_entropy_loss(logits, y)
    # Backprop layer by layer; hidden layers carry a tanh whose output is
    # recomputable from the next layer's cached input.
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        grads = ad.backward(layer, inputs[i], G)
        if i > 0:
            G_in = ad.input_gradient(layer, G)
        if cfg.train_a:
            layer.A -= cfg.learning_rate * grads.dA
        if cfg.train_c:
            layer.C -= cfg.learning_rate * grads.dC
        if cfg.train_b:
            layer.B -= cfg.learning_rate * grads.dB
        if i > 0:
            h = inputs[i]  # tanh output of layer i-1
            G = G_in * (1.0 - h * h)
    return loss


def local_finetune(model: LocalModel, X_raw, y, c_bar_prev, cfg: TrainConfig) -> LocalFitResult:
    """Run one round of local SGD, resuming A and B and re-initializing C.

    ``c_bar_prev`` is the per-layer aggregate received from the server, or
    None on the bootstrap round (C then keeps its current local value).
    The model is updated in place.
    """
    X_raw = np.asarray(X_raw, dtype=np.float64)
    y = np.asarray(y)
    n = X_raw.shape[0]
    if n == 0:
        raise DataError("client shard is empty")
    if c_bar_prev is not None:
        if len(c_bar_prev) != len(model.layers):
            raise ShapeMismatchError("c_bar_prev layer count mismatch")
        for layer, c_bar in zip(model.layers, c_bar_prev):
            if c_bar.shape != layer.C.shape:
                raise ShapeMismatchError("c_bar_prev shape mismatch")
            layer.C = np.array(c_bar, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs_per_round):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _sgd_step(model, X_raw[idx], y[idx], cfg)
    # Final loss is the deterministic full-pass loss, so a zero-rate round
    # reports exactly the evaluation loss.
    metrics = evaluate(model, X_raw, y)
    return LocalFitResult(
        final_loss=metrics["loss"], train_accuracy=metrics["accuracy"], model=model
    )


def evaluate(model: LocalModel, X_raw, y) -> dict:
    """Deterministic full-pass loss/accuracy; mutates nothing."""
    X_raw = np.asarray(X_raw, dtype=np.float64)
    y = np.asarray(y)
    if X_raw.shape[0] == 0:
        raise DataError("cannot evaluate on an empty dataset")
    logits = model.logits(X_raw)
    loss, _ = cross_entropy_loss(logits, y)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
    return {"loss": loss, "accuracy": accuracy}
