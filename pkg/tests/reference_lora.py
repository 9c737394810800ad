"""Independently coded vanilla federated LoRA (two-factor) trainer.

Used as the trajectory oracle: the main package run in fedavg mode with
the core pinned at the identity must reproduce this loop parameter for
parameter.  Only numpy is used; nothing is imported from the package.
"""

import numpy as np


def softmax_xent_grad(logits, labels):
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return grad / n


def run_reference(P, W, A0, B0, client_data, seeds, rounds, epochs, batch_size, lr):
    """Federated vanilla-LoRA SGD with sample-count FedAvg.

    client_data: list of (X_raw, y); seeds[i][t] seeds client i's shuffle
    at round t.  Returns the per-client (A, B) after the last round's
    aggregation broadcast.
    """
    m = len(client_data)
    A = [A0.copy() for _ in range(m)]
    B = [B0.copy() for _ in range(m)]
    counts = np.array([len(y) for _, y in client_data], dtype=float)
    for t in range(rounds):
        for i, (X_raw, y) in enumerate(client_data):
            H_all = np.tanh(X_raw @ P)
            n = len(y)
            rng = np.random.default_rng(seeds[i][t])
            for _ in range(epochs):
                order = rng.permutation(n)
                for start in range(0, n, batch_size):
                    idx = order[start : start + batch_size]
                    H = H_all[idx]
                    logits = H @ W + (H @ A[i]) @ B[i]
                    G = softmax_xent_grad(logits, y[idx])
                    dA = H.T @ (G @ B[i].T)
                    dB = A[i].T @ (H.T @ G)
                    A[i] = A[i] - lr * dA
                    B[i] = B[i] - lr * dB
        total = counts.sum()
        bar_A = sum(counts[i] * A[i] for i in range(m)) / total
        bar_B = sum(counts[i] * B[i] for i in range(m)) / total
        A = [bar_A.copy() for _ in range(m)]
        B = [bar_B.copy() for _ in range(m)]
    return A, B
