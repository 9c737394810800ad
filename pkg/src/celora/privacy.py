"""Gradient-inversion harness: reconstruct a hidden input batch from the
gradients an adversary would observe on each communication surface.

The attacker sees the adapter weights, the gradient of the transmitted
factors for one hidden batch, the batch shape, and the labels, and runs
gradient-matching descent on a dummy batch.  Comparing surfaces shows how
much reconstruction the r x r core leaks versus full factor uploads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import adapter as ad
from .adapter import ModelShapeConfig, TriLoRAAdapter
from .errors import DataError
from .training import cross_entropy_loss

SURFACES = ("full_lora", "ffa", "c_only")


def attack_adapter(d, k, r, seed) -> TriLoRAAdapter:
    """Adapter for inversion studies: same layout as ``init_adapter``
    (Gaussian A, identity C, zero B) but permits r = min(d, k).

    The attack deliberately probes tiny output heads where the core is as
    large as the smallest dimension; the training-path constructor rejects
    that regime because it offers no compression.
    """
    if d < 1 or k < 1 or not (1 <= r <= min(d, k)):
        raise DataError(f"need 1 <= r <= min(d, k); got d={d}, k={k}, r={r}")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, k)) / np.sqrt(d)
    A = rng.standard_normal((d, r)) / np.sqrt(r)
    return TriLoRAAdapter(W=W, A=A, C=np.eye(r), B=np.zeros((r, k)))


@dataclass
class AttackConfig:
    surface: str
    steps: int = 200
    attack_lr: float = 0.5
    restarts: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise DataError(f"unknown surface {self.surface!r}")
        if self.steps < 1 or self.attack_lr <= 0 or self.restarts < 1:
            raise DataError("steps, attack_lr and restarts must be positive")


@dataclass
class AttackResult:
    surface: str
    batch_size: int
    reconstructed: np.ndarray
    objective_trace: list[float]
    mse: float
    cosine: float
    failed_restarts: int = 0


def surface_gradients(adapter: TriLoRAAdapter, X, y, surface) -> list[np.ndarray]:
    """Factor gradients visible on the given communication surface."""
    logits = ad.forward(adapter, X)
    _, G = cross_entropy_loss(logits, y)
    grads = ad.backward(adapter, X, G)
    if surface == "full_lora":
        return [grads.dA, grads.dB]
    if surface == "ffa":
        return [grads.dB]
    return [grads.dC]


def gradient_dim(surface: str, cfg: ModelShapeConfig) -> int:
    """Number of observed gradient entries; c_only < ffa < full_lora
    whenever d, k > r."""
    counts = ad.param_counts(cfg)
    return {"full_lora": counts["fedpetuning"], "ffa": counts["ffa"], "c_only": counts["ce_lora"]}[
        surface
    ]


def _objective(adapter, X_dummy, y, target_grads, surface):
    grads = surface_gradients(adapter, X_dummy, y, surface)
    return float(sum(np.sum((g - t) ** 2) for g, t in zip(grads, target_grads)))


def _objective_grad(adapter, X_dummy, y, target_grads, surface, h=1e-6):
    """Central finite differences of the matching objective w.r.t. the
    dummy batch; exact enough at desk scale and surface-agnostic."""
    grad = np.zeros_like(X_dummy)
    it = np.nditer(X_dummy, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = X_dummy[idx]
        X_dummy[idx] = orig + h
        fp = _objective(adapter, X_dummy, y, target_grads, surface)
        X_dummy[idx] = orig - h
        fm = _objective(adapter, X_dummy, y, target_grads, surface)
        X_dummy[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def dlg_attack(adapter: TriLoRAAdapter, target_grads, batch_shape, y, cfg: AttackConfig,
               true_X=None, init=None) -> AttackResult:
    """Gradient-matching reconstruction with backtracking line search.

    ``target_grads`` are the true-batch gradients on the configured
    surface.  ``true_X`` is only used for scoring (mse/cosine), never by
    the optimizer.  The best restart by final objective is reported.
    """
    n, d = batch_shape
    best = None
    failed = 0
    for restart in range(cfg.restarts):
        if init is not None:
            X = np.array(init, dtype=np.float64)
        else:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, restart]))
            X = rng.standard_normal((n, d))
        obj = _objective(adapter, X, y, target_grads, cfg.surface)
        trace = [obj]
        for _ in range(cfg.steps):
            g = _objective_grad(adapter, X, y, target_grads, cfg.surface)
            gnorm2 = float(np.sum(g * g))
            if gnorm2 == 0.0:
                trace.append(obj)
                continue
            step = cfg.attack_lr
            accepted = False
            for _ in range(40):
                X_new = X - step * g
                obj_new = _objective(adapter, X_new, y, target_grads, cfg.surface)
                if np.isfinite(obj_new) and obj_new <= obj - 1e-4 * step * gnorm2:
                    X, obj = X_new, obj_new
                    accepted = True
                    break
                step *= 0.5
            trace.append(obj)
            if not accepted:
                break  # no descent direction at line-search resolution
        if not np.isfinite(obj):
            failed += 1
            continue
        if best is None or obj < best[0]:
            best = (obj, X, trace)
    if best is None:
        raise DataError("all restarts diverged to a non-finite objective")
    _, X, trace = best
    mse = cosine = float("nan")
    if true_X is not None:
        true_X = np.asarray(true_X, dtype=np.float64)
        mse = float(np.mean((X - true_X) ** 2))
        a, b = X.ravel(), true_X.ravel()
        denom = np.linalg.norm(a) * np.linalg.norm(b)
        cosine = float(a @ b / denom) if denom > 0 else 0.0
    return AttackResult(
        surface=cfg.surface,
        batch_size=n,
        reconstructed=X,
        objective_trace=trace,
        mse=mse,
        cosine=cosine,
        failed_restarts=failed,
    )


def attack_report(results: list[AttackResult], seeds: int | None = None) -> list[dict]:
    """Aggregate mean/std of mse and cosine per (surface, batch size)."""
    if not results:
        raise DataError("no attack results to report")
    groups: dict[tuple, list[AttackResult]] = {}
    for res in results:
        groups.setdefault((res.surface, res.batch_size), []).append(res)
    rows = []
    for (surface, batch_size), items in sorted(groups.items()):
        mses = np.array([r.mse for r in items])
        cosines = np.array([r.cosine for r in items])
        rows.append(
            {
                "surface": surface,
                "batch_size": batch_size,
                "mean_mse": float(mses.mean()),
                "std_mse": float(mses.std()),
                "mean_cosine": float(cosines.mean()),
                "std_cosine": float(cosines.std()),
                "seeds": seeds if seeds is not None else len(items),
            }
        )
    return rows


def write_report_csv(rows: list[dict], path):
    fields = ["surface", "batch_size", "mean_mse", "std_mse", "mean_cosine", "std_cosine", "seeds"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
