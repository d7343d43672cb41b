"""Regularized least-squares engine.

Single-penalty solves run through one economy SVD of the design matrix so a
penalty sweep reuses the factorization; bootstrap cross-validation holds out
contiguous row chunks (never crossing story boundaries) to pick a penalty per
target column, then refits on all rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import (FeatureMatrix, contiguous_blocks, dump_json, load_npy, named_rng,
                         save_npy, subset_story_offsets)
from .metrics import pearson_columns, r2_columns
from .temporal import zscore_split


def _as_array(X) -> np.ndarray:
    return X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)


@dataclass(eq=False)
class RidgeModel:
    """Fitted coefficients with the per-target penalty and the standardization
    applied to inputs/outputs at fit time (identity when the caller pre-scaled)."""

    weights: np.ndarray  # (dim_in, dim_out)
    lambda_per_target: np.ndarray  # (dim_out,)
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    cv_mean_r: np.ndarray | None = None  # (n_lambdas, dim_out) bootstrap curves
    grid: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.weights).all():
            raise ValueError("ridge weights must be finite")
        if np.any(self.lambda_per_target <= 0):
            raise ValueError("per-target lambdas must be positive")

    @property
    def dim_in(self) -> int:
        return self.weights.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weights.shape[1]


def _identity_model(weights: np.ndarray, lambdas: np.ndarray, **extra) -> RidgeModel:
    d_in, d_out = weights.shape
    return RidgeModel(weights=weights, lambda_per_target=lambdas,
                      x_mean=np.zeros(d_in), x_std=np.ones(d_in),
                      y_mean=np.zeros(d_out), y_std=np.ones(d_out), **extra)


class RidgeSweep:
    """Economy SVD of a design matrix, reused across penalties."""

    def __init__(self, X: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        if not np.isfinite(X).all():
            raise ValueError("design matrix must be finite")
        self.U, self.s, self.Vt = np.linalg.svd(X, full_matrices=False)

    def uty(self, Y: np.ndarray) -> np.ndarray:
        return self.U.T @ Y

    def filter_factors(self, lam: float) -> np.ndarray:
        if lam <= 0:
            raise ValueError("lambda must be positive")
        return self.s / (self.s ** 2 + lam)

    def weights(self, Y: np.ndarray, lam: float, uty: np.ndarray | None = None) -> np.ndarray:
        uty = self.uty(Y) if uty is None else uty
        return self.Vt.T @ (self.filter_factors(lam)[:, None] * uty)


def ridge_fit(X, Y, lam: float) -> RidgeModel:
    """Minimize ||Y - X w||_F^2 + lam ||w||_F^2 via economy SVD.

    Columns are assumed already standardized by the caller (zero-variance
    columns zeroed); the stored standardization is the identity.
    """
    X = _as_array(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if not np.isfinite(Y).all():
        raise ValueError("targets must be finite")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch: X has {X.shape[0]}, Y has {Y.shape[0]}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    sweep = RidgeSweep(X)
    weights = sweep.weights(Y, lam)
    return _identity_model(weights, np.full(Y.shape[1], float(lam)))


def predict(model: RidgeModel, X) -> np.ndarray:
    """Apply stored standardization, then the weights; deterministic."""
    X = _as_array(X)
    if X.ndim != 2 or X.shape[1] != model.dim_in:
        raise ValueError(f"expected (M, {model.dim_in}) input, got {X.shape}")
    std = np.where(model.x_std == 0, 1.0, model.x_std)
    Z = (X - model.x_mean) / std
    return (Z @ model.weights) * model.y_std + model.y_mean


def bootstrap_ridge(X, Y, grid, n_boots: int = 50, chunk_len: int = 40,
                    holdout_frac: float = 0.2, seed: int = 0,
                    story_offsets: np.ndarray | None = None) -> RidgeModel:
    """Per-target penalty selection by chunked bootstrap cross-validation.

    Each iteration holds out randomly chosen contiguous chunks of ``chunk_len``
    rows (chunks never cross story boundaries), scores every grid penalty by
    held-out Pearson r per target, and the per-target penalty maximizing the
    mean r across iterations wins (ties go to the smallest penalty).  The
    returned model is refit on all rows.
    """
    X = _as_array(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if Y.shape[0] != n:
        raise ValueError("X and Y disagree on row count")
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("grid must be non-empty and positive")
    if n <= chunk_len:
        raise ValueError(f"need more than chunk_len={chunk_len} rows, got {n}")
    offsets = np.array([0]) if story_offsets is None else np.asarray(story_offsets, dtype=int)
    blocks = contiguous_blocks(offsets, n, chunk_len)
    n_holdout = min(max(1, round(holdout_frac * len(blocks))), len(blocks) - 1)
    worst = sum(sorted((len(b) for b in blocks), reverse=True)[:n_holdout])
    if n - worst < d / 2:
        raise ValueError(f"holdout would leave {n - worst} training rows for {d} features "
                         f"(need at least {d / 2:g})")

    rng = named_rng(seed, "bootstrap_ridge")
    score_sum = np.zeros((grid.size, Y.shape[1]))
    for _ in range(n_boots):
        chosen = rng.choice(len(blocks), size=n_holdout, replace=False)
        ho_mask = np.zeros(n, dtype=bool)
        for b in chosen:
            ho_mask[blocks[b]] = True
        sweep = RidgeSweep(X[~ho_mask])
        uty = sweep.uty(Y[~ho_mask])
        proj = X[ho_mask] @ sweep.Vt.T  # (n_holdout_rows, rank)
        for i, lam in enumerate(grid):
            pred = proj @ (sweep.filter_factors(lam)[:, None] * uty)
            r, _ = pearson_columns(pred, Y[ho_mask])
            score_sum[i] += r
    cv_mean_r = score_sum / n_boots
    best = np.argmax(cv_mean_r, axis=0)  # first max -> smallest lambda on ties

    sweep = RidgeSweep(X)
    uty = sweep.uty(Y)
    weights = np.empty((d, Y.shape[1]))
    for i in np.unique(best):
        cols = best == i
        weights[:, cols] = sweep.Vt.T @ (sweep.filter_factors(grid[i])[:, None] * uty[:, cols])
    return _identity_model(weights, grid[best], cv_mean_r=cv_mean_r, grid=grid)


@dataclass
class ProbeResult:
    """Held-out R² per probed target column; degenerate targets are NaN."""

    r2: np.ndarray
    degenerate: np.ndarray


def _train_standardize(X: np.ndarray, split: np.ndarray) -> np.ndarray:
    """Apply the training rows' column statistics to every row (one affine map
    for both splits, so exact linear relations stay exact)."""
    mean = X[split].mean(axis=0)
    std = X[split].std(axis=0)
    return (X - mean) / np.where(std == 0, 1.0, std)


def probe_r2(W, L, grid, split: np.ndarray, seed: int = 0, n_boots: int = 15,
             chunk_len: int = 40, holdout_frac: float = 0.2) -> ProbeResult:
    """Ridge-probe a representation: fit W -> L on the train rows, report R²
    per target column on the test rows (1 - SSE/SST, may be negative).

    Both matrices are standardized with the training rows' statistics; targets
    with zero test variance are reported as NaN and flagged.
    """
    W_arr, L_arr = _as_array(W), _as_array(L)
    if W_arr.shape[0] != L_arr.shape[0]:
        raise ValueError("W and L must share n_rows")
    offsets = W.story_offsets if isinstance(W, FeatureMatrix) else np.array([0])
    split = np.asarray(split, dtype=bool)
    Wz = _train_standardize(W_arr, split)
    Lz = _train_standardize(L_arr, split)
    train_offsets = subset_story_offsets(offsets, W_arr.shape[0], split)
    model = bootstrap_ridge(Wz[split], Lz[split], grid, n_boots=n_boots,
                            chunk_len=chunk_len, holdout_frac=holdout_frac, seed=seed,
                            story_offsets=train_offsets)
    pred = predict(model, Wz[~split])
    r2, degenerate = r2_columns(pred, Lz[~split])
    return ProbeResult(r2=r2, degenerate=degenerate)


# ---------------------------------------------------------------------------
# Serialization (NPY + sidecar convention)
# ---------------------------------------------------------------------------

def save_ridge_model(model: RidgeModel, directory: str | Path, name: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_npy(model.weights, directory / f"{name}.weights.npy")
    save_npy(model.lambda_per_target, directory / f"{name}.lambdas.npy")
    save_npy(np.stack([model.x_mean, model.x_std]), directory / f"{name}.x_stats.npy")
    save_npy(np.stack([model.y_mean, model.y_std]), directory / f"{name}.y_stats.npy")
    meta = {"name": name, "kind": "ridge_model",
            "dim_in": model.dim_in, "dim_out": model.dim_out}
    dump_json(meta, directory / f"{name}.meta.json")
    return directory / f"{name}.weights.npy"


def load_ridge_model(directory: str | Path, name: str) -> RidgeModel:
    directory = Path(directory)
    weights = load_npy(directory / f"{name}.weights.npy")
    lambdas = load_npy(directory / f"{name}.lambdas.npy")
    x_stats = load_npy(directory / f"{name}.x_stats.npy")
    y_stats = load_npy(directory / f"{name}.y_stats.npy")
    return RidgeModel(weights=weights, lambda_per_target=lambdas,
                      x_mean=x_stats[0], x_std=x_stats[1],
                      y_mean=y_stats[0], y_std=y_stats[1])
