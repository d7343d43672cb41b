"""Column-wise Pearson correlation and R² shared by the ridge and encoding code."""

from __future__ import annotations

import numpy as np


def pearson_columns(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r between matching columns of two (M, V) matrices.

    Returns (r, degenerate): columns with zero variance in either input get
    r = 0 by convention and True in the degenerate mask.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("need 2-D inputs with at least 2 rows")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    sa = np.sqrt((ac * ac).mean(axis=0))
    sb = np.sqrt((bc * bc).mean(axis=0))
    degenerate = (sa == 0) | (sb == 0)
    denom = np.where(degenerate, 1.0, sa * sb)
    r = (ac * bc).mean(axis=0) / denom
    r[degenerate] = 0.0
    return np.clip(r, -1.0, 1.0), degenerate


def r2_columns(pred: np.ndarray, actual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient of determination 1 - SSE/SST per column (may be negative).

    Columns whose actual values have zero variance get NaN and are flagged.
    """
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {actual.shape}")
    resid = actual - pred
    sse = (resid * resid).sum(axis=0)
    centered = actual - actual.mean(axis=0)
    sst = (centered * centered).sum(axis=0)
    degenerate = sst == 0
    r2 = 1.0 - sse / np.where(degenerate, 1.0, sst)
    r2[degenerate] = np.nan
    return r2, degenerate
