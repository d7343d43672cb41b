"""Voxelwise encoding: FIR-expanded stimulus features to voxel responses,
scored by per-voxel Pearson r on the held-out test stories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (ExperimentConfig, FeatureMatrix, ResponseMatrix, ValidationError,
                         derive_seed, dump_json, load_npy, save_npy, subset_story_offsets)
from .metrics import pearson_columns
from .ridge import RidgeModel, bootstrap_ridge, load_ridge_model, predict, save_ridge_model
from .temporal import DelaySpec, fir_expand, zscore_split


@dataclass(eq=False)
class EncodingResult:
    """Per-voxel test correlation for one (subject, modality, feature) job."""

    subject_id: str
    modality: str
    feature_name: str
    r: np.ndarray  # (n_voxels,) in [-1, 1]
    degenerate: np.ndarray  # voxels where r = 0 is a convention, not a measurement
    model: RidgeModel | None
    test_predictions: np.ndarray  # (n_test_rows, n_voxels)

    @property
    def n_voxels(self) -> int:
        return self.r.size


def pearson_per_voxel(pred: np.ndarray, actual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r per column; zero-variance columns get r = 0 and a flag."""
    return pearson_columns(pred, actual)


def fit_encoding(X: FeatureMatrix, Y: ResponseMatrix, config: ExperimentConfig) -> EncodingResult:
    """Standard encoding pipeline: split-wise z-scoring of features and
    responses, FIR delay expansion, bootstrap ridge on the training stories,
    then per-voxel Pearson r of the test-story predictions."""
    if X.sampling.kind != "per_TR":
        raise ValidationError(f"{X.name!r}: encoding features must be per-TR")
    if X.n_rows != Y.n_trs or not np.array_equal(X.story_offsets, Y.story_offsets):
        raise ValidationError(f"{X.name!r} and {Y.subject_id}/{Y.modality} are not row-aligned")
    split = Y.train_mask
    if not split.any() or split.all():
        raise ValidationError(f"{Y.subject_id}/{Y.modality}: need both train and test stories")
    Xz = zscore_split(X.values, split)
    Yz = zscore_split(Y.values, split)
    design = fir_expand(Xz.values, DelaySpec(tuple(config.delays)), X.story_offsets)
    train_offsets = subset_story_offsets(X.story_offsets, X.n_rows, split)
    seed = derive_seed(config.rng_seed, "encode", X.name, Y.subject_id, Y.modality)
    model = bootstrap_ridge(design[split], Yz.values[split], config.lambda_grid,
                            n_boots=config.ridge.n_boots, chunk_len=config.ridge.chunk_len,
                            holdout_frac=config.ridge.holdout_frac, seed=seed,
                            story_offsets=train_offsets)
    pred = predict(model, design[~split])
    r, degenerate = pearson_per_voxel(pred, Yz.values[~split])
    return EncodingResult(subject_id=Y.subject_id, modality=Y.modality, feature_name=X.name,
                          r=r, degenerate=degenerate, model=model, test_predictions=pred)


def percent_decrease(before: EncodingResult, after: EncodingResult,
                     eps: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel percentage drop 100*(r_before - r_after)/r_before, capped at
    100; voxels with r_before <= eps are undefined (NaN) and flagged."""
    if (before.subject_id, before.modality, before.n_voxels) != \
            (after.subject_id, after.modality, after.n_voxels):
        raise ValidationError("percent_decrease needs matching subject/modality/voxels")
    defined = before.r > eps
    pct = np.full(before.r.shape, np.nan)
    pct[defined] = 100.0 * (before.r[defined] - after.r[defined]) / before.r[defined]
    pct[defined] = np.minimum(pct[defined], 100.0)
    return pct, ~defined


# ---------------------------------------------------------------------------
# Persistence (arrays + JSON summary)
# ---------------------------------------------------------------------------

def save_encoding_result(result: EncodingResult, directory: str | Path, name: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_npy(result.r, directory / f"{name}.r.npy")
    save_npy(result.test_predictions, directory / f"{name}.pred.npy")
    if result.model is not None:
        save_ridge_model(result.model, directory, f"{name}.model")
    meta = {
        "kind": "encoding_result",
        "subject_id": result.subject_id,
        "modality": result.modality,
        "feature_name": result.feature_name,
        "degenerate": [int(i) for i in np.flatnonzero(result.degenerate)],
        "mean_r": float(np.mean(result.r)),
    }
    dump_json(meta, directory / f"{name}.meta.json")


def load_encoding_result(directory: str | Path, name: str,
                         with_model: bool = False) -> EncodingResult:
    directory = Path(directory)
    import json

    with open(directory / f"{name}.meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    r = load_npy(directory / f"{name}.r.npy")
    pred = load_npy(directory / f"{name}.pred.npy")
    degenerate = np.zeros(r.size, dtype=bool)
    degenerate[meta["degenerate"]] = True
    model = load_ridge_model(directory, f"{name}.model") if with_model else None
    return EncodingResult(subject_id=meta["subject_id"], modality=meta["modality"],
                          feature_name=meta["feature_name"], r=r, degenerate=degenerate,
                          model=model, test_predictions=pred)
