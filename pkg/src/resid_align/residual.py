"""Linear removal of a low-level feature from a representation matrix.

A ridge map from the (standardized) low-level feature to the (standardized)
representation is cross-validated on the training stories only; the residual
representation minus its feature-predicted part is emitted for all rows and
inherits the representation's metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import FeatureMatrix, ValidationError, subset_story_offsets
from .ridge import RidgeModel, bootstrap_ridge, predict
from .temporal import zscore_split


@dataclass(eq=False)
class RemovalRecord:
    """What was removed from what, with the fitted map and per-column variance
    explained on the training rows (in (-inf, 1])."""

    feature_name: str
    representation_name: str
    model: RidgeModel
    variance_explained: np.ndarray
    residual_name: str


def concat_features(features: list[FeatureMatrix], name: str) -> FeatureMatrix:
    """Column-wise concatenation into a single removal design; all inputs must
    share row count, sampling kind, and story offsets."""
    if not features:
        raise ValidationError("need at least one feature to concatenate")
    first = features[0]
    for fm in features[1:]:
        if fm.n_rows != first.n_rows or not np.array_equal(fm.story_offsets, first.story_offsets):
            raise ValidationError(f"feature {fm.name!r} is not aligned with {first.name!r}")
        if fm.sampling.kind != first.sampling.kind:
            raise ValidationError(f"feature {fm.name!r} sampling differs from {first.name!r}")
    values = np.hstack([fm.values for fm in features])
    return FeatureMatrix(name=name, values=values, sampling=first.sampling,
                         story_offsets=first.story_offsets.copy())


def remove_feature(L: FeatureMatrix, W: FeatureMatrix, grid, split: np.ndarray,
                   seed: int = 0, n_boots: int = 50, chunk_len: int = 40,
                   holdout_frac: float = 0.2) -> tuple[FeatureMatrix, RemovalRecord]:
    """Residualize W against L: fit L -> W by bootstrap ridge on the train rows
    (both split-standardized), subtract the predicted part everywhere.

    The split must be whole contiguous stories; an underdetermined removal
    (feature dimension >= row count) is refused.
    """
    if L.n_rows != W.n_rows or not np.array_equal(L.story_offsets, W.story_offsets):
        raise ValidationError(f"{L.name!r} and {W.name!r} are not row-aligned")
    if L.dim >= L.n_rows:
        raise ValidationError(f"removal design {L.name!r} has {L.dim} columns for "
                              f"{L.n_rows} rows (underdetermined)")
    split = np.asarray(split, dtype=bool)
    Lz = zscore_split(L.values, split)
    Wz = zscore_split(W.values, split)
    train_offsets = subset_story_offsets(L.story_offsets, L.n_rows, split)
    model = bootstrap_ridge(Lz.values[split], Wz.values[split], grid, n_boots=n_boots,
                            chunk_len=chunk_len, holdout_frac=holdout_frac, seed=seed,
                            story_offsets=train_offsets)
    resid_z = Wz.values - predict(model, Lz.values)
    resid_train = resid_z[split]
    variance_explained = 1.0 - resid_train.var(axis=0) / np.where(
        Wz.degenerate["train"], 1.0, Wz.values[split].var(axis=0))
    variance_explained[Wz.degenerate["train"]] = 0.0
    # Undo the target standardization so removal composes: the residual keeps
    # W's scale (it is re-standardized downstream anyway) and removing the
    # same feature again is an exact no-op.
    residual = np.empty_like(resid_z)
    residual[split] = resid_z[split] * np.where(Wz.degenerate["train"], 1.0, Wz.train_std)
    residual[~split] = resid_z[~split] * np.where(Wz.degenerate["test"], 1.0, Wz.test_std)
    residual_name = f"{W.name}_minus_{L.name}"
    record = RemovalRecord(feature_name=L.name, representation_name=W.name, model=model,
                           variance_explained=variance_explained, residual_name=residual_name)
    return W.with_values(residual, name=residual_name), record
