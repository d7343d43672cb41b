"""Cross-subject prediction accuracy: the per-voxel normalization denominator.

Each subject is predicted from every subset of the remaining subjects (subset
sizes s-1 for participant counts s in [2..n]) through the standard encoding
pipeline with the concatenated other-subject voxel time-courses as features
and no FIR expansion (responses already carry the hemodynamic lag).  The
ceiling is the unweighted mean r over all evaluations, floored at zero.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (ExperimentConfig, ResponseMatrix, ValidationError, derive_seed,
                         dump_json, load_npy, save_npy, subset_story_offsets)
from .metrics import pearson_columns
from .ridge import bootstrap_ridge, predict
from .temporal import zscore_split


@dataclass(eq=False)
class CeilingMap:
    """Per-voxel ceiling for one subject/modality, with the per-subset-size
    breakdown (raw means; the pooled ceiling is floored at 0)."""

    subject_id: str
    modality: str
    ceiling: np.ndarray  # (n_voxels,) in [0, 1]
    by_size: dict[int, np.ndarray]  # s -> raw mean r over subsets of that size
    n_evaluations: dict[int, int]
    scheme: str

    @property
    def n_voxels(self) -> int:
        return self.ceiling.size


def _check_aligned(responses: list[ResponseMatrix]) -> None:
    if len(responses) < 2:
        raise ValidationError("cross-subject ceiling needs at least two subjects")
    ref = responses[0]
    for rm in responses[1:]:
        if rm.modality != ref.modality:
            raise ValidationError("all subjects must share one modality")
        if rm.n_trs != ref.n_trs or not np.array_equal(rm.story_offsets, ref.story_offsets):
            raise ValidationError(f"subject {rm.subject_id} is not TR-aligned with {ref.subject_id}")
        if rm.split_per_story != ref.split_per_story:
            raise ValidationError(f"subject {rm.subject_id} split differs from {ref.subject_id}")


def _pca_project(train: np.ndarray, full: np.ndarray, cap: int) -> np.ndarray:
    """Project onto the top principal axes of the training rows."""
    _, _, vt = np.linalg.svd(train, full_matrices=False)
    k = min(cap, vt.shape[0])
    return full @ vt[:k].T


def cross_subject_ceiling(responses: list[ResponseMatrix],
                          config: ExperimentConfig) -> dict[str, CeilingMap]:
    """Ceiling maps for every subject in ``responses`` (one shared modality)."""
    _check_aligned(responses)
    responses = sorted(responses, key=lambda rm: rm.subject_id)
    n = len(responses)
    sizes = config.ceiling.subset_sizes or list(range(2, n + 1))
    if any(s < 2 or s > n for s in sizes):
        raise ValidationError(f"subset sizes must lie in [2, {n}]")
    n_boots = config.ceiling.n_boots or config.ridge.n_boots
    split = responses[0].train_mask
    offsets = responses[0].story_offsets
    train_offsets = subset_story_offsets(offsets, responses[0].n_trs, split)
    zscored = {rm.subject_id: zscore_split(rm.values, split) for rm in responses}

    out: dict[str, CeilingMap] = {}
    for target in responses:
        others = [rm.subject_id for rm in responses if rm.subject_id != target.subject_id]
        Yz = zscored[target.subject_id].values
        total = np.zeros(target.n_voxels)
        count = 0
        by_size: dict[int, np.ndarray] = {}
        n_evaluations: dict[int, int] = {}
        for s in sizes:
            size_sum = np.zeros(target.n_voxels)
            subsets = list(itertools.combinations(others, s - 1))
            for subset in subsets:
                stacked = [zscored[sid].values for sid in subset]
                X = np.hstack(stacked) if config.ceiling.predictor == "concat" \
                    else np.mean(stacked, axis=0)
                if config.ceiling.pca_cap:
                    X = _pca_project(X[split], X, config.ceiling.pca_cap)
                seed = derive_seed(config.rng_seed, "ceiling", target.modality,
                                   target.subject_id, s, *subset)
                model = bootstrap_ridge(X[split], Yz[split], config.lambda_grid,
                                        n_boots=n_boots, chunk_len=config.ridge.chunk_len,
                                        holdout_frac=config.ridge.holdout_frac, seed=seed,
                                        story_offsets=train_offsets)
                pred = predict(model, X[~split])
                r, _ = pearson_columns(pred, Yz[~split])
                size_sum += r
                total += r
                count += 1
            by_size[s] = size_sum / len(subsets)
            n_evaluations[s] = len(subsets)
        if config.ceiling.pooling == "sizes":
            ceiling = np.maximum(np.mean([by_size[s] for s in sizes], axis=0), 0.0)
        else:
            ceiling = np.maximum(total / count, 0.0)
        out[target.subject_id] = CeilingMap(
            subject_id=target.subject_id, modality=target.modality, ceiling=ceiling,
            by_size=by_size, n_evaluations=n_evaluations,
            scheme=(f"{config.ceiling.predictor}-others ridge, sizes={sizes}, "
                    f"pooling={config.ceiling.pooling}, pca_cap={config.ceiling.pca_cap}"))
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_ceiling_map(cm: CeilingMap, directory: str | Path, name: str | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or f"{cm.subject_id}_{cm.modality}.ceiling"
    save_npy(cm.ceiling, directory / f"{name}.npy")
    for s, values in cm.by_size.items():
        save_npy(values, directory / f"{name}.size{s}.npy")
    meta = {
        "kind": "ceiling_map",
        "subject_id": cm.subject_id,
        "modality": cm.modality,
        "sizes": sorted(cm.by_size),
        "n_evaluations": {str(s): c for s, c in sorted(cm.n_evaluations.items())},
        "scheme": cm.scheme,
    }
    dump_json(meta, directory / f"{name}.meta.json")


def load_ceiling_map(directory: str | Path, name: str) -> CeilingMap:
    directory = Path(directory)
    with open(directory / f"{name}.meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    ceiling = load_npy(directory / f"{name}.npy")
    by_size = {int(s): load_npy(directory / f"{name}.size{s}.npy") for s in meta["sizes"]}
    return CeilingMap(subject_id=meta["subject_id"], modality=meta["modality"], ceiling=ceiling,
                      by_size=by_size,
                      n_evaluations={int(k): v for k, v in meta["n_evaluations"].items()},
                      scheme=meta["scheme"])
