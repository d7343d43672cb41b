"""Synthetic multi-subject experiments with known ground truth.

Voxel responses are FIR-convolved mixtures of a designated "low-level"
component and an independent latent component, plus per-subject noise; the
model representation contains both components linearly.  The fraction of
explainable response variance carried by the low-level component is planted
exactly, so the full pipeline's recovered share can be checked against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import (TR_SECONDS, FeatureMatrix, ResponseMatrix, Sampling, dump_json,
                         named_rng, save_feature_matrix, save_response_matrix, story_slices)


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 6
    n_trs: int = 600
    n_voxels: int = 200
    n_stories: int = 4
    test_stories: int = 1
    low_level_dim: int = 2
    latent_dim: int = 5
    repr_dim: int = 12
    snr: float = 4.0  # signal variance / noise variance, per voxel; may be inf
    low_level_fraction: float = 0.5  # share of explainable variance planted in the low-level part
    fir_kernel: tuple[float, ...] = (0.2, 0.35, 0.25, 0.12, 0.06, 0.02)  # delays 1..6
    repr_noise: float = 0.01
    tr_seconds: float = TR_SECONDS
    modality: str = "listening"
    seed: int = 0

    def __post_init__(self):
        if self.snr < 0:
            raise ValueError("snr must be non-negative")
        if not 0.0 <= self.low_level_fraction <= 1.0:
            raise ValueError("low_level_fraction must lie in [0, 1]")
        if not 1 <= self.test_stories < self.n_stories:
            raise ValueError("need at least one train and one test story")
        if self.repr_dim < self.low_level_dim + self.latent_dim:
            raise ValueError("repr_dim must hold both components")
        if not self.fir_kernel or len(self.fir_kernel) > 6:
            raise ValueError("fir_kernel must cover 1..6 delays")


@dataclass(eq=False)
class SynthData:
    features: dict[str, FeatureMatrix]
    responses: list[ResponseMatrix]
    ground_truth: dict = field(default_factory=dict)


def expected_ceiling(snr: float, s: int) -> float:
    """Analytic cross-subject r when predicting one noisy copy of a unit-variance
    signal from the average of s-1 other copies."""
    if math.isinf(snr):
        return 1.0
    if snr == 0:
        return 0.0
    return math.sqrt(snr / (snr + 1.0)) * math.sqrt((s - 1) * snr / ((s - 1) * snr + 1.0))


def _story_layout(spec: SynthSpec) -> tuple[np.ndarray, list[str]]:
    base, extra = divmod(spec.n_trs, spec.n_stories)
    lengths = [base + (1 if i < extra else 0) for i in range(spec.n_stories)]
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    split = ["train"] * (spec.n_stories - spec.test_stories) + ["test"] * spec.test_stories
    return offsets, split


def _delayed_mix(signal: np.ndarray, kernel: tuple[float, ...],
                 story_offsets: np.ndarray) -> np.ndarray:
    """Causal story-aware convolution with weights on delays 1..len(kernel)."""
    out = np.zeros_like(signal)
    for k, h in enumerate(kernel, start=1):
        for sl in story_slices(story_offsets, signal.shape[0]):
            if sl.stop - sl.start > k:
                out[sl.start + k:sl.stop] += h * signal[sl.start:sl.stop - k]
    return out


def _whiten(X: np.ndarray) -> np.ndarray:
    """Center columns and map their sample covariance to the identity."""
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / Xc.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(np.maximum(vals, 1e-12))) @ vecs.T
    return Xc @ inv_sqrt


def _plant_components(L: np.ndarray, C: np.ndarray, story_offsets: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Per story: whiten the low-level block and orthogonalize-then-whiten the
    latent block against it, so the planted variance split is exact in-sample
    and the removal regression has nothing spurious to pick up."""
    L = L.copy()
    C = C.copy()
    for sl in story_slices(story_offsets, L.shape[0]):
        L[sl] = _whiten(L[sl])
        Cs = C[sl] - C[sl].mean(axis=0)
        beta = np.linalg.lstsq(L[sl], Cs, rcond=None)[0]
        C[sl] = _whiten(Cs - L[sl] @ beta)
    return L, C


def generate(spec: SynthSpec) -> SynthData:
    """Draw one experiment.  Per-voxel quantities come from per-voxel named
    streams, so enlarging n_voxels never changes existing voxels' draws."""
    offsets, split = _story_layout(spec)
    n = spec.n_trs
    L = named_rng(spec.seed, "synth", "lowlevel").normal(size=(n, spec.low_level_dim))
    C = named_rng(spec.seed, "synth", "latent").normal(size=(n, spec.latent_dim))
    L, C = _plant_components(L, C, offsets)
    M = named_rng(spec.seed, "synth", "mixing").normal(size=(spec.low_level_dim + spec.latent_dim,
                                                             spec.repr_dim))
    eta = named_rng(spec.seed, "synth", "repr_noise").normal(size=(n, spec.repr_dim))
    W = np.hstack([L, C]) @ M + spec.repr_noise * eta

    kernel = np.asarray(spec.fir_kernel, dtype=np.float64)
    kernel = tuple(kernel / np.linalg.norm(kernel))
    f = spec.low_level_fraction
    noise_std = 0.0 if math.isinf(spec.snr) else (math.sqrt(1.0 / spec.snr) if spec.snr > 0
                                                  else float("inf"))
    if not math.isfinite(noise_std):
        raise ValueError("snr = 0 would produce pure-noise responses; use a tiny positive snr")

    signal = np.empty((n, spec.n_voxels))
    noise = np.empty((spec.n_subjects, n, spec.n_voxels))
    for v in range(spec.n_voxels):
        gen = named_rng(spec.seed, "synth", "voxel", v)
        a = gen.normal(size=spec.low_level_dim)
        a /= np.linalg.norm(a)
        b = gen.normal(size=spec.latent_dim)
        b /= np.linalg.norm(b)
        signal[:, v] = math.sqrt(f) * (L @ a) + math.sqrt(1.0 - f) * (C @ b)
        noise[:, :, v] = gen.normal(size=(spec.n_subjects, n))
    lagged = _delayed_mix(signal, kernel, offsets)

    sampling = Sampling.per_tr(spec.tr_seconds)
    features = {
        "w": FeatureMatrix(name="w", values=W, sampling=sampling, story_offsets=offsets),
        "lowlevel": FeatureMatrix(name="lowlevel", values=L, sampling=sampling,
                                  story_offsets=offsets),
    }
    responses = [
        ResponseMatrix(subject_id=f"s{i + 1:02d}", modality=spec.modality,
                       values=lagged + noise_std * noise[i], split_per_story=split,
                       tr_seconds=spec.tr_seconds, story_offsets=offsets)
        for i in range(spec.n_subjects)
    ]
    snr_json = "inf" if math.isinf(spec.snr) else spec.snr
    truth = {
        "low_level_fraction": f,
        "snr": snr_json,
        "expected_share": f,
        "expected_r_before": 1.0 if math.isinf(spec.snr) else math.sqrt(spec.snr / (spec.snr + 1.0)),
        "expected_ceiling_by_size": {str(s): expected_ceiling(spec.snr, s)
                                     for s in range(2, spec.n_subjects + 1)},
        "fir_kernel": list(kernel),
        "n_trs": n,
        "n_voxels": spec.n_voxels,
        "n_subjects": spec.n_subjects,
        "seed": spec.seed,
    }
    return SynthData(features=features, responses=responses, ground_truth=truth)


def write_synth(spec: SynthSpec, features_dir: str | Path, responses_dir: str | Path,
                truth_path: str | Path) -> SynthData:
    """Generate and persist in the standard array + sidecar layout, so synthetic
    and real experiments share one loading path."""
    data = generate(spec)
    for fm in data.features.values():
        save_feature_matrix(fm, features_dir)
    for rm in data.responses:
        save_response_matrix(rm, responses_dir)
    dump_json(data.ground_truth, Path(truth_path))
    return data
