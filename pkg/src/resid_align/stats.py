"""Ceiling-normalized alignment, block permutation tests, exact Wilcoxon
signed-rank tests, ROI aggregation, and feature-feature correlation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .ceiling import CeilingMap
from .data_model import FeatureMatrix, RoiAtlas, ValidationError, contiguous_blocks, named_rng
from .encoding import EncodingResult
from .metrics import pearson_columns


# ---------------------------------------------------------------------------
# Normalized alignment
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AlignmentReport:
    """Raw and ceiling-normalized per-voxel alignment for one encoding result.

    ``normalized`` is NaN outside the reliable-voxel mask; ROI and subject
    aggregates are unweighted means over masked voxels.
    """

    subject_id: str
    modality: str
    feature_name: str
    raw_r: np.ndarray
    ceiling: np.ndarray
    mask: np.ndarray
    normalized: np.ndarray
    subject_mean: float
    roi_means: dict[str, "RoiAggregate"] = field(default_factory=dict)
    p_values: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RoiAggregate:
    mean: float
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0


def normalize_alignment(result: EncodingResult, ceiling: CeilingMap, threshold: float = 0.05,
                        atlas: RoiAtlas | None = None,
                        aggregate: str = "mean_of_ratios") -> AlignmentReport:
    """Divide per-voxel r by the cross-subject ceiling on voxels whose ceiling
    reaches ``threshold``; aggregate over ROI groups and the whole mask.

    The default subject-level aggregate averages the per-voxel ratios; the
    ``ratio_of_means`` alternative divides the mean r by the mean ceiling.
    """
    if aggregate not in ("mean_of_ratios", "ratio_of_means"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    if result.n_voxels != ceiling.n_voxels:
        raise ValidationError(f"voxel count mismatch: encoding has {result.n_voxels}, "
                              f"ceiling has {ceiling.n_voxels}")
    mask = ceiling.ceiling >= threshold
    if not mask.any():
        raise ValidationError(f"no voxel reaches the ceiling threshold {threshold}")
    normalized = np.full(result.r.shape, np.nan)
    normalized[mask] = result.r[mask] / ceiling.ceiling[mask]
    if aggregate == "mean_of_ratios":
        subject_mean = float(normalized[mask].mean())
    else:
        subject_mean = float(result.r[mask].mean() / ceiling.ceiling[mask].mean())
    roi_means = {}
    if atlas is not None:
        roi_means = roi_aggregate(normalized, atlas, sorted(atlas.groups), mask=mask)
    return AlignmentReport(subject_id=result.subject_id, modality=result.modality,
                           feature_name=result.feature_name, raw_r=result.r,
                           ceiling=ceiling.ceiling, mask=mask, normalized=normalized,
                           subject_mean=subject_mean, roi_means=roi_means)


def roi_aggregate(values: np.ndarray, atlas: RoiAtlas, groups: list[str],
                  mask: np.ndarray | None = None) -> dict[str, RoiAggregate]:
    """Unweighted mean of ``values`` over each group's masked voxels; groups
    with no masked voxel come back empty (count 0, NaN mean)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (atlas.n_voxels,):
        raise ValidationError("values must be per-voxel")
    mask = np.ones(atlas.n_voxels, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out = {}
    for group in groups:
        sel = atlas.group_mask(group) & mask
        out[group] = RoiAggregate(mean=float(values[sel].mean()) if sel.any() else float("nan"),
                                  count=int(sel.sum()))
    return out


# ---------------------------------------------------------------------------
# Block permutation test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PermutationResult:
    p_value: float
    observed: float
    n_permutations: int
    per_voxel_p: np.ndarray | None = None


def _mean_masked_pearson(pred: np.ndarray, actual: np.ndarray,
                         voxel_mask: np.ndarray | None) -> float:
    r, _ = pearson_columns(pred, actual)
    return float(r.mean() if voxel_mask is None else r[voxel_mask].mean())


def block_permutation_test(pred: np.ndarray, actual: np.ndarray, block_len: int = 10,
                           n_perm: int = 5000, seed: int = 0,
                           story_offsets: np.ndarray | None = None,
                           voxel_mask: np.ndarray | None = None,
                           per_voxel: bool = False) -> PermutationResult:
    """Permute the order of contiguous ``block_len``-TR blocks of the
    predictions within each story and recompute the statistic (mean Pearson r
    over masked voxels); p = (1 + #{perm >= observed}) / (1 + n_perm).

    Within-block TR order is preserved and blocks never cross story
    boundaries; the identity rearrangement is redrawn so that a perfect
    prediction always yields the smallest attainable p.
    """
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {actual.shape}")
    m = pred.shape[0]
    if m < 2 * block_len:
        raise ValueError(f"need at least {2 * block_len} rows for block_len={block_len}")
    offsets = np.array([0]) if story_offsets is None else np.asarray(story_offsets, dtype=int)
    story_blocks = _blocks_by_story(offsets, m, block_len)
    rng = named_rng(seed, "block_permutation")
    mask = None if voxel_mask is None else np.asarray(voxel_mask, dtype=bool)

    # Pearson against fixed `actual`: only the cross term depends on the row
    # order of `pred`, so permutations reduce to one matrix product each.
    pc = pred - pred.mean(axis=0)
    ac = actual - actual.mean(axis=0)
    sp = np.sqrt((pc * pc).mean(axis=0))
    sa = np.sqrt((ac * ac).mean(axis=0))
    degenerate = (sp == 0) | (sa == 0)
    denom = np.where(degenerate, 1.0, sp * sa) * m
    observed_r = np.clip(np.einsum("mv,mv->v", pc, ac) / denom, -1, 1)
    observed_r[degenerate] = 0.0
    observed = float(observed_r.mean() if mask is None else observed_r[mask].mean())

    orders = np.empty((n_perm, m), dtype=np.intp)
    for i in range(n_perm):
        orders[i] = _draw_block_order(story_blocks, rng)

    n_ge = 0
    per_voxel_ge = np.zeros(pred.shape[1], dtype=np.int64) if per_voxel else None
    batch = max(1, int(32e6 // (m * pred.shape[1] * 8)))
    for start in range(0, n_perm, batch):
        idx = orders[start:start + batch]
        r = np.clip(np.einsum("bmv,mv->bv", pc[idx], ac) / denom, -1, 1)
        r[:, degenerate] = 0.0
        stat = r.mean(axis=1) if mask is None else r[:, mask].mean(axis=1)
        n_ge += int((stat >= observed).sum())
        if per_voxel:
            per_voxel_ge += (r >= observed_r).sum(axis=0)
    p = (1 + n_ge) / (1 + n_perm)
    per_voxel_p = None if not per_voxel else (1 + per_voxel_ge) / (1 + n_perm)
    return PermutationResult(p_value=p, observed=observed, n_permutations=n_perm,
                             per_voxel_p=per_voxel_p)


def _blocks_by_story(story_offsets: np.ndarray, n_rows: int, block_len: int) -> list[list[np.ndarray]]:
    from .data_model import story_slices

    out = []
    for sl in story_slices(story_offsets, n_rows):
        out.append(contiguous_blocks(np.array([0]), sl.stop - sl.start, block_len))
        out[-1] = [b + sl.start for b in out[-1]]
    return out


def _draw_block_order(story_blocks: list[list[np.ndarray]], rng: np.random.Generator,
                      max_tries: int = 100) -> np.ndarray:
    can_move = any(len(blocks) > 1 for blocks in story_blocks)
    for _ in range(max_tries):
        pieces = []
        identity = True
        for blocks in story_blocks:
            perm = rng.permutation(len(blocks))
            identity = identity and bool(np.all(perm == np.arange(len(blocks))))
            pieces.extend(blocks[j] for j in perm)
        if not identity or not can_move:
            return np.concatenate(pieces)
    return np.concatenate(pieces)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # W+ (sum of ranks of positive differences)
    n_effective: int
    all_zero: bool = False


def wilcoxon_signed_rank(pairs, mode: str = "two-sided") -> WilcoxonResult:
    """Two-sided signed-rank test on paired observations.

    Exact null distribution (sign-flip enumeration over midranks, computed by
    convolution) for up to 25 non-zero differences; normal approximation with
    tie correction and continuity correction beyond.  Zero differences are
    dropped; if every difference is zero, p = 1.0 with a flag.
    """
    if mode != "two-sided":
        raise ValueError("only the two-sided mode is implemented")
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must be a sequence of (a, b) tuples")
    d = arr[:, 0] - arr[:, 1]
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(p_value=1.0, statistic=0.0, n_effective=0, all_zero=True)
    ranks = rankdata(np.abs(d))  # midranks for ties
    w_plus = float(ranks[d > 0].sum())

    if n <= 25:
        # Integerize midranks (always multiples of 1/2) and convolve the
        # two-point distributions {0, 2r} over all n differences.
        ints = np.round(2 * ranks).astype(int)
        total = ints.sum()
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in ints:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[:counts.size - r]
            counts = counts + shifted
        counts /= 2.0 ** n
        w2 = int(round(2 * w_plus))
        upper = counts[w2:].sum()
        lower = counts[:w2 + 1].sum()
        p = min(1.0, 2.0 * min(upper, lower))
        return WilcoxonResult(p_value=float(p), statistic=w_plus, n_effective=n)

    mu = n * (n + 1) / 4.0
    tie_sizes = np.unique(ranks, return_counts=True)[1]
    var = n * (n + 1) * (2 * n + 1) / 24.0 - ((tie_sizes ** 3 - tie_sizes).sum()) / 48.0
    if var <= 0:
        return WilcoxonResult(p_value=1.0, statistic=w_plus, n_effective=n)
    z = (w_plus - mu - 0.5 * np.sign(w_plus - mu)) / np.sqrt(var)
    p = min(1.0, 2.0 * float(norm.sf(abs(z))))
    return WilcoxonResult(p_value=p, statistic=w_plus, n_effective=n)


# ---------------------------------------------------------------------------
# Feature-feature correlation
# ---------------------------------------------------------------------------

def feature_correlation(features: list[FeatureMatrix]) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson correlation of per-TR scalar features.

    Returns (matrix, degenerate): zero-variance features get a zeroed row and
    column (diagonal stays 1) and a True flag.
    """
    if not features:
        raise ValidationError("need at least one feature")
    for fm in features:
        if fm.dim != 1:
            raise ValidationError(f"feature {fm.name!r} is not scalar (dim {fm.dim})")
        if fm.n_rows != features[0].n_rows:
            raise ValidationError(f"feature {fm.name!r} row count differs from {features[0].name!r}")
    X = np.hstack([fm.values for fm in features])
    centered = X - X.mean(axis=0)
    std = centered.std(axis=0)
    degenerate = std == 0
    Z = centered / np.where(degenerate, 1.0, std)
    C = (Z.T @ Z) / X.shape[0]
    C[degenerate, :] = 0.0
    C[:, degenerate] = 0.0
    np.fill_diagonal(C, 1.0)
    return np.clip(C, -1.0, 1.0), degenerate
