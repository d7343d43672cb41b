"""Time alignment: Lanczos resampling to TR times, FIR delay expansion, and
split-wise standardization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import FeatureMatrix, Sampling, ValidationError, story_slices


@dataclass(frozen=True)
class DelaySpec:
    """Feature delays in whole TRs; defaults cover 1..6 TRs (~2-12 s of lag)."""

    delays: tuple[int, ...] = (1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        d = tuple(int(x) for x in self.delays)
        if not d or any(x <= 0 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("delays must be positive and strictly ascending")
        object.__setattr__(self, "delays", d)

    def __len__(self) -> int:
        return len(self.delays)


def tr_mid_times(n_trs: int, tr_seconds: float, start: float = 0.0) -> np.ndarray:
    """Mid-point times of consecutive TRs, used as the Lanczos target grid."""
    return start + (np.arange(n_trs) + 0.5) * tr_seconds


def lanczos_kernel(dt: np.ndarray, cutoff_hz: float, lobes: int) -> np.ndarray:
    """Windowed-sinc kernel K(dt) = sinc(2 fc dt) * sinc(2 fc dt / lobes),
    zero outside |2 fc dt| < lobes."""
    x = 2.0 * cutoff_hz * np.asarray(dt, dtype=np.float64)
    val = np.sinc(x) * np.sinc(x / lobes)
    return np.where(np.abs(x) < lobes, val, 0.0)


def lanczos_downsample(values: np.ndarray, source_times: np.ndarray, target_times: np.ndarray,
                       lobes: int = 3, cutoff_hz: float | None = None) -> np.ndarray:
    """Resample rows sampled at ``source_times`` onto ``target_times``.

    Each output row is a kernel-weighted average of the source rows with the
    weights renormalized to sum to one, so irregular source spacing does not
    bias the amplitude.  The cutoff defaults to the Nyquist frequency of the
    target grid (0.5 / median target spacing).  Output rows whose total kernel
    weight is ~0 (no source support) are zero.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    source_times = np.asarray(source_times, dtype=np.float64)
    target_times = np.asarray(target_times, dtype=np.float64)
    if source_times.size == 0:
        raise ValueError("empty source signal")
    if values.shape[0] != source_times.size:
        raise ValueError("values and source_times disagree on row count")
    for name, t in (("source", source_times), ("target", target_times)):
        if not np.all(np.isfinite(t)):
            raise ValueError(f"{name} times must be finite")
        if np.any(np.diff(t) < 0):
            raise ValueError(f"{name} times must be non-decreasing")
    if lobes < 1:
        raise ValueError("lobes must be >= 1")
    if cutoff_hz is None:
        if target_times.size < 2:
            raise ValueError("cannot infer cutoff from a single target time; pass cutoff_hz")
        cutoff_hz = 0.5 / float(np.median(np.diff(target_times)))

    out = np.zeros((target_times.size, values.shape[1]), dtype=np.float64)
    chunk = max(1, int(4e6 // max(source_times.size, 1)))
    for start in range(0, target_times.size, chunk):
        stop = min(start + chunk, target_times.size)
        dt = target_times[start:stop, None] - source_times[None, :]
        w = lanczos_kernel(dt, cutoff_hz, lobes)
        totals = w.sum(axis=1)
        keep = np.abs(totals) > 1e-10
        if np.any(keep):
            out[start:stop][keep] = (w[keep] @ values) / totals[keep, None]
    return out


def align_to_tr(fm: FeatureMatrix, n_trs_per_story: list[int],
                tr_seconds: float) -> FeatureMatrix:
    """Bring a feature matrix onto the TR grid: per-TR matrices pass through
    (row counts must match), frame-rate and irregular matrices are Lanczos
    resampled story by story at the TR mid-times.  Onsets and frame times are
    story-local, restarting at 0 at each story start."""
    if fm.sampling.kind == "per_TR":
        if fm.n_rows != sum(n_trs_per_story):
            raise ValidationError(f"{fm.name!r}: {fm.n_rows} rows vs "
                                  f"{sum(n_trs_per_story)}-TR grid")
        return fm
    if len(fm.story_offsets) != len(n_trs_per_story):
        raise ValidationError(f"{fm.name!r}: story count differs from the TR grid")
    pieces = []
    for sl, n_trs in zip(fm.story_slices(), n_trs_per_story):
        if fm.sampling.kind == "frame_rate":
            times = (np.arange(sl.stop - sl.start) + 0.5) / fm.sampling.hz
        else:
            times = fm.sampling.onsets[sl]
        pieces.append(lanczos_downsample(fm.values[sl], times, tr_mid_times(n_trs, tr_seconds),
                                         cutoff_hz=0.5 / tr_seconds))
    offsets = np.concatenate([[0], np.cumsum(n_trs_per_story)[:-1]]).astype(np.int64)
    return FeatureMatrix(name=fm.name, values=np.vstack(pieces),
                         sampling=Sampling.per_tr(tr_seconds), story_offsets=offsets)


def fir_expand(X: np.ndarray, spec: DelaySpec | None = None,
               story_offsets: np.ndarray | None = None) -> np.ndarray:
    """Concatenate delayed copies of per-TR features: block k of output row t is
    X[t - delays[k]], or zeros when that row would fall before t's story start."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    spec = spec or DelaySpec()
    n, d = X.shape
    offsets = np.array([0]) if story_offsets is None else np.asarray(story_offsets, dtype=int)
    out = np.zeros((n, d * len(spec)), dtype=np.float64)
    for k, delay in enumerate(spec.delays):
        block = slice(k * d, (k + 1) * d)
        for sl in story_slices(offsets, n):
            if sl.stop - sl.start > delay:
                out[sl.start + delay:sl.stop, block] = X[sl.start:sl.stop - delay]
    return out


@dataclass
class ZScored:
    """Split-standardized matrix with the statistics used per split.

    Zero-variance columns are mapped to zeros and recorded in ``degenerate``.
    """

    values: np.ndarray
    train_mean: np.ndarray
    train_std: np.ndarray
    test_mean: np.ndarray
    test_std: np.ndarray
    degenerate: dict[str, np.ndarray] = field(default_factory=dict)


def zscore_split(X: np.ndarray, train_mask: np.ndarray) -> ZScored:
    """Standardize each column separately within the train and test rows.

    Uses the population standard deviation.  Both splits must be non-empty.
    """
    X = np.asarray(X, dtype=np.float64)
    train_mask = np.asarray(train_mask, dtype=bool)
    if train_mask.shape != (X.shape[0],):
        raise ValueError("train_mask must have one entry per row")
    if not train_mask.any() or train_mask.all():
        raise ValueError("both splits must be non-empty")
    out = np.empty_like(X)
    stats = {}
    degenerate = {}
    for name, mask in (("train", train_mask), ("test", ~train_mask)):
        rows = X[mask]
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        dead = std == 0
        out[mask] = np.where(dead, 0.0, (rows - mean) / np.where(dead, 1.0, std))
        stats[name] = (mean, std)
        degenerate[name] = dead
    return ZScored(values=out,
                   train_mean=stats["train"][0], train_std=stats["train"][1],
                   test_mean=stats["test"][0], test_std=stats["test"][1],
                   degenerate=degenerate)
