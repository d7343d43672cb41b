"""Core data types, array IO, experiment configuration, and validation.

Everything downstream operates on two matrix types: stimulus feature or
model-representation matrices (:class:`FeatureMatrix`) and per-subject fMRI
recordings (:class:`ResponseMatrix`).  Arrays live on disk as NPY v1.0 files
(little-endian float64, C order) next to a ``<name>.meta.json`` sidecar that
carries sampling metadata, story boundaries, and the train/test split.

All randomness in the package flows from one experiment seed through
:func:`named_rng`, which derives an independent stream per (seed, name path).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TR_SECONDS = 2.0045

TRAIN = "train"
TEST = "test"


class FormatError(Exception):
    """A file is not a well-formed array container or sidecar."""


class ValidationError(Exception):
    """Data violates a structural invariant (non-finite values, bad offsets...)."""


class ConfigError(Exception):
    """The experiment configuration is malformed or inconsistent."""


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

def named_rng(seed: int, *path: object) -> np.random.Generator:
    """Derive an independent generator for a named stream.

    The stream is identified by ``path`` (any mix of strings/ints); the same
    (seed, path) pair always yields the same generator, and distinct paths are
    statistically independent.  Hashing avoids Python's per-process str hash.
    """
    if seed < 0:
        raise ValueError("rng seed must be non-negative")
    tag = "/".join(str(p) for p in path)
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


# ---------------------------------------------------------------------------
# Atomic file helpers
# ---------------------------------------------------------------------------

def derive_seed(seed: int, *path: object) -> int:
    """Deterministic 32-bit child seed for a named stream (for APIs that take
    an integer seed rather than a Generator)."""
    if seed < 0:
        raise ValueError("rng seed must be non-negative")
    tag = "/".join([str(int(seed))] + [str(p) for p in path])
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file + rename so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj: object, path: Path) -> None:
    atomic_write_bytes(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def save_npy(arr: np.ndarray, path: Path) -> None:
    """Save as NPY v1.0, little-endian float64, C order."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    import io

    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, version=(1, 0))
    atomic_write_bytes(Path(path), buf.getvalue())


def load_npy(path: Path) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except (ValueError, OSError, EOFError) as exc:
        raise FormatError(f"{path}: not a readable NPY array ({exc})") from exc


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))
        r, c = (int(bad[0][0]), int(bad[0][1])) if bad.shape[1] == 2 else (int(bad[0][0]), 0)
        raise ValidationError(f"{what}: non-finite entry at row {r}, col {c}")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sampling:
    """How matrix rows map onto time: one row per TR, a fixed frame rate,
    or irregular explicit onsets (one per row, in seconds)."""

    kind: str  # "per_TR" | "frame_rate" | "irregular"
    tr_seconds: float | None = None
    hz: float | None = None
    onsets: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "per_TR":
            if not self.tr_seconds or self.tr_seconds <= 0:
                raise ValidationError("per_TR sampling requires positive tr_seconds")
        elif self.kind == "frame_rate":
            if not self.hz or self.hz <= 0:
                raise ValidationError("frame_rate sampling requires positive hz")
        elif self.kind == "irregular":
            if self.onsets is None:
                raise ValidationError("irregular sampling requires an onset list")
            object.__setattr__(self, "onsets", np.asarray(self.onsets, dtype=float))
        else:
            raise ValidationError(f"unknown sampling kind {self.kind!r}")

    @classmethod
    def per_tr(cls, tr_seconds: float = TR_SECONDS) -> "Sampling":
        return cls(kind="per_TR", tr_seconds=float(tr_seconds))

    @classmethod
    def frame_rate(cls, hz: float) -> "Sampling":
        return cls(kind="frame_rate", hz=float(hz))

    @classmethod
    def irregular(cls, onsets: np.ndarray) -> "Sampling":
        return cls(kind="irregular", onsets=np.asarray(onsets, dtype=float))


def _validate_story_offsets(story_offsets: np.ndarray, n_rows: int, what: str) -> np.ndarray:
    offs = np.asarray(story_offsets, dtype=np.int64)
    if offs.ndim != 1 or offs.size == 0 or offs[0] != 0:
        raise ValidationError(f"{what}: story_offsets must start at 0")
    if np.any(np.diff(offs) <= 0):
        raise ValidationError(f"{what}: story_offsets must be strictly ascending")
    if offs[-1] >= n_rows:
        raise ValidationError(f"{what}: story offset {int(offs[-1])} out of range for {n_rows} rows")
    return offs


def story_slices(story_offsets: np.ndarray, n_rows: int) -> list[slice]:
    """Row slices for each story, in order."""
    offs = list(np.asarray(story_offsets, dtype=int)) + [n_rows]
    return [slice(offs[i], offs[i + 1]) for i in range(len(offs) - 1)]


def subset_story_offsets(story_offsets: np.ndarray, n_rows: int, mask: np.ndarray) -> np.ndarray:
    """Story offsets for the rows selected by ``mask``, which must keep or drop
    each story wholesale (splits are whole-story by invariant)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n_rows,):
        raise ValueError("mask must have one entry per row")
    new_offsets = []
    pos = 0
    for sl in story_slices(story_offsets, n_rows):
        kept = mask[sl]
        if kept.all():
            new_offsets.append(pos)
            pos += sl.stop - sl.start
        elif kept.any():
            raise ValidationError(f"mask splits story at rows {sl.start}..{sl.stop}")
    if not new_offsets:
        raise ValidationError("mask selects no stories")
    return np.asarray(new_offsets, dtype=np.int64)


def contiguous_blocks(story_offsets: np.ndarray, n_rows: int, block_len: int) -> list[np.ndarray]:
    """Partition rows into contiguous blocks of ``block_len`` that never cross a
    story boundary; a story's trailing partial block is kept as its own block."""
    if block_len < 1:
        raise ValueError("block_len must be >= 1")
    blocks = []
    for sl in story_slices(story_offsets, n_rows):
        for start in range(sl.start, sl.stop, block_len):
            blocks.append(np.arange(start, min(start + block_len, sl.stop)))
    return blocks


# ---------------------------------------------------------------------------
# FeatureMatrix
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FeatureMatrix:
    """Rows-by-dims stimulus features or model activations with time metadata.

    ``values`` is float64, shape (n_rows, dim); ``story_offsets`` marks the
    first row of each story.  Irregular sampling carries one onset per row,
    non-decreasing within each story (onsets restart across stories).
    """

    name: str
    values: np.ndarray
    sampling: Sampling
    story_offsets: np.ndarray = field(default_factory=lambda: np.array([0], dtype=np.int64))

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"{self.name}: values must be 2-D, got shape {self.values.shape}")
        _check_finite(self.values, self.name)
        self.story_offsets = _validate_story_offsets(self.story_offsets, self.n_rows, self.name)
        if self.sampling.kind == "irregular":
            onsets = self.sampling.onsets
            if onsets.shape != (self.n_rows,):
                raise ValidationError(
                    f"{self.name}: irregular onset list has length {onsets.size}, expected {self.n_rows}")
            for sl in self.story_slices():
                if np.any(np.diff(onsets[sl]) < 0):
                    raise ValidationError(f"{self.name}: onsets decrease within story at rows {sl.start}..{sl.stop}")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def story_slices(self) -> list[slice]:
        return story_slices(self.story_offsets, self.n_rows)

    def with_values(self, values: np.ndarray, name: str | None = None) -> "FeatureMatrix":
        """Same metadata, new values (row count must be preserved)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.n_rows:
            raise ValidationError("with_values must preserve the row count")
        return FeatureMatrix(name=name or self.name, values=values,
                             sampling=self.sampling, story_offsets=self.story_offsets.copy())


# ---------------------------------------------------------------------------
# ResponseMatrix
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ResponseMatrix:
    """TRs-by-voxels recordings for one subject and modality.

    The train/test split is stored per story; train stories and test stories
    must each form one contiguous run, so split rows are contiguous runs of
    whole stories.
    """

    subject_id: str
    modality: str  # "reading" | "listening"
    values: np.ndarray
    split_per_story: Sequence[str]
    tr_seconds: float = TR_SECONDS
    story_offsets: np.ndarray = field(default_factory=lambda: np.array([0], dtype=np.int64))

    def __post_init__(self):
        if self.modality not in ("reading", "listening"):
            raise ValidationError(f"unknown modality {self.modality!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"{self.subject_id}: values must be 2-D")
        _check_finite(self.values, f"{self.subject_id}/{self.modality}")
        self.story_offsets = _validate_story_offsets(self.story_offsets, self.n_trs,
                                                     f"{self.subject_id}/{self.modality}")
        labels = list(self.split_per_story)
        if len(labels) != len(self.story_offsets):
            raise ValidationError(
                f"{self.subject_id}: split has {len(labels)} stories, offsets have {len(self.story_offsets)}")
        if any(l not in (TRAIN, TEST) for l in labels):
            raise ValidationError(f"{self.subject_id}: split labels must be 'train'/'test'")
        for want in (TRAIN, TEST):
            idx = [i for i, l in enumerate(labels) if l == want]
            if idx and idx != list(range(idx[0], idx[-1] + 1)):
                raise ValidationError(f"{self.subject_id}: {want} stories are not contiguous")
        self.split_per_story = labels

    @property
    def n_trs(self) -> int:
        return self.values.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.values.shape[1]

    def story_slices(self) -> list[slice]:
        return story_slices(self.story_offsets, self.n_trs)

    @property
    def train_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_trs, dtype=bool)
        for label, sl in zip(self.split_per_story, self.story_slices()):
            if label == TRAIN:
                mask[sl] = True
        return mask

    @property
    def test_mask(self) -> np.ndarray:
        return ~self.train_mask


# ---------------------------------------------------------------------------
# TimedAnnotation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TimedAnnotation:
    """Word or phoneme tokens for one story, with onsets/durations in seconds."""

    kind: str  # "word" | "phoneme"
    story_id: str
    texts: list[str]
    onsets: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        if self.kind not in ("word", "phoneme"):
            raise ValidationError(f"unknown annotation kind {self.kind!r}")
        self.onsets = np.asarray(self.onsets, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        if not (len(self.texts) == self.onsets.size == self.durations.size):
            raise ValidationError(f"{self.story_id}: token/onset/duration lengths differ")
        if np.any(np.diff(self.onsets) < 0):
            raise ValidationError(f"{self.story_id}: onsets must be non-decreasing")
        if np.any(self.durations < 0):
            raise ValidationError(f"{self.story_id}: durations must be non-negative")

    def __len__(self) -> int:
        return len(self.texts)


def load_annotation(path: str | Path, kind: str, story_id: str | None = None) -> TimedAnnotation:
    """Read a UTF-8 TSV with columns token<TAB>onset_s<TAB>duration_s."""
    path = Path(path)
    texts: list[str] = []
    onsets: list[float] = []
    durations: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated columns")
            try:
                onset, dur = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad number ({exc})") from exc
            texts.append(parts[0])
            onsets.append(onset)
            durations.append(dur)
    return TimedAnnotation(kind=kind, story_id=story_id or path.stem,
                           texts=texts, onsets=np.array(onsets), durations=np.array(durations))


def save_annotation(ann: TimedAnnotation, path: str | Path) -> None:
    lines = [f"{t}\t{float(o)!r}\t{float(d)!r}"
             for t, o, d in zip(ann.texts, ann.onsets, ann.durations)]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# RoiAtlas
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class RoiAtlas:
    """Per-voxel ROI labels and named label groups (AG, LTC, EVC, ...)."""

    voxel_labels: np.ndarray  # one label string per voxel
    groups: dict[str, frozenset[str]]

    def __post_init__(self):
        self.voxel_labels = np.asarray(self.voxel_labels, dtype=str)
        present = set(self.voxel_labels.tolist())
        self.groups = {name: frozenset(labels) for name, labels in self.groups.items()}
        for name, labels in self.groups.items():
            missing = labels - present
            if missing:
                raise ValidationError(f"group {name!r} references absent labels {sorted(missing)}")

    @property
    def n_voxels(self) -> int:
        return self.voxel_labels.size

    def group_mask(self, group: str) -> np.ndarray:
        if group not in self.groups:
            raise KeyError(f"unknown ROI group {group!r}")
        return np.isin(self.voxel_labels, sorted(self.groups[group]))


def load_atlas(csv_path: str | Path, groups_json_path: str | Path) -> RoiAtlas:
    """Atlas from a `voxel_index,label` CSV plus a JSON group map."""
    rows: dict[int, str] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().lower() == "voxel_index":
                continue
            rows[int(rec[0])] = rec[1].strip()
    if sorted(rows) != list(range(len(rows))):
        raise ValidationError(f"{csv_path}: voxel indices must cover 0..{len(rows) - 1}")
    labels = np.array([rows[i] for i in range(len(rows))], dtype=str)
    with open(groups_json_path, encoding="utf-8") as fh:
        groups = {k: frozenset(v) for k, v in json.load(fh).items()}
    return RoiAtlas(voxel_labels=labels, groups=groups)


def save_atlas(atlas: RoiAtlas, csv_path: str | Path, groups_json_path: str | Path) -> None:
    lines = ["voxel_index,label"] + [f"{i},{lab}" for i, lab in enumerate(atlas.voxel_labels)]
    atomic_write_bytes(Path(csv_path), ("\n".join(lines) + "\n").encode("utf-8"))
    dump_json({k: sorted(v) for k, v in atlas.groups.items()}, Path(groups_json_path))


# ---------------------------------------------------------------------------
# NPY + sidecar IO
# ---------------------------------------------------------------------------

def _sidecar_path(npy_path: Path) -> Path:
    return npy_path.with_name(npy_path.name[:-len(".npy")] + ".meta.json") \
        if npy_path.name.endswith(".npy") else npy_path.with_suffix(".meta.json")


def _read_sidecar(npy_path: Path) -> dict:
    side = _sidecar_path(npy_path)
    if not side.exists():
        raise FormatError(f"missing metadata sidecar {side}")
    try:
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: malformed JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{side}: sidecar must be a JSON object")
    return meta


def save_feature_matrix(fm: FeatureMatrix, directory: str | Path) -> Path:
    """Write `<name>.npy` + `<name>.meta.json` (and `<name>.onsets.npy` if irregular)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    npy_path = directory / f"{fm.name}.npy"
    save_npy(fm.values, npy_path)
    sampling: dict[str, object] = {"kind": fm.sampling.kind}
    if fm.sampling.kind == "per_TR":
        sampling["tr_seconds"] = fm.sampling.tr_seconds
    elif fm.sampling.kind == "frame_rate":
        sampling["hz"] = fm.sampling.hz
    else:
        onsets_name = f"{fm.name}.onsets.npy"
        save_npy(fm.sampling.onsets, directory / onsets_name)
        sampling["onsets_path"] = onsets_name
    meta = {
        "name": fm.name,
        "kind": "feature",
        "sampling": sampling,
        "story_offsets": [int(x) for x in fm.story_offsets],
    }
    dump_json(meta, _sidecar_path(npy_path))
    return npy_path


def load_feature_matrix(path: str | Path) -> FeatureMatrix:
    """Load and validate a feature matrix from its `.npy` path."""
    npy_path = Path(path)
    if not npy_path.exists():
        raise FormatError(f"no such file: {npy_path}")
    values = load_npy(npy_path)
    meta = _read_sidecar(npy_path)
    if meta.get("kind", "feature") != "feature":
        raise FormatError(f"{npy_path}: sidecar kind {meta.get('kind')!r} is not a feature")
    try:
        s = meta["sampling"]
        kind = s["kind"]
        if kind == "per_TR":
            sampling = Sampling.per_tr(float(s["tr_seconds"]))
        elif kind == "frame_rate":
            sampling = Sampling.frame_rate(float(s["hz"]))
        elif kind == "irregular":
            sampling = Sampling.irregular(load_npy(npy_path.parent / s["onsets_path"]).ravel())
        else:
            raise FormatError(f"{npy_path}: unknown sampling kind {kind!r}")
        name = meta["name"]
        story_offsets = np.asarray(meta["story_offsets"], dtype=np.int64)
    except KeyError as exc:
        raise FormatError(f"{npy_path}: sidecar missing field {exc}") from exc
    return FeatureMatrix(name=name, values=values, sampling=sampling, story_offsets=story_offsets)


def save_response_matrix(rm: ResponseMatrix, directory: str | Path, name: str | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or f"{rm.subject_id}_{rm.modality}"
    npy_path = directory / f"{name}.npy"
    save_npy(rm.values, npy_path)
    meta = {
        "name": name,
        "kind": "response",
        "subject_id": rm.subject_id,
        "modality": rm.modality,
        "tr_seconds": rm.tr_seconds,
        "story_offsets": [int(x) for x in rm.story_offsets],
        "split": list(rm.split_per_story),
    }
    dump_json(meta, _sidecar_path(npy_path))
    return npy_path


def load_response_matrix(path: str | Path) -> ResponseMatrix:
    npy_path = Path(path)
    if not npy_path.exists():
        raise FormatError(f"no such file: {npy_path}")
    values = load_npy(npy_path)
    meta = _read_sidecar(npy_path)
    if meta.get("kind") != "response":
        raise FormatError(f"{npy_path}: sidecar kind {meta.get('kind')!r} is not a response")
    try:
        return ResponseMatrix(
            subject_id=meta["subject_id"],
            modality=meta["modality"],
            values=values,
            split_per_story=meta["split"],
            tr_seconds=float(meta.get("tr_seconds", TR_SECONDS)),
            story_offsets=np.asarray(meta["story_offsets"], dtype=np.int64),
        )
    except KeyError as exc:
        raise FormatError(f"{npy_path}: sidecar missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

def default_lambda_grid() -> list[float]:
    """10 log-spaced penalties spanning 10^1..10^3."""
    return [float(x) for x in np.logspace(1.0, 3.0, 10)]


@dataclass
class RidgeOptions:
    n_boots: int = 50
    chunk_len: int = 40
    holdout_frac: float = 0.2

    def __post_init__(self):
        if self.n_boots < 1 or self.chunk_len < 1:
            raise ConfigError("ridge options must be positive")
        if not 0 < self.holdout_frac < 1:
            raise ConfigError("holdout_frac must be in (0, 1)")


@dataclass
class CeilingOptions:
    subset_sizes: list[int] | None = None  # participant-count values s; None = [2..n_subjects]
    pca_cap: int | None = None  # top-k PCs of the predictor matrix; None = off
    n_boots: int | None = None  # None = inherit ridge.n_boots
    predictor: str = "concat"  # "concat" other-subject voxels | "mean" across subjects
    pooling: str = "evaluations"  # mean over all evaluations | "sizes": mean of per-size means

    def __post_init__(self):
        if self.predictor not in ("concat", "mean"):
            raise ConfigError(f"unknown ceiling predictor {self.predictor!r}")
        if self.pooling not in ("evaluations", "sizes"):
            raise ConfigError(f"unknown ceiling pooling {self.pooling!r}")


@dataclass
class ExperimentConfig:
    """One JSON document driving the whole experiment graph.

    Paths are resolved relative to the config file's directory (``base_dir``).
    """

    features_dir: str = "features"
    responses_dir: str = "responses"
    out_dir: str = "out"
    representations: list[str] = field(default_factory=list)
    remove: list[list[str]] = field(default_factory=list)  # each entry = one removal design
    modalities: list[str] = field(default_factory=lambda: ["reading", "listening"])
    lambda_grid: list[float] = field(default_factory=default_lambda_grid)
    removal_lambda_grid: list[float] | None = None  # None -> lambda_grid
    n_delays: int = 6
    block_len: int = 10
    n_permutations: int = 5000
    ceiling_threshold: float = 0.05
    rng_seed: int = 0
    ridge: RidgeOptions = field(default_factory=RidgeOptions)
    ceiling: CeilingOptions = field(default_factory=CeilingOptions)
    atlas_csv: str | None = None
    atlas_groups: str | None = None
    stimuli: dict = field(default_factory=dict)  # annotation/audio inputs for the features stage
    synth: dict | None = None
    workers: int = 1
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        grid = [float(x) for x in self.lambda_grid]
        if not grid or any(x <= 0 for x in grid):
            raise ConfigError("lambda_grid must be non-empty and positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("lambda_grid must be strictly ascending")
        self.lambda_grid = grid
        if self.removal_lambda_grid is not None:
            rgrid = [float(x) for x in self.removal_lambda_grid]
            if not rgrid or any(x <= 0 for x in rgrid):
                raise ConfigError("removal_lambda_grid must be non-empty and positive")
            self.removal_lambda_grid = rgrid
        if self.block_len < 1:
            raise ConfigError("block_len must be >= 1")
        if not 0 <= self.ceiling_threshold < 1:
            raise ConfigError("ceiling_threshold must be in [0, 1)")
        if self.n_delays < 1:
            raise ConfigError("n_delays must be >= 1")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be non-negative")
        self.remove = [[e] if isinstance(e, str) else list(e) for e in self.remove]

    @property
    def delays(self) -> list[int]:
        return list(range(1, self.n_delays + 1))

    def resolve(self, rel: str | Path) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else (self.base_dir / p)

    # -- JSON round trip ----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "ridge" in doc and isinstance(doc["ridge"], dict):
            doc["ridge"] = RidgeOptions(**doc["ridge"])
        if "ceiling" in doc and isinstance(doc["ceiling"], dict):
            doc["ceiling"] = CeilingOptions(**doc["ceiling"])
        try:
            return cls(base_dir=Path(base_dir), **doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc.pop("base_dir")
        return doc

    def apply_overrides(self, overrides: Sequence[str]) -> "ExperimentConfig":
        """Apply `key=value` overrides (dotted keys reach nested options)."""
        doc = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = doc
            parts = key.split(".")
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    raise ConfigError(f"override {key!r}: no such config section {part!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"override {key!r}: no such config field")
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(doc, base_dir=self.base_dir)


# ---------------------------------------------------------------------------
# Cross-matrix validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def add(self, message: str) -> None:
        self.mismatches.append(message)


def check_alignment(features: Sequence[FeatureMatrix], responses: Sequence[ResponseMatrix]) -> ValidationReport:
    """Cross-check loaded matrices: per modality, every per-TR feature must share
    the responses' row count and story offsets; non-TR features must at least
    agree on the story count.  Failures are reported, not raised.
    """
    report = ValidationReport()
    by_modality: dict[str, list[ResponseMatrix]] = {}
    for rm in responses:
        by_modality.setdefault(rm.modality, []).append(rm)
    for modality, rms in by_modality.items():
        ref = rms[0]
        for rm in rms[1:]:
            if rm.n_trs != ref.n_trs:
                report.add(f"{modality}: subject {rm.subject_id} has {rm.n_trs} TRs, "
                           f"subject {ref.subject_id} has {ref.n_trs}")
            if not np.array_equal(rm.story_offsets, ref.story_offsets):
                report.add(f"{modality}: story_offsets disagree between subjects "
                           f"{rm.subject_id} and {ref.subject_id}")
            if rm.split_per_story != ref.split_per_story:
                report.add(f"{modality}: split disagrees between subjects "
                           f"{rm.subject_id} and {ref.subject_id}")
        for fm in features:
            if fm.sampling.kind == "per_TR":
                if fm.n_rows != ref.n_trs:
                    report.add(f"{modality}: feature {fm.name!r} has {fm.n_rows} rows, "
                               f"responses have {ref.n_trs}")
                elif not np.array_equal(fm.story_offsets, ref.story_offsets):
                    report.add(f"{modality}: story_offsets of feature {fm.name!r} "
                               f"disagree with responses")
            else:
                if len(fm.story_offsets) != len(ref.story_offsets):
                    report.add(f"{modality}: feature {fm.name!r} has {len(fm.story_offsets)} "
                               f"stories, responses have {len(ref.story_offsets)}")
    return report


def validate_experiment(config: ExperimentConfig) -> ValidationReport:
    """Load every matrix the config references and cross-check their shapes.

    The report carries one entry per mismatch; it never raises for mismatches
    (malformed files still raise FormatError/ValidationError).
    """
    features_dir = config.resolve(config.features_dir)
    responses_dir = config.resolve(config.responses_dir)
    features = []
    report = ValidationReport()
    wanted = set(config.representations)
    for group in config.remove:
        wanted.update(group)
    for name in sorted(wanted):
        path = features_dir / f"{name}.npy"
        if not path.exists():
            report.add(f"feature {name!r}: no file at {path}")
            continue
        features.append(load_feature_matrix(path))
    responses = []
    if responses_dir.is_dir():
        for path in sorted(responses_dir.glob("*.npy")):
            if path.name.endswith(".onsets.npy"):
                continue
            responses.append(load_response_matrix(path))
    if not responses:
        report.add(f"no response matrices found under {responses_dir}")
    inner = check_alignment(features, responses)
    report.mismatches.extend(inner.mismatches)
    return report
