"""Per-TR low-level stimulus features from annotations, raw audio, and ingested
frame streams.

Annotation-derived features (letter/word/phoneme counters, diphone indicators,
articulation sums) bin tokens into TRs by onset.  Audio features are computed
at frame level and Lanczos-aligned to the TR grid, except the band power
spectrum which is computed directly per TR segment.  Frame streams of
phonological descriptors are ingested and summarized into six statistical
functionals per descriptor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.fft import dct
from scipy.io import wavfile

from .data_model import (FeatureMatrix, FormatError, Sampling, TimedAnnotation,
                         ValidationError, atomic_write_bytes, load_feature_matrix)
from .temporal import lanczos_downsample, tr_mid_times

ARPABET_VOWELS = ["AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH",
                  "IY", "OW", "OY", "UH", "UW"]
ARPABET_CONSONANTS = ["B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M",
                      "N", "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y",
                      "Z", "ZH"]
ARPABET_39 = sorted(ARPABET_VOWELS + ARPABET_CONSONANTS)

N_DIPHONES = 858

ARTICULATION_FEATURES = [
    "vowel", "consonant", "voiced", "stop", "affricate", "fricative", "nasal",
    "approximant", "lateral", "rhotic", "bilabial", "labiodental", "dental",
    "alveolar", "postalveolar", "palatal", "velar", "glottal", "front",
    "central", "back", "diphthong",
]

# Active articulatory characteristics per phoneme (binary; 22 features above).
_ARTICULATION_TABLE = {
    "AA": ["vowel", "voiced", "back"],
    "AE": ["vowel", "voiced", "front"],
    "AH": ["vowel", "voiced", "central"],
    "AO": ["vowel", "voiced", "back"],
    "AW": ["vowel", "voiced", "central", "diphthong"],
    "AY": ["vowel", "voiced", "front", "diphthong"],
    "EH": ["vowel", "voiced", "front"],
    "ER": ["vowel", "voiced", "central", "rhotic"],
    "EY": ["vowel", "voiced", "front", "diphthong"],
    "IH": ["vowel", "voiced", "front"],
    "IY": ["vowel", "voiced", "front"],
    "OW": ["vowel", "voiced", "back", "diphthong"],
    "OY": ["vowel", "voiced", "back", "diphthong"],
    "UH": ["vowel", "voiced", "back"],
    "UW": ["vowel", "voiced", "back"],
    "B": ["consonant", "voiced", "stop", "bilabial"],
    "CH": ["consonant", "affricate", "postalveolar"],
    "D": ["consonant", "voiced", "stop", "alveolar"],
    "DH": ["consonant", "voiced", "fricative", "dental"],
    "F": ["consonant", "fricative", "labiodental"],
    "G": ["consonant", "voiced", "stop", "velar"],
    "HH": ["consonant", "fricative", "glottal"],
    "JH": ["consonant", "voiced", "affricate", "postalveolar"],
    "K": ["consonant", "stop", "velar"],
    "L": ["consonant", "voiced", "approximant", "lateral", "alveolar"],
    "M": ["consonant", "voiced", "nasal", "bilabial"],
    "N": ["consonant", "voiced", "nasal", "alveolar"],
    "NG": ["consonant", "voiced", "nasal", "velar"],
    "P": ["consonant", "stop", "bilabial"],
    "R": ["consonant", "voiced", "approximant", "rhotic", "alveolar"],
    "S": ["consonant", "fricative", "alveolar"],
    "SH": ["consonant", "fricative", "postalveolar"],
    "T": ["consonant", "stop", "alveolar"],
    "TH": ["consonant", "fricative", "dental"],
    "V": ["consonant", "voiced", "fricative", "labiodental"],
    "W": ["consonant", "voiced", "approximant", "bilabial", "velar"],
    "Y": ["consonant", "voiced", "approximant", "palatal"],
    "Z": ["consonant", "voiced", "fricative", "alveolar"],
    "ZH": ["consonant", "voiced", "fricative", "postalveolar"],
}

FUNCTIONALS = ["mean", "std", "skew", "kurt", "max", "min"]

PRECOMPUTED_DIMS = {
    "motion_energy": 39,
    "powspec_ref": 448,
    "articulation_ref": 22,
    "phonological_frames": 18,
}


# ---------------------------------------------------------------------------
# TR grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrGrid:
    """Concatenated per-story TR grids; TR i of a story covers
    [i*tr_seconds, (i+1)*tr_seconds) relative to that story's start."""

    n_trs_per_story: tuple[int, ...]
    tr_seconds: float

    def __post_init__(self):
        n = tuple(int(x) for x in self.n_trs_per_story)
        if not n or any(x < 1 for x in n):
            raise ValidationError("every story needs at least one TR")
        object.__setattr__(self, "n_trs_per_story", n)

    @property
    def n_trs(self) -> int:
        return sum(self.n_trs_per_story)

    @property
    def n_stories(self) -> int:
        return len(self.n_trs_per_story)

    @property
    def story_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_trs_per_story)[:-1]]).astype(np.int64)

    def tr_index(self, onset_s: float, story: int) -> int | None:
        """TR of an onset within a story, or None when it falls off the grid."""
        if onset_s < 0:
            return None
        idx = int(onset_s // self.tr_seconds)
        return idx if idx < self.n_trs_per_story[story] else None


def _per_tr(grid: TrGrid, name: str, values: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(name=name, values=values, sampling=Sampling.per_tr(grid.tr_seconds),
                         story_offsets=grid.story_offsets)


def _check_story_count(anns: list[TimedAnnotation], grid: TrGrid) -> None:
    if len(anns) != grid.n_stories:
        raise ValidationError(f"{len(anns)} annotation stories for a {grid.n_stories}-story grid")


# ---------------------------------------------------------------------------
# Phoneme inventory
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PhonemeInventory:
    """Monophone set, ordered diphone list, and the phoneme-to-articulation map."""

    monophones: list[str]
    diphones: list[tuple[str, str]]
    articulation: np.ndarray  # (n_monophones, 22) binary

    def __post_init__(self):
        if len(self.monophones) != 39:
            raise ValidationError(f"expected 39 monophones, got {len(self.monophones)}")
        if len(set(self.monophones)) != 39:
            raise ValidationError("monophones must be unique")
        self.diphones = [tuple(d) for d in self.diphones]
        if len(self.diphones) != N_DIPHONES:
            raise ValidationError(f"expected {N_DIPHONES} diphones, got {len(self.diphones)}")
        if len(set(self.diphones)) != N_DIPHONES:
            raise ValidationError("diphones must be unique")
        self.articulation = np.asarray(self.articulation, dtype=np.float64)
        if self.articulation.shape != (39, len(ARTICULATION_FEATURES)):
            raise ValidationError(f"articulation map must be 39x{len(ARTICULATION_FEATURES)}")
        self._mono_index = {p: i for i, p in enumerate(self.monophones)}
        self._di_index = {d: i for i, d in enumerate(self.diphones)}

    def index_of(self, label: str, context: str = "") -> int:
        norm = normalize_phoneme(label)
        if norm not in self._mono_index:
            raise ValidationError(f"unknown phoneme label {label!r}{context}")
        return self._mono_index[norm]

    def diphone_index(self, first: str, second: str) -> int | None:
        return self._di_index.get((normalize_phoneme(first), normalize_phoneme(second)))


def normalize_phoneme(label: str) -> str:
    """Uppercase and strip stress digits (AH0 -> AH)."""
    return label.strip().upper().rstrip("012")


def default_inventory() -> PhonemeInventory:
    """Deterministic default: the 39-label ARPAbet set, the first 858 ordered
    phoneme pairs in lexicographic order, and the built-in articulation table.

    The diphone list is a placeholder of the conventional cardinality; analyses
    of a specific stimulus set should build the inventory from its own
    annotations (`inventory_from_annotations`) or supply a JSON file.
    """
    pairs = [(a, b) for a in ARPABET_39 for b in ARPABET_39][:N_DIPHONES]
    art = np.zeros((39, len(ARTICULATION_FEATURES)))
    for i, p in enumerate(ARPABET_39):
        for feat in _ARTICULATION_TABLE[p]:
            art[i, ARTICULATION_FEATURES.index(feat)] = 1.0
    return PhonemeInventory(monophones=list(ARPABET_39), diphones=pairs, articulation=art)


def inventory_from_annotations(stories: list[TimedAnnotation]) -> PhonemeInventory:
    """Inventory whose diphone list ranks the observed adjacent pairs by
    frequency (ties lexicographic), padded with unobserved pairs to 858."""
    counts: dict[tuple[str, str], int] = {}
    for ann in stories:
        labels = [normalize_phoneme(t) for t in ann.texts]
        for a, b in zip(labels, labels[1:]):
            counts[(a, b)] = counts.get((a, b), 0) + 1
    observed = sorted(counts, key=lambda d: (-counts[d], d))
    pairs = list(observed[:N_DIPHONES])
    if len(pairs) < N_DIPHONES:
        for cand in ((a, b) for a in ARPABET_39 for b in ARPABET_39):
            if cand not in counts:
                pairs.append(cand)
                if len(pairs) == N_DIPHONES:
                    break
    base = default_inventory()
    return PhonemeInventory(monophones=base.monophones, diphones=pairs,
                            articulation=base.articulation)


def load_inventory(path: str | Path) -> PhonemeInventory:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        monophones = list(doc["monophones"])
        diphones = [tuple(d) for d in doc["diphones"]]
        feats = list(doc["articulation_features"])
        table = doc["articulation_map"]
    except KeyError as exc:
        raise FormatError(f"{path}: inventory missing field {exc}") from exc
    if feats != ARTICULATION_FEATURES:
        raise FormatError(f"{path}: articulation feature list does not match the canonical order")
    art = np.zeros((len(monophones), len(feats)))
    for i, p in enumerate(monophones):
        for feat in table[p]:
            art[i, feats.index(feat)] = 1.0
    return PhonemeInventory(monophones=monophones, diphones=diphones, articulation=art)


def save_inventory(inv: PhonemeInventory, path: str | Path) -> None:
    table = {p: [f for j, f in enumerate(ARTICULATION_FEATURES) if inv.articulation[i, j]]
             for i, p in enumerate(inv.monophones)}
    doc = {
        "monophones": inv.monophones,
        "diphones": [list(d) for d in inv.diphones],
        "articulation_features": ARTICULATION_FEATURES,
        "articulation_map": table,
    }
    atomic_write_bytes(Path(path), (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# Annotation-derived features
# ---------------------------------------------------------------------------

def _word_length(token: str) -> int:
    return sum(c.isalpha() for c in token)


def textual_features(stories: list[TimedAnnotation], grid: TrGrid) -> FeatureMatrix:
    """Letters per TR, words per TR, and the population std of word letter
    lengths within the TR (0 with fewer than 2 words).  Tokens without any
    alphabetic character do not count as words."""
    _check_story_count(stories, grid)
    values = np.zeros((grid.n_trs, 3))
    for s, (ann, off) in enumerate(zip(stories, grid.story_offsets)):
        per_tr_lengths: dict[int, list[int]] = {}
        for token, onset in zip(ann.texts, ann.onsets):
            n_letters = _word_length(token)
            if n_letters == 0:
                continue
            tr = grid.tr_index(onset, s)
            if tr is None:
                continue
            per_tr_lengths.setdefault(tr, []).append(n_letters)
        for tr, lengths in per_tr_lengths.items():
            row = off + tr
            values[row, 0] = sum(lengths)
            values[row, 1] = len(lengths)
            values[row, 2] = float(np.std(lengths)) if len(lengths) >= 2 else 0.0
    return _per_tr(grid, "textual", values)


def phoneme_features(stories: list[TimedAnnotation], inv: PhonemeInventory,
                     grid: TrGrid, monophone_presence: bool = False) -> dict[str, FeatureMatrix]:
    """Per-TR phoneme counters: total count, per-monophone counts (or 0/1
    presence with ``monophone_presence``), diphone presence indicators
    (assigned to the TR of the pair's second phone), and summed articulation
    vectors.  Unknown phoneme labels raise."""
    _check_story_count(stories, grid)
    num = np.zeros((grid.n_trs, 1))
    mono = np.zeros((grid.n_trs, len(inv.monophones)))
    di = np.zeros((grid.n_trs, N_DIPHONES))
    art = np.zeros((grid.n_trs, inv.articulation.shape[1]))
    for s, (ann, off) in enumerate(zip(stories, grid.story_offsets)):
        indices = [inv.index_of(t, context=f" in story {ann.story_id!r}") for t in ann.texts]
        trs = [grid.tr_index(onset, s) for onset in ann.onsets]
        for idx, tr in zip(indices, trs):
            if tr is None:
                continue
            row = off + tr
            num[row, 0] += 1
            mono[row, idx] += 1
            art[row] += inv.articulation[idx]
        for (a, b), tr in zip(zip(ann.texts, ann.texts[1:]), trs[1:]):
            if tr is None:
                continue
            d = inv.diphone_index(a, b)
            if d is not None:
                di[off + tr, d] = 1.0
    if monophone_presence:
        mono = (mono > 0).astype(np.float64)
    return {
        "num_phonemes": _per_tr(grid, "num_phonemes", num),
        "monophone": _per_tr(grid, "monophone", mono),
        "diphone": _per_tr(grid, "diphone", di),
        "articulation": _per_tr(grid, "articulation", art),
    }


# ---------------------------------------------------------------------------
# Audio DSP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DspParams:
    """Frame/filterbank parameters; the band power spectrum uses 448 log-spaced
    bands over 25 Hz..15 kHz computed per TR segment."""

    window_s: float = 0.025
    hop_s: float = 0.010
    n_fbank: int = 26
    n_mel: int = 80
    n_mfcc: int = 13
    powspec_bands: int = 448
    powspec_range_hz: tuple[float, float] = (25.0, 15000.0)
    preemphasis: float = 0.97
    powspec_nperseg: int = 4096

    def __post_init__(self):
        if min(self.window_s, self.hop_s) <= 0 or min(self.n_fbank, self.n_mel, self.n_mfcc,
                                                      self.powspec_bands) <= 0:
            raise ValidationError("DSP parameters must be positive")
        lo, hi = self.powspec_range_hz
        if not 0 < lo < hi:
            raise ValidationError("powspec range must be increasing and positive")

    def powspec_edges(self) -> np.ndarray:
        lo, hi = self.powspec_range_hz
        return np.logspace(np.log10(lo), np.log10(hi), self.powspec_bands + 1)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Mono WAV as float64 in [-1, 1]; PCM16 and float32 are accepted."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0, int(rate)
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64), int(rate)
    raise FormatError(f"{path}: unsupported sample dtype {data.dtype}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, rate: int,
                   f_lo: float = 0.0, f_hi: float | None = None) -> np.ndarray:
    """Triangular mel-spaced filters over the rFFT bins, peak height 1."""
    f_hi = f_hi or rate / 2.0
    mel_pts = np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_filters + 2)
    hz_pts = mel_to_hz(mel_pts)
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    bank = np.zeros((n_filters, freqs.size))
    for i in range(n_filters):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (freqs - left) / max(center - left, 1e-12)
        down = (right - freqs) / max(right - center, 1e-12)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def _frame_signal(audio: np.ndarray, rate: int, params: DspParams) -> tuple[np.ndarray, np.ndarray, int]:
    """Pre-emphasized, Hann-windowed frames plus their center times."""
    win = int(round(params.window_s * rate))
    hop = int(round(params.hop_s * rate))
    emph = np.empty_like(audio)
    emph[0] = audio[0]
    emph[1:] = audio[1:] - params.preemphasis * audio[:-1]
    n_frames = max(1 + (len(emph) - win) // hop, 0)
    if n_frames == 0:
        raise ValidationError("audio shorter than one analysis window")
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emph[idx] * np.hanning(win)[None, :]
    times = (hop * np.arange(n_frames) + win / 2.0) / rate
    n_fft = 1 << (win - 1).bit_length()
    return frames, times, n_fft


_LOG_FLOOR = 1e-10


def frame_level_features(audio: np.ndarray, rate: int, params: DspParams
                         ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Log filterbank energies (fbank/mel) and MFCCs at frame rate.

    Returns ({"fbank": (T, 26), "mel": (T, 80), "mfcc": (T, 13)}, frame_times).
    """
    frames, times, n_fft = _frame_signal(audio, rate, params)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    fbank_filters = mel_filterbank(params.n_fbank, n_fft, rate)
    mel_filters = mel_filterbank(params.n_mel, n_fft, rate)
    log_fbank = np.log(power @ fbank_filters.T + _LOG_FLOOR)
    log_mel = np.log(power @ mel_filters.T + _LOG_FLOOR)
    mfcc = dct(log_fbank, type=2, norm="ortho", axis=1)[:, :params.n_mfcc]
    return {"fbank": log_fbank, "mel": log_mel, "mfcc": mfcc}, times


def band_power_spectrum(audio: np.ndarray, rate: int, grid: TrGrid,
                        params: DspParams) -> tuple[np.ndarray, list[int]]:
    """Log band power per TR segment via Welch averaging into log-spaced bands.

    Bands above Nyquist are zeroed and their indices returned as flags.
    """
    edges = params.powspec_edges()
    centers = np.sqrt(edges[:-1] * edges[1:])
    nyquist = rate / 2.0
    dead_bands = [i for i in range(params.powspec_bands) if edges[i] >= nyquist]
    out = np.zeros((grid.n_trs, params.powspec_bands))
    row = 0
    pos = 0.0
    for s, n_trs in enumerate(grid.n_trs_per_story):
        for i in range(n_trs):
            start = int(round((pos + i * grid.tr_seconds) * rate))
            stop = int(round((pos + (i + 1) * grid.tr_seconds) * rate))
            seg = audio[start:min(stop, len(audio))]
            if seg.size >= 2:
                nperseg = min(params.powspec_nperseg, seg.size)
                freqs, psd = sps.welch(seg, fs=rate, window="hann", nperseg=nperseg,
                                       noverlap=nperseg // 2)
                interp = np.interp(centers, freqs, psd)
                for b in range(params.powspec_bands):
                    if b in dead_bands:
                        continue
                    inside = (freqs >= edges[b]) & (freqs < edges[b + 1])
                    val = psd[inside].mean() if inside.any() else interp[b]
                    out[row, b] = np.log10(val + _LOG_FLOOR)
            row += 1
        pos += n_trs * grid.tr_seconds
    return out, dead_bands


def audio_dsp(audio: np.ndarray, rate: int, grid: TrGrid,
              params: DspParams | None = None) -> dict[str, FeatureMatrix]:
    """All audio features on the TR grid: log filterbank energies (26), log mel
    spectrogram (80), MFCCs (13), and the 448-band power spectrum.

    Frame-level features are Lanczos-downsampled to TR mid-times; the band
    power spectrum is computed directly on each TR segment.
    """
    params = params or DspParams()
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size == 0:
        raise ValidationError("empty audio")
    if rate < 16000:
        raise ValidationError(f"need at least 16 kHz audio, got {rate} Hz")
    duration = audio.size / rate
    needed = grid.n_trs * grid.tr_seconds
    if duration < needed - grid.tr_seconds / 2:
        raise ValidationError(f"audio covers {duration:.2f} s but the TR grid spans {needed:.2f} s")

    feats, times = frame_level_features(audio, rate, params)
    # Frame times are global; build matching global TR mid-times per story.
    mids = []
    pos = 0.0
    for n_trs in grid.n_trs_per_story:
        mids.append(tr_mid_times(n_trs, grid.tr_seconds, start=pos))
        pos += n_trs * grid.tr_seconds
    target = np.concatenate(mids)
    out = {key: lanczos_downsample(mat, times, target, cutoff_hz=0.5 / grid.tr_seconds)
           for key, mat in feats.items()}
    powspec, _ = band_power_spectrum(audio, rate, grid, params)
    out["powspec"] = powspec
    return {key: _per_tr(grid, key, mat) for key, mat in out.items()}


# ---------------------------------------------------------------------------
# Phonological functionals
# ---------------------------------------------------------------------------

def _functionals(rows: np.ndarray) -> np.ndarray:
    """mean/std/skew/kurt/max/min per column; population moments, skew and
    excess kurtosis defined as 0 at zero variance."""
    mean = rows.mean(axis=0)
    centered = rows - mean
    m2 = (centered ** 2).mean(axis=0)
    std = np.sqrt(m2)
    safe = np.where(m2 == 0, 1.0, m2)
    skew = np.where(m2 == 0, 0.0, (centered ** 3).mean(axis=0) / safe ** 1.5)
    kurt = np.where(m2 == 0, 0.0, (centered ** 4).mean(axis=0) / safe ** 2 - 3.0)
    return np.stack([mean, std, skew, kurt, rows.max(axis=0), rows.min(axis=0)], axis=1)


def phonological_functionals(frames: FeatureMatrix, grid: TrGrid
                             ) -> tuple[FeatureMatrix, list[int]]:
    """Six functionals of each of the 18 frame-level descriptors per TR,
    ordered descriptor-major (descriptor 0's mean..min, then descriptor 1's...).

    TRs containing no frames are zero and their row indices are returned.
    """
    if frames.sampling.kind != "frame_rate":
        raise ValidationError("phonological frames must carry frame_rate sampling")
    if frames.dim != 18:
        raise ValidationError(f"expected 18 descriptors, got {frames.dim}")
    if len(frames.story_offsets) != grid.n_stories:
        raise ValidationError("frame stream and grid disagree on story count")
    hz = frames.sampling.hz
    values = np.zeros((grid.n_trs, frames.dim * len(FUNCTIONALS)))
    empty: list[int] = []
    row = 0
    for story, sl in enumerate(frames.story_slices()):
        story_frames = frames.values[sl]
        frame_times = (np.arange(story_frames.shape[0]) + 0.5) / hz
        for i in range(grid.n_trs_per_story[story]):
            lo, hi = i * grid.tr_seconds, (i + 1) * grid.tr_seconds
            inside = (frame_times >= lo) & (frame_times < hi)
            if inside.any():
                values[row] = _functionals(story_frames[inside]).reshape(-1)
            else:
                empty.append(row)
            row += 1
    return _per_tr(grid, "phonological", values), empty


# ---------------------------------------------------------------------------
# Precomputed ingestion
# ---------------------------------------------------------------------------

def ingest_precomputed(name: str, path: str | Path) -> FeatureMatrix:
    """Validated passthrough for externally computed features; the declared
    dimensionality must match."""
    if name not in PRECOMPUTED_DIMS:
        raise ValidationError(f"unknown precomputed feature {name!r}; "
                              f"expected one of {sorted(PRECOMPUTED_DIMS)}")
    fm = load_feature_matrix(path)
    want = PRECOMPUTED_DIMS[name]
    if fm.dim != want:
        raise ValidationError(f"{name}: expected dim {want}, file has {fm.dim}")
    return fm.with_values(fm.values, name=name)
