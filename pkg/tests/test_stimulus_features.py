import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resid_align.data_model import (FeatureMatrix, Sampling, TimedAnnotation, ValidationError,
                                    save_feature_matrix)
from resid_align.stimulus_features import (ARPABET_39, ARTICULATION_FEATURES, DspParams,
                                           PhonemeInventory, TrGrid, audio_dsp,
                                           band_power_spectrum, default_inventory,
                                           frame_level_features, ingest_precomputed,
                                           inventory_from_annotations, load_inventory,
                                           mel_filterbank, normalize_phoneme,
                                           phoneme_features, phonological_functionals,
                                           save_inventory, textual_features)


def ann(kind, tokens, story="st1"):
    texts = [t[0] for t in tokens]
    onsets = np.array([t[1] for t in tokens], dtype=float)
    durs = np.array([t[2] if len(t) > 2 else 0.1 for t in tokens], dtype=float)
    return TimedAnnotation(kind=kind, story_id=story, texts=texts, onsets=onsets, durations=durs)


GRID = TrGrid(n_trs_per_story=(3,), tr_seconds=2.0)


class TestTrGrid:
    def test_offsets(self):
        g = TrGrid(n_trs_per_story=(4, 3), tr_seconds=2.0)
        assert g.n_trs == 7
        assert g.story_offsets.tolist() == [0, 4]

    def test_tr_index(self):
        g = TrGrid(n_trs_per_story=(3,), tr_seconds=2.0)
        assert g.tr_index(0.0, 0) == 0
        assert g.tr_index(1.999, 0) == 0
        assert g.tr_index(2.0, 0) == 1
        assert g.tr_index(6.0, 0) is None  # off the grid
        assert g.tr_index(-0.1, 0) is None


class TestTextual:
    def test_the_cat(self):
        words = ann("word", [("The", 0.1), ("cat", 0.5)])
        fm = textual_features([words], GRID)
        assert fm.dim == 3
        assert fm.values[0].tolist() == [6.0, 2.0, 0.0]

    def test_length_std(self):
        words = ann("word", [("a", 0.1), ("see", 0.5)])
        fm = textual_features([words], GRID)
        # population std of {1, 3} is 1.0
        assert fm.values[0].tolist() == [4.0, 2.0, 1.0]

    def test_empty_tr_all_zero(self):
        words = ann("word", [("hello", 4.2)])
        fm = textual_features([words], GRID)
        assert np.all(fm.values[0] == 0) and np.all(fm.values[1] == 0)
        assert fm.values[2, 1] == 1

    def test_punctuation_not_a_word(self):
        words = ann("word", [("--", 0.1), ("don't", 0.2)])
        fm = textual_features([words], GRID)
        assert fm.values[0, 1] == 1  # only "don't" counts
        assert fm.values[0, 0] == 4  # d o n t

    def test_multi_story(self):
        g = TrGrid(n_trs_per_story=(2, 2), tr_seconds=2.0)
        fm = textual_features([ann("word", [("ab", 0.0)], "a"),
                               ann("word", [("cde", 0.0)], "b")], g)
        assert fm.values[0, 0] == 2 and fm.values[2, 0] == 3
        assert fm.story_offsets.tolist() == [0, 2]


class TestInventory:
    def test_default_shapes(self):
        inv = default_inventory()
        assert len(inv.monophones) == 39
        assert len(inv.diphones) == 858
        assert len(set(inv.diphones)) == 858
        assert inv.articulation.shape == (39, 22)
        assert set(np.unique(inv.articulation)) <= {0.0, 1.0}

    def test_articulation_sanity(self):
        inv = default_inventory()
        b = inv.articulation[inv.monophones.index("B")]
        for feat in ("consonant", "voiced", "stop", "bilabial"):
            assert b[ARTICULATION_FEATURES.index(feat)] == 1
        aa = inv.articulation[inv.monophones.index("AA")]
        assert aa[ARTICULATION_FEATURES.index("vowel")] == 1
        assert aa[ARTICULATION_FEATURES.index("consonant")] == 0

    def test_wrong_cardinality_rejected(self):
        inv = default_inventory()
        with pytest.raises(ValidationError, match="858"):
            PhonemeInventory(monophones=inv.monophones, diphones=inv.diphones[:857],
                             articulation=inv.articulation)

    def test_normalize_strips_stress(self):
        assert normalize_phoneme("AH0") == "AH"
        assert normalize_phoneme("ah1") == "AH"

    def test_from_annotations_ranks_observed_pairs_first(self):
        phones = ann("phoneme", [("D", 0.0), ("AH", 0.1), ("G", 0.2), ("D", 0.3), ("AH", 0.4)])
        inv = inventory_from_annotations([phones])
        assert inv.diphones[0] == ("D", "AH")  # most frequent
        assert len(inv.diphones) == 858

    def test_json_round_trip(self, tmp_path):
        inv = default_inventory()
        save_inventory(inv, tmp_path / "inv.json")
        back = load_inventory(tmp_path / "inv.json")
        assert back.monophones == inv.monophones
        assert back.diphones == inv.diphones
        assert np.array_equal(back.articulation, inv.articulation)


class TestPhonemeFeatures:
    def test_dog_case(self):
        inv = default_inventory()
        phones = ann("phoneme", [("D", 0.2), ("AH", 0.5), ("G", 0.9)])
        out = phoneme_features([phones], inv, GRID)
        assert out["num_phonemes"].values[0, 0] == 3
        mono = out["monophone"].values[0]
        for p in ("D", "AH", "G"):
            assert mono[inv.monophones.index(p)] == 1
        assert mono.sum() == 3
        di = out["diphone"].values[0]
        on = {inv.diphones[i] for i in np.flatnonzero(di)}
        assert on == {("D", "AH"), ("AH", "G")}

    def test_empty_tr_is_zero(self):
        inv = default_inventory()
        phones = ann("phoneme", [("D", 0.2)])
        out = phoneme_features([phones], inv, GRID)
        for fm in out.values():
            assert np.all(fm.values[1] == 0)

    def test_pair_straddling_tr_boundary_goes_to_second(self):
        inv = default_inventory()
        phones = ann("phoneme", [("D", 1.9), ("AH", 2.1)])
        out = phoneme_features([phones], inv, GRID)
        d = inv.diphone_index("D", "AH")
        assert out["diphone"].values[1, d] == 1
        assert out["diphone"].values[0, d] == 0

    def test_unknown_phoneme_named_in_error(self):
        inv = default_inventory()
        with pytest.raises(ValidationError, match="XX"):
            phoneme_features([ann("phoneme", [("XX", 0.1)])], inv, GRID)

    def test_articulation_sums(self):
        inv = default_inventory()
        phones = ann("phoneme", [("B", 0.1), ("B", 0.5)])
        out = phoneme_features([phones], inv, GRID)
        b_vec = inv.articulation[inv.monophones.index("B")]
        assert np.array_equal(out["articulation"].values[0], 2 * b_vec)

    def test_stress_digits_accepted(self):
        inv = default_inventory()
        out = phoneme_features([ann("phoneme", [("AH0", 0.1), ("IY1", 0.4)])], inv, GRID)
        assert out["num_phonemes"].values[0, 0] == 2

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_conservation_and_rowsum_properties(self, seed):
        rng = np.random.default_rng(seed)
        inv = default_inventory()
        n = int(rng.integers(1, 40))
        onsets = np.sort(rng.uniform(0, 5.9, size=n))
        labels = [ARPABET_39[i] for i in rng.integers(0, 39, size=n)]
        phones = ann("phoneme", list(zip(labels, onsets)))
        out = phoneme_features([phones], inv, GRID)
        # conservation: per-story totals equal the story's phoneme count
        assert out["num_phonemes"].values.sum() == n
        # monophone row sums equal num_phonemes
        assert np.array_equal(out["monophone"].values.sum(axis=1),
                              out["num_phonemes"].values[:, 0])
        # diphone outputs are indicators
        assert set(np.unique(out["diphone"].values)) <= {0.0, 1.0}


# ---------------------------------------------------------------------------
# Independent DSP oracle: explicit framing, direct DFT, hand-built filterbank
# ---------------------------------------------------------------------------

def oracle_hann(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / (n - 1))


def oracle_frames(audio, rate, win_s=0.025, hop_s=0.010, pre=0.97):
    win, hop = round(win_s * rate), round(hop_s * rate)
    emph = np.concatenate([[audio[0]], audio[1:] - pre * audio[:-1]])
    frames = []
    i = 0
    while i + win <= len(emph):
        frames.append(emph[i:i + win] * oracle_hann(win))
        i += hop
    return np.array(frames)


def oracle_power(frames, n_fft):
    idx = np.arange(n_fft // 2 + 1)
    t = np.arange(n_fft)
    basis = np.exp(-2j * np.pi * np.outer(idx, t) / n_fft)
    padded = np.zeros((len(frames), n_fft))
    padded[:, :frames.shape[1]] = frames
    return np.abs(padded @ basis.T) ** 2


def oracle_mel_bank(n_filters, n_fft, rate):
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    pts = from_mel(np.linspace(to_mel(0.0), to_mel(rate / 2.0), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    bank = np.zeros((n_filters, freqs.size))
    for i in range(n_filters):
        for j, f in enumerate(freqs):
            if pts[i] <= f <= pts[i + 1] and pts[i + 1] > pts[i]:
                bank[i, j] = (f - pts[i]) / (pts[i + 1] - pts[i])
            elif pts[i + 1] < f <= pts[i + 2]:
                bank[i, j] = (pts[i + 2] - f) / (pts[i + 2] - pts[i + 1])
    return bank


def oracle_dct2_ortho(x, n_out):
    n = x.shape[1]
    k = np.arange(n)[None, :, None]  # input index
    m = np.arange(n_out)[None, None, :]  # output index
    table = np.cos(np.pi * (2 * k + 1) * m / (2 * n))[0]  # (n, n_out)
    out = 2.0 * x @ table
    scale = np.full(n_out, np.sqrt(1.0 / (2 * n)))
    scale[0] = np.sqrt(1.0 / (4 * n))
    return out * scale


def tone(rate=16000, seconds=1.0, hz=440.0):
    t = np.arange(int(rate * seconds)) / rate
    return np.sin(2 * np.pi * hz * t)


def rel_err(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


class TestAudioDsp:
    def test_oracle_match_on_tone(self):
        rate = 16000
        audio = tone(rate)
        feats, times = frame_level_features(audio, rate, DspParams())
        frames = oracle_frames(audio, rate)
        n_fft = 512
        power = oracle_power(frames, n_fft)
        fbank_o = np.log(power @ oracle_mel_bank(26, n_fft, rate).T + 1e-10)
        mel_o = np.log(power @ oracle_mel_bank(80, n_fft, rate).T + 1e-10)
        mfcc_o = oracle_dct2_ortho(fbank_o, 26)[:, :13]
        assert feats["fbank"].shape[1] == 26
        assert feats["mel"].shape[1] == 80
        assert feats["mfcc"].shape[1] == 13
        assert rel_err(feats["fbank"], fbank_o) < 1e-4
        assert rel_err(feats["mel"], mel_o) < 1e-4
        assert rel_err(feats["mfcc"], mfcc_o) < 1e-4

    def test_tone_peaks_in_correct_mel_band(self):
        rate = 16000
        grid = TrGrid(n_trs_per_story=(2,), tr_seconds=0.5)
        out = audio_dsp(tone(rate), rate, grid)
        mel = out["mel"].values
        band = int(np.argmax(mel.mean(axis=0)))
        bank = mel_filterbank(80, 512, rate)
        freqs = np.fft.rfftfreq(512, 1 / rate)
        support = freqs[bank[band] > 0]
        assert support.min() <= 440.0 <= support.max()

    def test_powspec_dims_and_range(self):
        rate = 44100
        rng = np.random.default_rng(0)
        grid = TrGrid(n_trs_per_story=(1,), tr_seconds=2.0)
        audio = rng.normal(size=int(rate * 2.0))
        out, dead = band_power_spectrum(audio, rate, grid, DspParams())
        assert out.shape == (1, 448)
        assert dead == []  # nyquist above 15 kHz

    def test_powspec_top_bands_zeroed_below_30k(self):
        rate = 16000
        rng = np.random.default_rng(0)
        grid = TrGrid(n_trs_per_story=(1,), tr_seconds=2.0)
        out, dead = band_power_spectrum(rng.normal(size=rate * 2), rate, grid, DspParams())
        assert len(dead) > 0
        assert np.all(out[:, dead] == 0)
        edges = DspParams().powspec_edges()
        assert all(edges[i] >= rate / 2 for i in dead)

    def test_powspec_white_noise_cov(self):
        # coefficient of variation of linear band power across 100 noise draws
        rate = 44100
        grid = TrGrid(n_trs_per_story=(1,), tr_seconds=2.0)
        rng = np.random.default_rng(7)
        rows = []
        for _ in range(100):
            audio = rng.normal(size=int(rate * 2.0))
            out, _ = band_power_spectrum(audio, rate, grid, DspParams())
            rows.append(10.0 ** out[0])
        rows = np.array(rows)
        cov = rows.std(axis=0) / rows.mean(axis=0)
        assert cov.mean() < 0.2

    def test_rate_below_16k_rejected(self):
        with pytest.raises(ValidationError, match="16 kHz"):
            audio_dsp(np.zeros(8000), 8000, TrGrid((1,), 0.5))

    def test_empty_audio_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            audio_dsp(np.zeros(0), 16000, TrGrid((1,), 0.5))

    def test_audio_must_cover_grid(self):
        with pytest.raises(ValidationError, match="covers"):
            audio_dsp(np.zeros(16000), 16000, TrGrid((4,), 2.0))

    def test_full_per_tr_outputs(self):
        rate = 16000
        grid = TrGrid(n_trs_per_story=(2, 2), tr_seconds=0.5)
        out = audio_dsp(tone(rate, seconds=2.0), rate, grid)
        assert sorted(out) == ["fbank", "mel", "mfcc", "powspec"]
        for fm in out.values():
            assert fm.n_rows == 4
            assert np.array_equal(fm.story_offsets, grid.story_offsets)


class TestPhonologicalFunctionals:
    def _frames(self, values, hz=100.0, offsets=(0,)):
        return FeatureMatrix(name="phonological_frames", values=values,
                             sampling=Sampling.frame_rate(hz),
                             story_offsets=np.asarray(offsets))

    def test_constant_stream(self):
        frames = self._frames(np.full((200, 18), 0.5))
        fm, empty = phonological_functionals(frames, TrGrid((1,), 2.0))
        assert fm.dim == 108
        assert empty == []
        row = fm.values[0].reshape(18, 6)
        assert np.allclose(row[:, 0], 0.5)  # mean
        assert np.allclose(row[:, 1], 0.0)  # std
        assert np.allclose(row[:, 2], 0.0)  # skew, defined 0 at zero variance
        assert np.allclose(row[:, 3], 0.0)  # kurt, defined 0 at zero variance
        assert np.allclose(row[:, 4], 0.5)  # max
        assert np.allclose(row[:, 5], 0.5)  # min

    def test_binary_stream(self):
        vals = np.zeros((200, 18))
        vals[::2] = 1.0
        fm, _ = phonological_functionals(self._frames(vals), TrGrid((1,), 2.0))
        row = fm.values[0].reshape(18, 6)
        assert np.allclose(row[:, 0], 0.5)
        assert np.allclose(row[:, 1], 0.5)
        assert np.allclose(row[:, 4], 1.0)
        assert np.allclose(row[:, 5], 0.0)

    def test_empty_tr_flagged(self):
        frames = self._frames(np.ones((100, 18)))  # 1 s of frames at 100 Hz
        fm, empty = phonological_functionals(frames, TrGrid((2,), 2.0))
        assert empty == [1]
        assert np.all(fm.values[1] == 0)

    def test_descriptor_major_order(self):
        vals = np.zeros((100, 18))
        vals[:, 3] = 7.0  # descriptor 3 constant
        fm, _ = phonological_functionals(self._frames(vals), TrGrid((1,), 2.0))
        assert fm.values[0, 3 * 6 + 0] == 7.0  # mean slot of descriptor 3
        assert fm.values[0, 3 * 6 + 4] == 7.0  # max slot
        assert fm.values[0, 0] == 0.0

    def test_wrong_dim_rejected(self):
        with pytest.raises(ValidationError, match="18"):
            phonological_functionals(self._frames(np.ones((10, 4))), TrGrid((1,), 2.0))


class TestIngest:
    def test_motion_energy_accepted(self, tmp_path, rng):
        fm = FeatureMatrix(name="whatever", values=rng.normal(size=(6, 39)),
                           sampling=Sampling.per_tr(2.0))
        path = save_feature_matrix(fm, tmp_path)
        out = ingest_precomputed("motion_energy", path)
        assert out.name == "motion_energy"
        assert out.values.tobytes() == fm.values.tobytes()  # bit-exact

    def test_wrong_dim_rejected(self, tmp_path, rng):
        fm = FeatureMatrix(name="x", values=rng.normal(size=(6, 38)),
                           sampling=Sampling.per_tr(2.0))
        path = save_feature_matrix(fm, tmp_path)
        with pytest.raises(ValidationError, match="39"):
            ingest_precomputed("motion_energy", path)

    def test_unknown_name_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="unknown precomputed"):
            ingest_precomputed("mystery", tmp_path / "x.npy")


class TestMonophonePresenceToggle:
    def test_presence_mode(self):
        inv = default_inventory()
        phones = ann("phoneme", [("D", 0.1), ("D", 0.5), ("G", 0.9)])
        counts = phoneme_features([phones], inv, GRID)["monophone"]
        presence = phoneme_features([phones], inv, GRID, monophone_presence=True)["monophone"]
        d = inv.monophones.index("D")
        assert counts.values[0, d] == 2
        assert presence.values[0, d] == 1
        assert set(np.unique(presence.values)) <= {0.0, 1.0}
