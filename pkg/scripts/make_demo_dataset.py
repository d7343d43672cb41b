#!/usr/bin/env python3
"""Fabricate a tiny annotation/audio dataset and run the real-data feature
stage on it, exercising the TSV, WAV, and precomputed-NPY interfaces."""

import argparse
import json
from pathlib import Path

import numpy as np

from resid_align.data_model import (ExperimentConfig, FeatureMatrix, ResponseMatrix, Sampling,
                                    TimedAnnotation, save_annotation, save_feature_matrix,
                                    save_response_matrix)
from resid_align.pipeline import run
from resid_align.stimulus_features import ARPABET_39

TR = 2.0045
STORIES = {"story1": 8, "story2": 6}  # TRs per story
RATE = 16000


def fake_story_annotations(rng, story, n_trs):
    words, phones = [], []
    t = 0.1
    while t < n_trs * TR - 0.3:
        length = int(rng.integers(1, 9))
        words.append(("w" * length, t, 0.2))
        for k in range(max(1, length // 2)):
            phones.append((ARPABET_39[int(rng.integers(0, 39))], t + 0.02 * k, 0.02))
        t += float(rng.uniform(0.15, 0.6))
    return words, phones


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, default=Path("demo_dataset"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    root = args.workdir
    for sub in ("annotations/words", "annotations/phones", "audio", "frames",
                "precomputed", "responses"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    n_trs_total = sum(STORIES.values())
    offsets = np.concatenate([[0], np.cumsum(list(STORIES.values()))[:-1]])

    for story, n_trs in STORIES.items():
        words, phones = fake_story_annotations(rng, story, n_trs)
        for kind, tokens, sub in (("word", words, "words"), ("phoneme", phones, "phones")):
            ann = TimedAnnotation(kind=kind, story_id=story,
                                  texts=[t[0] for t in tokens],
                                  onsets=np.array([t[1] for t in tokens]),
                                  durations=np.array([t[2] for t in tokens]))
            save_annotation(ann, root / "annotations" / sub / f"{story}.tsv")
        # band-limited noise as audio
        n_samples = int(round(n_trs * TR * RATE))
        audio = rng.normal(size=n_samples).astype(np.float32) * 0.1
        from scipy.io import wavfile

        wavfile.write(root / "audio" / f"{story}.wav", RATE, audio)

    # phonological frame stream (18 descriptors at 100 Hz) and motion energy
    frame_counts = [int(n * TR * 100) for n in STORIES.values()]
    frames = FeatureMatrix(
        name="phonological_frames",
        values=rng.uniform(0, 1, size=(sum(frame_counts), 18)),
        sampling=Sampling.frame_rate(100.0),
        story_offsets=np.concatenate([[0], np.cumsum(frame_counts)[:-1]]))
    save_feature_matrix(frames, root / "frames")
    motion = FeatureMatrix(name="motion_energy", values=rng.normal(size=(n_trs_total, 39)),
                           sampling=Sampling.per_tr(TR), story_offsets=offsets)
    save_feature_matrix(motion, root / "precomputed")

    for i in range(2):
        rm = ResponseMatrix(subject_id=f"s{i + 1:02d}", modality="listening",
                            values=rng.normal(size=(n_trs_total, 20)),
                            split_per_story=["train", "test"],
                            story_offsets=offsets, tr_seconds=TR)
        save_response_matrix(rm, root / "responses")

    doc = {
        "representations": [],
        "remove": [],
        "modalities": ["listening"],
        "stimuli": {
            "families": ["textual", "phonemes", "audio", "phonological", "precomputed"],
            "stories": list(STORIES),
            "words_dir": "annotations/words",
            "phones_dir": "annotations/phones",
            "audio_dir": "audio",
            "phonological_frames": "frames/phonological_frames.npy",
            "precomputed": {"motion_energy": "precomputed/motion_energy.npy"},
        },
    }
    (root / "config.json").write_text(json.dumps(doc, indent=2))
    result = run(ExperimentConfig.from_json(root / "config.json"), "features")
    print(f"executed {len(result.executed)} feature nodes")
    for p in sorted((root / "features").glob("*.npy")):
        print("  wrote", p.name)


if __name__ == "__main__":
    main()
