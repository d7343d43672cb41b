import numpy as np
import pytest

from resid_align.data_model import FeatureMatrix, ResponseMatrix, Sampling


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_feature(values, name="f", tr_seconds=2.0045, story_offsets=(0,)):
    return FeatureMatrix(name=name, values=np.asarray(values, dtype=float),
                         sampling=Sampling.per_tr(tr_seconds),
                         story_offsets=np.asarray(story_offsets))


def make_response(values, split=("train", "test"), story_offsets=(0, None), subject="s01",
                  modality="listening"):
    values = np.asarray(values, dtype=float)
    if story_offsets[-1] is None:
        # default: two equal stories
        story_offsets = (0, values.shape[0] // 2)
    return ResponseMatrix(subject_id=subject, modality=modality, values=values,
                          split_per_story=list(split),
                          story_offsets=np.asarray(story_offsets))
