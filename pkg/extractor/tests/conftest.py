import wave

import numpy as np
import pytest
import torch


@pytest.fixture(scope="session")
def bert_dir(tmp_path_factory):
    """Tiny randomly initialized BERT plus a word-piece tokenizer, saved
    locally so everything runs offline."""
    from transformers import BertConfig, BertModel, BertTokenizer

    d = tmp_path_factory.mktemp("tinybert")
    vocab = (["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
             + [f"w{i}" for i in range(60)]
             + ["chunk", "##ed", "##s"])
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = BertTokenizer(str(d / "vocab.txt"), do_lower_case=True)
    tok.save_pretrained(d)
    torch.manual_seed(0)
    config = BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=2,
                        num_attention_heads=2, intermediate_size=32,
                        max_position_embeddings=64)
    BertModel(config).save_pretrained(d)
    return d


@pytest.fixture(scope="session")
def wav2vec_dir(tmp_path_factory):
    """Tiny randomly initialized wav2vec-style encoder with a 320x conv
    downsampler (so long windows stay cheap)."""
    from transformers import Wav2Vec2Config, Wav2Vec2FeatureExtractor, Wav2Vec2Model

    d = tmp_path_factory.mktemp("tinywav")
    torch.manual_seed(0)
    config = Wav2Vec2Config(
        vocab_size=32, hidden_size=16, num_hidden_layers=2, num_attention_heads=2,
        intermediate_size=32, conv_dim=(16, 16, 16), conv_stride=(8, 8, 5),
        conv_kernel=(10, 8, 5), num_feat_extract_layers=3,
        num_conv_pos_embeddings=16, num_conv_pos_embedding_groups=4)
    Wav2Vec2Model(config).save_pretrained(d)
    Wav2Vec2FeatureExtractor(feature_size=1, sampling_rate=16000, padding_value=0.0,
                             do_normalize=True).save_pretrained(d)
    return d


def write_words_tsv(path, words, spacing=0.35, start=0.1):
    lines = [f"{w}\t{start + i * spacing}\t0.2" for i, w in enumerate(words)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_wav(path, seconds, rate=16000, seed=0):
    rng = np.random.default_rng(seed)
    data = (rng.uniform(-0.2, 0.2, size=int(seconds * rate)) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(data.tobytes())
    return path
