"""Word-level hidden states: each word is presented with at most
``context_words`` - 1 preceding words, and its final sub-token's hidden state
(or the mean over its sub-tokens) is emitted per requested layer."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .arrayio import read_words_tsv, write_feature
from .spec import ExtractionSpec


def load_text_model(spec: ExtractionSpec):
    from transformers import AutoModel, AutoTokenizer

    path = spec.model_path
    if not Path(path).exists():
        raise FileNotFoundError(f"model not available locally: {path}")
    tokenizer = AutoTokenizer.from_pretrained(path)
    model = AutoModel.from_pretrained(path)
    if getattr(model.config, "is_encoder_decoder", False):
        model = model.get_encoder()
    model.to(spec.device)
    model.eval()
    return tokenizer, model


def _word_vectors(tokenizer, model, contexts: list[list[str]], layers: list[int],
                  pool: str, device: str) -> dict[int, np.ndarray]:
    """Hidden states for the last word of every context window."""
    enc = tokenizer(contexts, is_split_into_words=True, padding=True,
                    return_tensors="pt")
    with torch.no_grad():
        out = model(**{k: v.to(device) for k, v in enc.items()},
                    output_hidden_states=True)
    hidden = out.hidden_states
    n_layers = len(hidden)
    for layer in layers:
        if not 0 <= layer < n_layers:
            raise ValueError(f"layer {layer} out of range (stack has {n_layers})")
    vectors: dict[int, list[np.ndarray]] = {layer: [] for layer in layers}
    for i, ctx in enumerate(contexts):
        word_ids = enc.word_ids(batch_index=i)
        target = len(ctx) - 1
        positions = [p for p, w in enumerate(word_ids) if w == target]
        if not positions:
            raise ValueError(f"tokenizer produced no sub-tokens for word {ctx[-1]!r}")
        for layer in layers:
            states = hidden[layer][i]
            if pool == "last":
                vec = states[positions[-1]]
            else:
                vec = states[positions].mean(dim=0)
            vectors[layer].append(vec.cpu().double().numpy())
    return {layer: np.stack(vs) for layer, vs in vectors.items()}


def extract_text(spec: ExtractionSpec) -> dict[int, Path]:
    """One irregular-sampling matrix per layer: a row per word, onsets taken
    from the annotation TSVs, story boundaries preserved."""
    tokenizer, model = load_text_model(spec)
    per_layer: dict[int, list[np.ndarray]] = {layer: [] for layer in spec.layers}
    onsets_all: list[np.ndarray] = []
    story_offsets = []
    total = 0
    for story in spec.stories:
        texts, onsets = read_words_tsv(spec.resolve(story.words_tsv))
        story_offsets.append(total)
        total += len(texts)
        onsets_all.append(onsets)
        contexts = [texts[max(0, m - spec.context_words + 1):m + 1]
                    for m in range(len(texts))]
        for start in range(0, len(contexts), spec.batch_size):
            batch = contexts[start:start + spec.batch_size]
            vecs = _word_vectors(tokenizer, model, batch, spec.layers, spec.pool, spec.device)
            for layer, arr in vecs.items():
                per_layer[layer].append(arr)
    onsets = np.concatenate(onsets_all)
    out = {}
    for layer in spec.layers:
        values = np.concatenate(per_layer[layer])
        name = f"{spec.name_prefix}_layer{layer:02d}"
        out[layer] = write_feature(spec.resolve(spec.output_dir), name, values,
                                   {"kind": "irregular", "onsets": onsets}, story_offsets)
    return out
