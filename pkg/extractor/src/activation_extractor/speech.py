"""Speech hidden states: one vector per TR-length clip, or last-frame states
over long sliding windows at a fixed stride."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
import torch

from .arrayio import write_feature
from .spec import ExtractionSpec


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Mono PCM16 WAV via the stdlib reader (float32 WAVs are out of scope for
    the extractor; the corpus audio is PCM)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return data, rate


def load_speech_model(spec: ExtractionSpec):
    from transformers import AutoFeatureExtractor, AutoModel

    path = spec.model_path
    if not Path(path).exists():
        raise FileNotFoundError(f"model not available locally: {path}")
    fe = AutoFeatureExtractor.from_pretrained(path)
    model = AutoModel.from_pretrained(path)
    if getattr(model.config, "is_encoder_decoder", False):
        model = model.get_encoder()
    model.to(spec.device)
    model.eval()
    return fe, model


def _clip_states(fe, model, clip: np.ndarray, rate: int, layers: list[int],
                 pool: str, device: str) -> dict[int, np.ndarray]:
    inputs = fe(clip, sampling_rate=rate, return_tensors="pt")
    with torch.no_grad():
        out = model(**{k: v.to(device) for k, v in inputs.items()},
                    output_hidden_states=True)
    hidden = out.hidden_states
    for layer in layers:
        if not 0 <= layer < len(hidden):
            raise ValueError(f"layer {layer} out of range (stack has {len(hidden)})")
    result = {}
    for layer in layers:
        states = hidden[layer][0]  # (frames, hidden)
        vec = states[-1] if pool == "last" else states.mean(dim=0)
        result[layer] = vec.cpu().double().numpy()
    return result


def _window_ends(duration: float, window_s: float, stride_s: float) -> list[float]:
    """End times of analysis windows: full windows on the stride grid, or one
    left-truncated whole-story window when the story is shorter."""
    if duration >= window_s:
        n = int(np.floor((duration - window_s) / stride_s + 1e-9)) + 1
        return [window_s + k * stride_s for k in range(n)]
    return [duration]


def extract_speech(spec: ExtractionSpec) -> dict[int, Path]:
    """Per-TR matrices when the window equals one TR; frame-rate matrices at
    1/stride Hz for longer windows (left-truncated at story starts)."""
    fe, model = load_speech_model(spec)
    per_layer: dict[int, list[np.ndarray]] = {layer: [] for layer in spec.layers}
    story_offsets = []
    total = 0
    for story in spec.stories:
        audio, rate = read_wav(spec.resolve(story.wav))
        duration = audio.size / rate
        story_offsets.append(total)
        if spec.per_tr_speech:
            n_rows = int(np.floor(duration / spec.tr_seconds + 1e-9))
            if n_rows < 1:
                raise ValueError(f"story {story.story_id!r}: audio shorter than one TR")
            starts = [i * spec.tr_seconds for i in range(n_rows)]
            windows = [(s, s + spec.tr_seconds) for s in starts]
        else:
            ends = _window_ends(duration, spec.window_s, spec.stride_s)
            windows = [(max(0.0, e - spec.window_s), e) for e in ends]
            n_rows = len(windows)
        total += n_rows
        for lo, hi in windows:
            clip = audio[int(round(lo * rate)):int(round(hi * rate))]
            vecs = _clip_states(fe, model, clip, rate, spec.layers, spec.pool, spec.device)
            for layer, vec in vecs.items():
                per_layer[layer].append(vec)

    if spec.per_tr_speech:
        sampling = {"kind": "per_TR", "tr_seconds": spec.tr_seconds}
    else:
        sampling = {"kind": "frame_rate", "hz": 1.0 / spec.stride_s}
    out = {}
    for layer in spec.layers:
        values = np.stack(per_layer[layer])
        name = f"{spec.name_prefix}_layer{layer:02d}"
        out[layer] = write_feature(spec.resolve(spec.output_dir), name, values, sampling,
                                   story_offsets)
    return out
