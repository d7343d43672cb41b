"""Extraction job description, loaded from one JSON document."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

TR_SECONDS = 2.0045

TEXT_WINDOWS = (2.0045, 16.0, 32.0, 64.0)


@dataclass
class StoryInput:
    story_id: str
    words_tsv: str | None = None  # text mode
    wav: str | None = None  # speech mode


@dataclass
class ExtractionSpec:
    """What to extract and where to put it.

    ``layers`` indexes the model's hidden-state stack (0 = embeddings,
    1..n = transformer blocks; encoder stack for encoder-decoder models).
    Text mode emits one irregular matrix per layer with a row per word;
    speech mode emits one per-TR matrix per layer when ``window_s`` equals
    ``tr_seconds``, otherwise frame-rate matrices at 1/``stride_s`` Hz.
    """

    model_path: str
    mode: str  # "text" | "speech"
    layers: list[int]
    output_dir: str
    stories: list[StoryInput] = field(default_factory=list)
    name_prefix: str = "model"
    context_words: int = 20
    window_s: float = TR_SECONDS
    stride_s: float = 0.1
    tr_seconds: float = TR_SECONDS
    pool: str = "last"  # "last" | "mean" sub-token / frame aggregation
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        if self.mode not in ("text", "speech"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.layers:
            raise ValueError("need at least one layer")
        if self.context_words < 1:
            raise ValueError("context_words must be >= 1")
        if self.window_s < self.tr_seconds:
            raise ValueError("window_s must cover at least one TR")
        if self.stride_s <= 0:
            raise ValueError("stride_s must be positive")
        if self.pool not in ("last", "mean"):
            raise ValueError(f"unknown pool {self.pool!r}")
        self.stories = [StoryInput(**s) if isinstance(s, dict) else s for s in self.stories]
        if not self.stories:
            raise ValueError("need at least one story input")
        for s in self.stories:
            if self.mode == "text" and not s.words_tsv:
                raise ValueError(f"story {s.story_id!r}: text mode needs words_tsv")
            if self.mode == "speech" and not s.wav:
                raise ValueError(f"story {s.story_id!r}: speech mode needs wav")

    @property
    def per_tr_speech(self) -> bool:
        return abs(self.window_s - self.tr_seconds) < 1e-9

    @classmethod
    def from_json(cls, path: str | Path) -> "ExtractionSpec":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        spec = cls(**doc)
        spec._base_dir = path.parent
        return spec

    def resolve(self, rel: str) -> Path:
        base = getattr(self, "_base_dir", Path("."))
        p = Path(rel)
        return p if p.is_absolute() else base / p
