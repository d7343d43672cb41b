"""Layer-wise hidden-state extraction for pretrained text and speech models,
written to the analysis pipeline's NPY + sidecar convention."""

from .spec import ExtractionSpec, StoryInput

__all__ = ["ExtractionSpec", "StoryInput"]

__version__ = "0.1.0"
