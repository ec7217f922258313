"""Backend interfaces the pipeline is written against.

Three heavy models sit behind these: a captioning/QA model, a dual-stream
image-text encoder, and a promptable segmenter. Every implementation
declares capabilities so the pipeline can refuse unsafe concurrency and
tests can demand determinism.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..chains import QAQuery
from ..errors import ContractViolation
from ..heatmap import ImageFeatures
from ..prompts import BinaryMask, PromptSet


@dataclass(frozen=True)
class ImageRef:
    """An image plus the stable identity fixture backends key on.

    ``pixels`` is (H, W, 3) float64 in [0, 1].
    """

    image_id: str
    pixels: np.ndarray

    def __post_init__(self):
        if not self.image_id:
            raise ContractViolation("image_id is empty")
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ContractViolation(f"pixels must be (H, W, 3), got {pixels.shape}")
        if np.any(pixels < -1e-9) or np.any(pixels > 1 + 1e-9):
            raise ContractViolation("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", np.clip(pixels, 0.0, 1.0))

    @property
    def size(self) -> Tuple[int, int]:
        """(width, height)."""
        return self.pixels.shape[1], self.pixels.shape[0]


def pixel_digest(pixels: np.ndarray) -> str:
    """Stable content hash of a pixel array (shape + bytes)."""
    arr = np.ascontiguousarray(np.asarray(pixels, dtype=np.float64))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class BackendCapabilities:
    concurrent_safe: bool
    deterministic: bool


class CaptionQABackend(ABC):
    """Captioning plus conversational question answering."""

    capabilities: BackendCapabilities

    @abstractmethod
    def caption(self, image: ImageRef) -> str:
        ...

    @abstractmethod
    def answer(self, image: ImageRef, query: QAQuery) -> str:
        ...


class EncoderBackend(ABC):
    """Dual-stream image encoder plus keyword embedding.

    ``encode_image`` returns (original stream, alternate stream) patch
    features with the class token already dropped. The original stream is
    kept available for adapters that align text against it, but the
    heatmap consensus consumes the alternate stream.
    """

    capabilities: BackendCapabilities
    grid_side: int
    channels: int

    @abstractmethod
    def encode_image(self, pixels: np.ndarray) -> Tuple[ImageFeatures, ImageFeatures]:
        ...

    @abstractmethod
    def encode_text(self, keyword: str) -> np.ndarray:
        ...


class SegmenterBackend(ABC):
    """Promptable segmenter returning scored mask candidates."""

    capabilities: BackendCapabilities

    @abstractmethod
    def segment(self, pixels: np.ndarray, prompts: PromptSet
                ) -> List[Tuple[BinaryMask, float]]:
        ...


@dataclass(frozen=True)
class Backends:
    """The three models wired together for a run."""

    qa: CaptionQABackend
    encoder: EncoderBackend
    segmenter: SegmenterBackend

    def all_concurrent_safe(self) -> bool:
        return all(b.capabilities.concurrent_safe
                   for b in (self.qa, self.encoder, self.segmenter))

    def all_deterministic(self) -> bool:
        return all(b.capabilities.deterministic
                   for b in (self.qa, self.encoder, self.segmenter))


def select_candidate(candidates: List[Tuple[BinaryMask, float]]) -> BinaryMask:
    """Highest-confidence candidate; earliest wins a tie."""
    if not candidates:
        raise ContractViolation("segmenter returned no candidates")
    scores = np.array([score for _, score in candidates])
    return candidates[int(np.argmax(scores))][0]
