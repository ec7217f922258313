"""Iterative test-time mask refinement.

Keywords are resolved once per image. Every iteration encodes the current
input, builds a consensus heatmap, extracts click prompts (plus a box or
dense prompt derived from the previous mask), segments, and finally blends
the heatmap back into the image to produce the next input. After the last
iteration the mask closest to the per-pixel mean of all masks wins.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .backends.base import Backends, ImageRef, pixel_digest, select_candidate
from .chains import ChainTranscript, KeywordBundle, TaskPrompt, run_chain_prompting
from .errors import BackendError, ContractViolation
from .heatmap import (
    Heatmap,
    Polarity,
    TextFeature,
    build_consensus_heatmap,
    save_heatmap_png,
)
from .prompts import (
    BinaryMask,
    PostProcessMode,
    PromptSet,
    assemble_prompts,
    extract_points,
)
from .datasets import save_mask_png

logger = logging.getLogger(__name__)


class ReweightBase(str, Enum):
    """What the heatmap multiplies into: the pristine image (default) or
    the already-reweighted previous input (compounding)."""

    ORIGINAL = "original"
    COMPOUNDING = "compounding"


class SegmentInput(str, Enum):
    """Which pixels the segmenter sees: the reweighted input (default) or
    always the original image."""

    WEIGHTED = "weighted"
    ORIGINAL = "original"


class SelectionNorm(str, Enum):
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class RefineConfig:
    """Loop knobs; the defaults reproduce the reference setting."""

    w_pic: float = 0.3
    iterations: int = 6
    reweight_base: ReweightBase = ReweightBase.ORIGINAL
    segment_input: SegmentInput = SegmentInput.WEIGHTED
    threshold: float = 0.90
    upsample_factor: float = 2.0
    post_mode: PostProcessMode = PostProcessMode.MAX_IOU_BOX
    selection_norm: SelectionNorm = SelectionNorm.L1

    def __post_init__(self):
        if not (0.0 <= self.w_pic <= 1.0):
            raise ContractViolation("w_pic must lie in [0, 1]")
        if self.iterations < 1:
            raise ContractViolation("need at least one iteration")
        if not (0.0 < self.threshold < 1.0):
            raise ContractViolation("threshold must lie strictly inside (0, 1)")
        object.__setattr__(self, "reweight_base", ReweightBase(self.reweight_base))
        object.__setattr__(self, "segment_input", SegmentInput(self.segment_input))
        object.__setattr__(self, "post_mode", PostProcessMode(self.post_mode))
        object.__setattr__(self, "selection_norm", SelectionNorm(self.selection_norm))


def reweight_image(pixels: np.ndarray, heat, w_pic: float) -> np.ndarray:
    """Blend the image with its heatmap-weighted self.

    Factored as pixels * (heat * w + (1 - w)), which equals
    pixels*heat*w + pixels*(1-w) and keeps w_pic = 0 and a heatmap of
    ones exact identities.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    grid = heat.grid if isinstance(heat, Heatmap) else np.asarray(heat, dtype=np.float64)
    if not (0.0 <= w_pic <= 1.0):
        raise ContractViolation("w_pic must lie in [0, 1]")
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ContractViolation(f"pixels must be (H, W, 3), got {pixels.shape}")
    if grid.shape != pixels.shape[:2]:
        raise ContractViolation(
            f"heatmap {grid.shape} does not cover image {pixels.shape[:2]}")
    if np.any(grid < 0) or np.any(grid > 1):
        raise ContractViolation("heatmap values must lie in [0, 1]")
    factor = grid * w_pic + (1.0 - w_pic)
    return pixels * factor[:, :, None]


def select_final_mask(masks: Sequence[BinaryMask],
                      norm: SelectionNorm = SelectionNorm.L1,
                      ) -> Tuple[int, BinaryMask, np.ndarray]:
    """Pick the mask nearest the entrywise mean of all masks.

    Returns (1-based index, mask, mean mask). Ties keep the earliest
    iteration.
    """
    if not masks:
        raise ContractViolation("no masks to select from")
    norm = SelectionNorm(norm)
    shape = masks[0].shape
    for m in masks:
        if m.shape != shape:
            raise ContractViolation("mask shapes disagree")
    stack = np.stack([m.to_float() for m in masks])
    mean = stack.mean(axis=0)
    diffs = np.abs(stack - mean[None])
    if norm is SelectionNorm.L1:
        dists = diffs.sum(axis=(1, 2))
    else:
        dists = np.sqrt((diffs ** 2).sum(axis=(1, 2)))
    index = int(np.argmin(dists))
    return index + 1, masks[index], mean


@dataclass(frozen=True)
class IterationRecord:
    """What one refinement pass consumed and produced."""

    input_digest: str
    heatmap: Heatmap
    prompts: PromptSet
    mask: BinaryMask


@dataclass(frozen=True)
class IterationTrace:
    records: Tuple[IterationRecord, ...]
    selected_index: int
    mean_mask: np.ndarray
    bundle: KeywordBundle
    transcripts: Tuple[ChainTranscript, ...]
    error: Optional[str] = None

    @property
    def masks(self) -> Tuple[BinaryMask, ...]:
        return tuple(r.mask for r in self.records)

    @property
    def final_mask(self) -> BinaryMask:
        return self.records[self.selected_index - 1].mask


def run_refinement(image: ImageRef, prompt: TaskPrompt, backends: Backends,
                   cfg: RefineConfig = RefineConfig()) -> IterationTrace:
    """Full per-image loop. Keyword queries happen exactly once, before
    the first iteration, on the original image.

    A backend failure mid-loop truncates the trace (error recorded) and
    selection runs over the completed iterations; a failure before any
    mask exists propagates.
    """
    bundle, transcripts = run_chain_prompting(image, prompt, backends.qa)
    fore_texts = tuple(
        TextFeature(backends.encoder.encode_text(kw), kw, j, Polarity.FOREGROUND)
        for j, kw in enumerate(bundle.fore_keywords, start=1))
    back_texts = tuple(
        TextFeature(backends.encoder.encode_text(kw), kw, j, Polarity.BACKGROUND)
        for j, kw in enumerate(bundle.back_keywords, start=1))

    original = image.pixels
    height, width = original.shape[:2]
    current = original
    records = []
    error = None
    for iteration in range(1, cfg.iterations + 1):
        try:
            digest = pixel_digest(current)
            _, alternate = backends.encoder.encode_image(current)
            heat = build_consensus_heatmap(
                alternate, fore_texts, back_texts,
                cfg.upsample_factor, (height, width))
            points = extract_points(heat.provenance.lattice, cfg.threshold,
                                    (width, height))
            prev_mask = records[-1].mask if records else None
            prompts = assemble_prompts(points, prev_mask, cfg.post_mode)
            seg_pixels = current if cfg.segment_input is SegmentInput.WEIGHTED else original
            candidates = backends.segmenter.segment(seg_pixels, prompts)
            mask = select_candidate(candidates)
        except BackendError as exc:
            if not records:
                raise
            error = f"iteration {iteration}: {exc}"
            logger.warning("refinement truncated for %s: %s", image.image_id, error)
            break
        records.append(IterationRecord(input_digest=digest, heatmap=heat,
                                       prompts=prompts, mask=mask))
        base = original if cfg.reweight_base is ReweightBase.ORIGINAL else current
        current = reweight_image(base, heat, cfg.w_pic)

    index, _, mean = select_final_mask([r.mask for r in records], cfg.selection_norm)
    return IterationTrace(records=tuple(records), selected_index=index,
                          mean_mask=mean, bundle=bundle, transcripts=transcripts,
                          error=error)


def export_trace(trace: IterationTrace, out_dir) -> None:
    """Per-iteration heatmap/mask images plus a JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, record in enumerate(trace.records, start=1):
        save_heatmap_png(record.heatmap, out_dir / f"iter_{i}_heatmap.png")
        save_mask_png(record.mask, out_dir / f"iter_{i}_mask.png")
    summary = {
        "selected_index": trace.selected_index,
        "error": trace.error,
        "fore_keywords": list(trace.bundle.fore_keywords),
        "back_keywords": list(trace.bundle.back_keywords),
        "iterations": [
            {
                "input_digest": r.input_digest,
                "positives": len(r.prompts.positives),
                "negatives": len(r.prompts.negatives),
                "has_box": r.prompts.box is not None,
                "has_mask_prompt": r.prompts.prev_mask is not None,
                "mask_area": r.mask.area,
            }
            for r in trace.records
        ],
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
