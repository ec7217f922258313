"""Point, box, and mask prompts derived from heatmaps and previous masks.

Points come from the coarse lattice: every cell at or above the threshold
becomes a positive click at its cell center (mapped into image coordinates),
and an equal number of the coldest cells become negative clicks. Box prompts
come from the previous iteration's mask, either as the plain union box or as
the connected component whose tight box best overlaps the whole mask.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import ContractViolation

# 4-connectivity: components touch through edges, not corners
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class PostProcessMode(str, Enum):
    NONE = "none"
    MAX_BOX = "maxbox"
    MASK = "mask"
    MAX_IOU_BOX = "maxioubox"


@dataclass(frozen=True)
class BinaryMask:
    """A strictly binary pixel grid."""

    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2:
            raise ContractViolation("mask grid must be 2-D")
        if grid.dtype != bool:
            vals = np.unique(grid)
            if not np.all(np.isin(vals, (0, 1))):
                raise ContractViolation("mask values must be 0/1")
            grid = grid.astype(bool)
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    def to_float(self) -> np.ndarray:
        return self.grid.astype(np.float64)


@dataclass(frozen=True)
class Box:
    """Half-open pixel box: columns [x0, x1), rows [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ContractViolation(f"box corners not ordered: {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class PromptSet:
    """Everything handed to the segmenter for one iteration.

    ``image_size`` is (width, height); point coordinates are float pixel
    positions inside it. Negative and positive clicks always come in equal
    numbers. At most one of box / prev_mask is set by the assembly step.
    """

    positives: Tuple[Tuple[float, float], ...]
    negatives: Tuple[Tuple[float, float], ...]
    image_size: Tuple[int, int]
    box: Optional[Box] = None
    prev_mask: Optional[BinaryMask] = None

    def __post_init__(self):
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ContractViolation("image size must be positive")
        if len(self.negatives) != len(self.positives):
            raise ContractViolation(
                f"{len(self.negatives)} negatives for {len(self.positives)} positives")
        for x, y in (*self.positives, *self.negatives):
            if not (0 <= x <= w and 0 <= y <= h):
                raise ContractViolation(f"point ({x}, {y}) outside {w}x{h} image")
        if self.box is not None:
            if self.box.x1 > w or self.box.y1 > h or self.box.x0 < 0 or self.box.y0 < 0:
                raise ContractViolation("box escapes the image")


def extract_points(lattice: np.ndarray, threshold: float,
                   image_size: Tuple[int, int]) -> PromptSet:
    """Threshold the normalized lattice into positive and negative clicks.

    Cells >= threshold are positive; if none qualify, the single hottest
    cell (row-major first on ties) is used. Negatives are the same count
    of lowest-valued cells, row-major on ties. Cell centers are mapped to
    image coordinates by scaling lattice fractions to the image side.
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    if lattice.ndim != 2:
        raise ContractViolation("lattice must be 2-D")
    if np.any(lattice < -1e-9) or np.any(lattice > 1 + 1e-9):
        raise ContractViolation("lattice must be min-max normalized to [0, 1]")
    if not (0.0 < threshold < 1.0):
        raise ContractViolation("threshold must lie strictly inside (0, 1)")

    lat_h, lat_w = lattice.shape
    width, height = int(image_size[0]), int(image_size[1])
    flat = lattice.ravel()
    pos_idx = np.flatnonzero(flat >= threshold)
    if pos_idx.size == 0:
        pos_idx = np.array([int(np.argmax(flat))])
    order = np.argsort(flat, kind="stable")
    neg_idx = order[:pos_idx.size]

    def centers(indices):
        rows, cols = np.divmod(indices, lat_w)
        xs = (cols + 0.5) / lat_w * width
        ys = (rows + 0.5) / lat_h * height
        return tuple((float(x), float(y)) for x, y in zip(xs, ys))

    return PromptSet(positives=centers(pos_idx), negatives=centers(neg_idx),
                     image_size=(width, height))


def _component_boxes(mask: BinaryMask):
    labels, count = ndimage.label(mask.grid, structure=_CROSS)
    slices = ndimage.find_objects(labels)
    boxes = []
    for sl in slices[:count]:
        ys, xs = sl
        boxes.append((xs.start, ys.start, xs.stop, ys.stop))
    return labels, boxes


def union_box(mask: BinaryMask) -> Optional[Box]:
    """Tight box around every set pixel; None for an empty mask."""
    if mask.area == 0:
        return None
    ys, xs = np.nonzero(mask.grid)
    return Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def max_iou_box(mask: BinaryMask) -> Optional[Box]:
    """Box of the 4-connected component whose filled box best matches the
    mask (intersection over union against the whole mask). Ties keep the
    component discovered first in raster order. None for an empty mask."""
    if mask.area == 0:
        return None
    _, boxes = _component_boxes(mask)
    mask_area = mask.area
    best = None
    best_iou = -1.0
    for x0, y0, x1, y1 in boxes:
        inter = int(mask.grid[y0:y1, x0:x1].sum())
        fill = (y1 - y0) * (x1 - x0)
        iou = inter / (fill + mask_area - inter)
        if iou > best_iou:
            best_iou = iou
            best = Box(float(x0), float(y0), float(x1), float(y1))
    return best


def assemble_prompts(points: PromptSet, prev_mask: Optional[BinaryMask],
                     mode: PostProcessMode = PostProcessMode.MAX_IOU_BOX) -> PromptSet:
    """Attach the previous mask's guidance to fresh clicks.

    With no previous mask (first iteration) or mode NONE the clicks pass
    through untouched. Box modes attach a box; MASK passes the previous
    mask as a dense prompt. An empty previous mask yields no box.
    """
    mode = PostProcessMode(mode)
    if prev_mask is None or mode is PostProcessMode.NONE:
        return replace(points, box=None, prev_mask=None)
    if mode is PostProcessMode.MASK:
        return replace(points, box=None, prev_mask=prev_mask)
    if mode is PostProcessMode.MAX_BOX:
        return replace(points, box=union_box(prev_mask), prev_mask=None)
    return replace(points, box=max_iou_box(prev_mask), prev_mask=None)
