"""Diagnostic renderings: heatmap colorization and mask overlays."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ContractViolation
from .heatmap import Heatmap
from .prompts import BinaryMask

_GAP = 2
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def colorize_heatmap(heat) -> np.ndarray:
    """Map [0, 1] values onto a blue-to-red ramp through green."""
    grid = heat.grid if isinstance(heat, Heatmap) else np.asarray(heat, dtype=np.float64)
    if grid.ndim != 2:
        raise ContractViolation("heatmap grid must be 2-D")
    if np.any(grid < 0) or np.any(grid > 1):
        raise ContractViolation("heatmap values must lie in [0, 1]")
    return np.stack([grid, 4.0 * grid * (1.0 - grid), 1.0 - grid], axis=-1)


def mask_boundary(mask: BinaryMask) -> np.ndarray:
    """One-pixel inner boundary of the mask (4-connected)."""
    eroded = ndimage.binary_erosion(mask.grid, structure=_CROSS, border_value=0)
    return mask.grid & ~eroded


def draw_overlay(pixels: np.ndarray, mask: BinaryMask,
                 color=(1.0, 0.1, 0.1)) -> np.ndarray:
    """Image with the mask tinted and its boundary drawn solid."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ContractViolation(f"pixels must be (H, W, 3), got {pixels.shape}")
    if mask.shape != pixels.shape[:2]:
        raise ContractViolation(
            f"mask {mask.shape} does not cover image {pixels.shape[:2]}")
    tint = np.asarray(color, dtype=np.float64)
    out = pixels.copy()
    out[mask.grid] = 0.6 * out[mask.grid] + 0.4 * tint
    out[mask_boundary(mask)] = tint
    return out


def side_by_side(pixels: np.ndarray, heat, mask: BinaryMask) -> np.ndarray:
    """Input, colorized heatmap, and overlay in one strip.

    Panels share the input's height and are separated by white gaps.
    """
    panels = [np.asarray(pixels, dtype=np.float64),
              colorize_heatmap(heat),
              draw_overlay(pixels, mask)]
    height = panels[0].shape[0]
    for panel in panels:
        if panel.shape[0] != height:
            raise ContractViolation("panels must share a height")
    gap = np.ones((height, _GAP, 3))
    strip = panels[0]
    for panel in panels[1:]:
        strip = np.hstack([strip, gap, panel])
    return strip
