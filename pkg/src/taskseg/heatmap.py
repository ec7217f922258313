"""Consensus similarity heatmaps from patch features and keyword vectors.

Per keyword, each patch scores the cosine between its feature row and the
keyword vector. Foreground and background scores are averaged across the
reasoning chains, their difference is laid out on the patch grid, and two
bilinear resamples are taken: a coarse lattice used for point sampling and
a full-resolution map, min-max normalized, used to reweight the image.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import ContractViolation, DegenerateFeatureError

SUPPORTED_UPSAMPLE_FACTORS = (0.5, 1.0, 2.0, 4.0, 8.0)
_NORM_EPS = 1e-12


class Polarity(str, Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"


@dataclass(frozen=True)
class ImageFeatures:
    """Patch feature rows over a square grid, class token already dropped."""

    patch_features: np.ndarray
    grid_side: int

    def __post_init__(self):
        feats = np.asarray(self.patch_features, dtype=np.float64)
        if feats.ndim != 2:
            raise ContractViolation(f"patch features must be 2-D, got {feats.shape}")
        if self.grid_side < 2:
            raise ContractViolation("grid_side must be >= 2")
        if feats.shape[0] != self.grid_side ** 2:
            raise ContractViolation(
                f"{feats.shape[0]} patches do not fill a {self.grid_side}x{self.grid_side} grid")
        if not np.all(np.isfinite(feats)):
            raise ContractViolation("patch features contain non-finite entries")
        norms = np.linalg.norm(feats, axis=1)
        if np.any(norms < _NORM_EPS):
            raise DegenerateFeatureError("zero-norm patch feature row")
        object.__setattr__(self, "patch_features", feats)

    @property
    def patch_count(self) -> int:
        return self.patch_features.shape[0]

    @property
    def channels(self) -> int:
        return self.patch_features.shape[1]


@dataclass(frozen=True)
class TextFeature:
    """One keyword's embedding, tagged with its chain and polarity."""

    vector: np.ndarray
    source_keyword: str
    chain_index: int
    polarity: Polarity

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise ContractViolation("text vector contains non-finite entries")
        if np.linalg.norm(vec) < _NORM_EPS:
            raise DegenerateFeatureError(
                f"zero-norm text vector for keyword {self.source_keyword!r}")
        if self.chain_index < 1:
            raise ContractViolation("chain_index is 1-based")
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "polarity", Polarity(self.polarity))


@dataclass(frozen=True)
class SimilarityMap:
    """Per-patch cosine scores for one keyword, flat row-major order."""

    values: np.ndarray
    polarity: Polarity
    chain_index: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if np.any(vals < -1.0 - 1e-6) or np.any(vals > 1.0 + 1e-6):
            raise ContractViolation("cosine scores escaped [-1, 1]")
        object.__setattr__(self, "values", np.clip(vals, -1.0, 1.0))
        object.__setattr__(self, "polarity", Polarity(self.polarity))


@dataclass(frozen=True)
class HeatmapProvenance:
    """How a heatmap was produced: the point-sampling lattice (already
    min-max normalized) plus the raw bounds both normalizations used."""

    upsample_factor: float
    lattice: np.ndarray
    lattice_bounds: Tuple[float, float]
    grid_bounds: Tuple[float, float]


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray
    provenance: HeatmapProvenance

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ContractViolation("heatmap grid must be 2-D")
        if np.any(grid < -1e-9) or np.any(grid > 1.0 + 1e-9):
            raise ContractViolation("heatmap values escaped [0, 1]")
        object.__setattr__(self, "grid", np.clip(grid, 0.0, 1.0))


def similarity_map(image: ImageFeatures, text: TextFeature) -> SimilarityMap:
    """Cosine of every patch row against the keyword vector."""
    if image.channels != text.vector.shape[0]:
        raise ContractViolation(
            f"channel mismatch: patches have {image.channels}, "
            f"text vector has {text.vector.shape[0]}")
    feats = image.patch_features
    patch_norms = np.linalg.norm(feats, axis=1)
    text_unit = text.vector / np.linalg.norm(text.vector)
    scores = (feats @ text_unit) / patch_norms
    return SimilarityMap(values=np.clip(scores, -1.0, 1.0),
                         polarity=text.polarity, chain_index=text.chain_index)


def consensus(maps: Sequence[SimilarityMap], polarity: Polarity) -> np.ndarray:
    """Entrywise mean of same-polarity chain maps."""
    if not maps:
        raise ContractViolation("consensus over an empty map list")
    polarity = Polarity(polarity)
    size = maps[0].values.shape[0]
    for m in maps:
        if m.polarity is not polarity:
            raise ContractViolation(
                f"map polarity {m.polarity.value} mixed into {polarity.value} consensus")
        if m.values.shape[0] != size:
            raise ContractViolation("chain maps disagree on patch count")
    return np.mean([m.values for m in maps], axis=0)


def subtract_background(fore: np.ndarray, back: np.ndarray) -> np.ndarray:
    """Foreground consensus minus background consensus, elementwise."""
    fore = np.asarray(fore, dtype=np.float64)
    back = np.asarray(back, dtype=np.float64)
    if fore.shape != back.shape:
        raise ContractViolation("consensus shapes disagree")
    return fore - back


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers and edge clamping."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ContractViolation("bilinear_resize expects a 2-D grid")
    if out_h < 1 or out_w < 1:
        raise ContractViolation("output size must be positive")
    in_h, in_w = grid.shape

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        base = np.floor(src)
        frac = src - base
        lo = np.clip(base, 0, n_in - 1).astype(int)
        hi = np.clip(base + 1, 0, n_in - 1).astype(int)
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def minmax_normalize(grid: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Scale to [0, 1]; a (near-)constant grid maps to all 0.5."""
    grid = np.asarray(grid, dtype=np.float64)
    lo = float(grid.min())
    hi = float(grid.max())
    if hi - lo <= _NORM_EPS:
        return np.full(grid.shape, 0.5), lo, hi
    return (grid - lo) / (hi - lo), lo, hi


def spatialize_and_upsample(scores: np.ndarray, grid_side: int, factor: float,
                            target: Tuple[int, int]) -> Heatmap:
    """Lay flat patch scores on the grid and produce both resamples.

    ``target`` is (height, width) of the image the heatmap will reweight.
    The lattice side is round(grid_side * factor); factor must be one of
    SUPPORTED_UPSAMPLE_FACTORS.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != grid_side ** 2:
        raise ContractViolation(
            f"{scores.shape[0]} scores do not fill a {grid_side}x{grid_side} grid")
    factor = float(factor)
    if factor not in SUPPORTED_UPSAMPLE_FACTORS:
        raise ContractViolation(
            f"upsample factor {factor} not in {SUPPORTED_UPSAMPLE_FACTORS}")
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ContractViolation("target size must be positive")
    lattice_side = int(round(grid_side * factor))
    if lattice_side < 1:
        raise ContractViolation("lattice collapsed to zero cells")

    base = scores.reshape(grid_side, grid_side)
    lattice_raw = bilinear_resize(base, lattice_side, lattice_side)
    full_raw = bilinear_resize(base, th, tw)
    lattice, llo, lhi = minmax_normalize(lattice_raw)
    grid, glo, ghi = minmax_normalize(full_raw)
    return Heatmap(grid=grid, provenance=HeatmapProvenance(
        upsample_factor=factor, lattice=lattice,
        lattice_bounds=(llo, lhi), grid_bounds=(glo, ghi)))


def build_consensus_heatmap(image: ImageFeatures, fore: Sequence[TextFeature],
                            back: Sequence[TextFeature], factor: float,
                            target: Tuple[int, int]) -> Heatmap:
    """Full keyword-to-heatmap pipeline for one image.

    An empty background list contributes zeros, leaving the foreground
    consensus untouched.
    """
    if not fore:
        raise ContractViolation("need at least one foreground keyword")
    fore_maps = [similarity_map(image, t) for t in fore]
    fore_cons = consensus(fore_maps, Polarity.FOREGROUND)
    if back:
        back_maps = [similarity_map(image, t) for t in back]
        back_cons = consensus(back_maps, Polarity.BACKGROUND)
    else:
        back_cons = np.zeros_like(fore_cons)
    diff = subtract_background(fore_cons, back_cons)
    return spatialize_and_upsample(diff, image.grid_side, factor, target)


def save_heatmap_png(heatmap: Heatmap, path) -> None:
    """Dump as 8-bit grayscale, value = round(255 * H)."""
    levels = np.round(heatmap.grid * 255.0).astype(np.uint8)
    Image.fromarray(levels, mode="L").save(path)
