"""Dataset discovery, image IO, and result table writers.

A dataset is a directory of images and a directory of ground-truth masks
paired by shared filename stem. Masks are binarized at mid-gray on load.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DatasetError
from .prompts import BinaryMask

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
METRIC_COLUMNS = ("mae", "f_beta", "e_phi", "s_alpha")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    image_dir: Path
    mask_dir: Path


def discover_pairs(spec: DatasetSpec) -> List[Tuple[str, Path, Path]]:
    """(stem, image path, mask path) triples, sorted by stem.

    Every image must pair with exactly one mask; anything else is a
    startup error, not a per-image one.
    """
    if not spec.image_dir.is_dir():
        raise DatasetError(f"image directory missing: {spec.image_dir}")
    if not spec.mask_dir.is_dir():
        raise DatasetError(f"mask directory missing: {spec.mask_dir}")
    images = {}
    for path in sorted(spec.image_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if path.stem in images:
            raise DatasetError(f"duplicate image stem {path.stem!r} in {spec.image_dir}")
        images[path.stem] = path
    if not images:
        raise DatasetError(f"no images found in {spec.image_dir}")
    pairs = []
    for stem in sorted(images):
        matches = [p for p in sorted(spec.mask_dir.iterdir())
                   if p.stem == stem and p.suffix.lower() in IMAGE_EXTENSIONS]
        if len(matches) != 1:
            raise DatasetError(
                f"expected exactly one mask for {stem!r}, found {len(matches)}")
        pairs.append((stem, images[stem], matches[0]))
    return pairs


def load_image(path) -> np.ndarray:
    """RGB float64 in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def load_mask(path) -> BinaryMask:
    """Grayscale ground truth binarized at mid-gray (>= 128 of 255)."""
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    return BinaryMask(gray >= 128)


def save_image_png(pixels: np.ndarray, path) -> None:
    levels = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(levels, mode="RGB").save(path)


def save_mask_png(mask: BinaryMask, path) -> None:
    """0/255 single-channel PNG."""
    levels = np.where(mask.grid, 255, 0).astype(np.uint8)
    Image.fromarray(levels, mode="L").save(path)


def write_metrics_csv(rows: Sequence[Tuple[str, "MetricsRecord"]], path) -> None:
    """One row per successfully processed image."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("image",) + METRIC_COLUMNS)
        for stem, record in rows:
            writer.writerow((stem,) + tuple(f"{getattr(record, c):.6f}"
                                            for c in METRIC_COLUMNS))


def format_aggregate_table(record, n_scored: int, failed: Sequence[str]) -> str:
    """Markdown summary with the aggregate metric row."""
    lines = [
        "# Run summary",
        "",
        f"Images scored: {n_scored}",
        f"Images failed: {len(failed)}",
    ]
    if failed:
        lines.append("Failed stems: " + ", ".join(sorted(failed)))
    lines += [
        "",
        "| mae | f_beta | e_phi | s_alpha |",
        "| --- | --- | --- | --- |",
    ]
    if record is None:
        lines.append("| - | - | - | - |")
    else:
        lines.append("| " + " | ".join(
            f"{getattr(record, c):.6f}" for c in METRIC_COLUMNS) + " |")
    lines.append("")
    return "\n".join(lines)
