"""Synthetic camouflage scenes with known ground truth and QA fixtures.

Each scene plants one elliptical creature whose color is the mock
encoder's anchor color for the creature's name, on a backdrop colored by
the backdrop word's anchor. Square decoys in the exact creature color sit
far from the creature; they light up in the first heatmap and produce
stray positive prompts, which the box carried from the previous mask
removes on later passes, so iterative refinement has something real to
fix. The QA fixture answers every chain with differently formatted
phrasings of the same two words.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .backends.base import ImageRef
from .backends.mock import MockCaptionQA, keyword_color
from .datasets import DatasetSpec, save_image_png, save_mask_png
from .prompts import BinaryMask

ANIMALS = ("grasshopper", "lizard", "moth", "frog", "crab",
           "owl", "gecko", "toad", "spider", "seahorse")
BACKDROPS = ("leaves", "bark", "sand", "moss", "rocks",
             "grass", "soil", "coral", "lichen", "pebbles")

# raw answer phrasings, cycled per chain index; all parse to the bare word
_FORE_FORMATS = ("{w}.", "a {w}", "{w}", "The {w}.", "I think it is a {w}, maybe.")
_BACK_FORMATS = ("{w}.", "the {w}", "{w}", "The answer is {w}.", "it is {w}")

MIN_COLOR_DISTANCE = 0.35
MAX_CHAINS = 5


@dataclass(frozen=True)
class SyntheticScene:
    image: ImageRef
    gt: BinaryMask
    animal: str
    backdrop: str
    qa_answers: Dict[str, str]


def _ellipse(size: int, center: Tuple[float, float], radii: Tuple[float, float],
             angle: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    dx = xs + 0.5 - center[0]
    dy = ys + 0.5 - center[1]
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    u = dx * cos_a + dy * sin_a
    v = -dx * sin_a + dy * cos_a
    return (u / radii[0]) ** 2 + (v / radii[1]) ** 2 <= 1.0


def _pick_backdrop(rng: np.random.Generator, animal_color: np.ndarray) -> str:
    # The encoder only sees chroma directions, so separation is measured
    # between unit colors, not raw ones.
    animal_dir = animal_color / np.linalg.norm(animal_color)
    order = rng.permutation(len(BACKDROPS))
    best, best_dist = None, -1.0
    for idx in order:
        word = BACKDROPS[idx]
        color = keyword_color(word)
        dist = float(np.linalg.norm(color / np.linalg.norm(color) - animal_dir))
        if dist >= MIN_COLOR_DISTANCE:
            return word
        if dist > best_dist:
            best, best_dist = word, dist
    return best


def _fixture_answers(animal: str, backdrop: str) -> Dict[str, str]:
    answers = {"caption": f"a {animal} blending into {backdrop}"}
    for j in range(1, MAX_CHAINS + 1):
        answers[f"fore_{j}"] = _FORE_FORMATS[(j - 1) % len(_FORE_FORMATS)].format(w=animal)
        answers[f"back_{j}"] = _BACK_FORMATS[(j - 1) % len(_BACK_FORMATS)].format(w=backdrop)
    return answers


def generate_scene(index: int, seed: int = 0, size: int = 64,
                   distractors: int = 2, noise_std: float = 0.05) -> SyntheticScene:
    """Deterministic scene ``index`` for a dataset seeded with ``seed``."""
    rng = np.random.default_rng([seed, index])
    animal = ANIMALS[int(rng.integers(len(ANIMALS)))]
    fg_color = keyword_color(animal)
    backdrop = _pick_backdrop(rng, fg_color)
    bg_color = keyword_color(backdrop)

    center = (float(rng.uniform(0.32, 0.68) * size),
              float(rng.uniform(0.32, 0.68) * size))
    radii = (float(rng.uniform(0.17, 0.22) * size),
             float(rng.uniform(0.17, 0.22) * size))
    angle = float(rng.uniform(0, np.pi))
    blob = _ellipse(size, center, radii, angle)

    pixels = np.empty((size, size, 3))
    pixels[:] = bg_color
    pixels[blob] = fg_color

    # Decoys must span about two patch widths: anything smaller is damped
    # below the prompt threshold by the lattice upsample and never fires.
    # They stay well clear of the creature so the previous-mask box can
    # cut them off without touching it.
    # Each decoy is smaller than the creature and decoys never touch each
    # other, so the creature's prompt cluster always out-fills any decoy
    # cluster and the previous-mask box stays on the creature.
    centers: List[Tuple[float, float]] = []
    attempts = 0
    margin = 0.05 * size
    while len(centers) < distractors and attempts < 40:
        attempts += 1
        side = rng.uniform(0.16, 0.20) * size
        cx = float(rng.uniform(margin + side / 2, size - margin - side / 2))
        cy = float(rng.uniform(margin + side / 2, size - margin - side / 2))
        if np.hypot(cx - center[0], cy - center[1]) < 0.42 * size:
            continue
        if any(np.hypot(cx - px, cy - py) < 0.32 * size for px, py in centers):
            continue
        x0, x1 = int(round(cx - side / 2)), int(round(cx + side / 2))
        y0, y1 = int(round(cy - side / 2)), int(round(cy + side / 2))
        decoy = np.zeros((size, size), dtype=bool)
        decoy[y0:y1, x0:x1] = True
        pixels[decoy & ~blob] = fg_color
        centers.append((cx, cy))

    pixels = np.clip(pixels + rng.normal(0.0, noise_std, pixels.shape), 0.0, 1.0)
    image = ImageRef(image_id=f"scene_{index:03d}", pixels=pixels)
    return SyntheticScene(image=image, gt=BinaryMask(blob), animal=animal,
                          backdrop=backdrop, qa_answers=_fixture_answers(animal, backdrop))


def generate_scenes(count: int, seed: int = 0, size: int = 64,
                    distractors: int = 2) -> List[SyntheticScene]:
    return [generate_scene(i, seed=seed, size=size, distractors=distractors)
            for i in range(count)]


def generate_dataset(root, count: int = 20, seed: int = 0, size: int = 64,
                     distractors: int = 2) -> DatasetSpec:
    """Write images/, masks/, and the QA fixture under ``root``."""
    root = Path(root)
    image_dir = root / "images"
    mask_dir = root / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    answers = {}
    for scene in generate_scenes(count, seed=seed, size=size, distractors=distractors):
        save_image_png(scene.image.pixels, image_dir / f"{scene.image.image_id}.png")
        save_mask_png(scene.gt, mask_dir / f"{scene.image.image_id}.png")
        answers[scene.image.image_id] = scene.qa_answers
    MockCaptionQA(answers).save(root / "qa_fixture.json")
    return DatasetSpec(name=root.name, image_dir=image_dir, mask_dir=mask_dir)
