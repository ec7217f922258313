"""Deterministic mock backends for tests and offline runs.

The mock QA model replays answers from a human-editable JSON fixture keyed
by (image id, question template id). The mock encoder is a real, tiny
dual-stream transformer with seeded weights; its text embeddings come from
pushing a flat probe image of a keyword-derived anchor color through the
same network, so a synthetic scene that plants a blob of that color scores
higher on the blob's patches than on the background. The mock segmenter
turns clicks into disks with simple geometry.
"""

from __future__ import annotations

import hashlib
import json
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..attention import AttentionMode, BlockConfig, HeadProjections, TokenFeatures, dual_path_step
from ..chains import QAQuery
from ..errors import ContractViolation, FixtureError
from ..heatmap import ImageFeatures
from ..prompts import BinaryMask, PromptSet
from .base import BackendCapabilities, CaptionQABackend, EncoderBackend, ImageRef, SegmenterBackend

_DETERMINISTIC = BackendCapabilities(concurrent_safe=True, deterministic=True)


def keyword_color(keyword: str) -> np.ndarray:
    """Anchor color for a keyword, stable across runs and platforms.

    Drawn from the keyword's sha256 digest, kept away from pure black and
    white so reweighting never collapses it.
    """
    digest = hashlib.sha256(keyword.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    return rng.uniform(0.15, 0.95, 3)


class MockCaptionQA(CaptionQABackend):
    """Fixture-backed caption and QA replay.

    ``answers`` maps image id -> template id -> answer, where template ids
    are "caption", "fore_<j>", "back_<j>". Missing entries raise
    FixtureError rather than inventing text.
    """

    capabilities = _DETERMINISTIC

    def __init__(self, answers: Dict[str, Dict[str, str]]):
        self.answers = answers

    def caption(self, image: ImageRef) -> str:
        return self._lookup(image.image_id, "caption")

    def answer(self, image: ImageRef, query: QAQuery) -> str:
        return self._lookup(image.image_id, query.template_id)

    def _lookup(self, image_id: str, template_id: str) -> str:
        try:
            return self.answers[image_id][template_id]
        except KeyError:
            raise FixtureError(
                f"no fixture answer for image {image_id!r}, template {template_id!r}"
            ) from None

    @classmethod
    def from_file(cls, path) -> "MockCaptionQA":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("version") != 1:
            raise FixtureError(f"unsupported fixture version in {path}")
        return cls(payload["images"])

    def save(self, path) -> None:
        payload = {"version": 1, "images": self.answers}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


class MockEncoder(EncoderBackend):
    """Tiny seeded dual-stream encoder over patch mean colors.

    Patches are block averages of the image laid out on a
    ``grid_side`` x ``grid_side`` grid; each patch's mean color (plus a
    bias term) is projected to ``channels`` dimensions, a class token is
    prepended, and the stack runs through ``layers`` dual-path blocks.
    Keyword embeddings run a flat probe of ``keyword_color(keyword)``
    through the same network and average the alternate-stream patches.
    """

    capabilities = _DETERMINISTIC

    def __init__(self, seed: int = 0, grid_side: int = 8, channels: int = 32,
                 layers: int = 4, delta: int = 2, num_heads: int = 4,
                 mode: AttentionMode = AttentionMode.KKV):
        if grid_side < 2:
            raise ContractViolation("grid_side must be >= 2")
        if channels % num_heads:
            raise ContractViolation("num_heads must divide channels")
        if not (1 <= delta <= layers):
            raise ContractViolation(
                f"delta={delta} must lie in [1, layers={layers}] so the "
                "alternate stream exists at the output")
        self.seed = int(seed)
        self.grid_side = int(grid_side)
        self.channels = int(channels)
        self.layers = int(layers)
        self.delta = int(delta)
        self.num_heads = int(num_heads)
        self.mode = AttentionMode(mode)
        self._text_cache: Dict[str, np.ndarray] = {}

        rng = np.random.default_rng(self.seed)
        d = self.channels
        self.embed = rng.normal(0.0, 0.8, (4, d))
        self.cls_token = rng.normal(0.0, 0.8, d)
        self.layer_weights = []
        for _ in range(self.layers):
            proj = HeadProjections(
                w_k=rng.normal(0.0, 0.3, (d, d)),
                w_q=rng.normal(0.0, 0.3, (d, d)),
                w_v=rng.normal(0.0, 0.05, (d, d)),
                num_heads=self.num_heads,
                scale=1.0 / np.sqrt(d / self.num_heads),
            )
            ffn_w = 0.9 * np.eye(d) + rng.normal(0.0, 0.08, (d, d))
            ffn_b = rng.normal(0.0, 0.05, d)
            self.layer_weights.append((proj, ffn_w, ffn_b))

    # -- forward ---------------------------------------------------------

    def _patch_colors(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ContractViolation(f"pixels must be (H, W, 3), got {pixels.shape}")
        h, w = pixels.shape[:2]
        g = self.grid_side
        if h < g or w < g:
            raise ContractViolation(f"image {h}x{w} smaller than patch grid {g}x{g}")
        rows = [int(i * h / g) for i in range(g + 1)]
        cols = [int(j * w / g) for j in range(g + 1)]
        colors = np.empty((g, g, 3))
        for i in range(g):
            for j in range(g):
                block = pixels[rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
                colors[i, j] = block.mean(axis=(0, 1))
        return colors

    def _forward_colors(self, colors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = self.grid_side
        flat = colors.reshape(g * g, 3)
        # Brightness-invariant features: only the chroma direction enters
        # the stack, so rescaling pixels (the iterative reweighting does
        # exactly that) barely moves the heatmap and the spatial prompts
        # carry the refinement signal.
        norms = np.linalg.norm(flat, axis=1, keepdims=True)
        flat = flat / np.maximum(norms, 1e-9)
        inputs = np.concatenate([flat, np.ones((g * g, 1))], axis=1)
        tokens = np.vstack([self.cls_token, inputs @ self.embed])
        s = TokenFeatures(tokens, layer_index=0)
        s_hat = None
        for m, (proj, ffn_w, ffn_b) in enumerate(self.layer_weights, start=1):
            cfg = BlockConfig(delta=self.delta, mode=self.mode,
                              ffn=lambda x, W=ffn_w, b=ffn_b: np.tanh(x @ W + b))
            s, s_hat = dual_path_step(s, s_hat, m, cfg, proj)
        return s.tokens[1:], s_hat.tokens[1:]

    def encode_image(self, pixels: np.ndarray) -> Tuple[ImageFeatures, ImageFeatures]:
        original, alternate = self._forward_colors(self._patch_colors(pixels))
        g = self.grid_side
        return (ImageFeatures(original, grid_side=g),
                ImageFeatures(alternate, grid_side=g))

    def encode_text(self, keyword: str) -> np.ndarray:
        cached = self._text_cache.get(keyword)
        if cached is not None:
            return cached
        color = keyword_color(keyword)
        probe = np.broadcast_to(color, (self.grid_side, self.grid_side, 3))
        _, alternate = self._forward_colors(np.array(probe))
        vector = alternate.mean(axis=0)
        norm = np.linalg.norm(vector)
        if norm < 1e-12:  # pragma: no cover - tanh features never collapse
            raise ContractViolation(f"text embedding collapsed for {keyword!r}")
        vector = vector / norm
        self._text_cache[keyword] = vector
        return vector

    # -- serialization ----------------------------------------------------

    def _weight_arrays(self) -> List[np.ndarray]:
        arrays = [self.embed, self.cls_token]
        for proj, ffn_w, ffn_b in self.layer_weights:
            arrays.extend([proj.w_k, proj.w_q, proj.w_v, ffn_w, ffn_b])
        return arrays

    def save_weights(self, path) -> None:
        """Single flat float64 array plus a small descriptive header."""
        flat = np.concatenate([a.ravel() for a in self._weight_arrays()])
        np.savez(path,
                 d=np.int64(self.channels),
                 h0=np.int64(self.num_heads),
                 layers=np.int64(self.layers),
                 seed=np.int64(self.seed),
                 grid_side=np.int64(self.grid_side),
                 delta=np.int64(self.delta),
                 mode=np.bytes_(self.mode.value.encode()),
                 weights=flat)

    @classmethod
    def from_weights(cls, path) -> "MockEncoder":
        with np.load(path) as data:
            enc = cls(seed=int(data["seed"]), grid_side=int(data["grid_side"]),
                      channels=int(data["d"]), layers=int(data["layers"]),
                      delta=int(data["delta"]), num_heads=int(data["h0"]),
                      mode=AttentionMode(bytes(data["mode"]).decode()))
            flat = np.asarray(data["weights"], dtype=np.float64)
        expected = sum(a.size for a in enc._weight_arrays())
        if flat.size != expected:
            raise ContractViolation(
                f"weight file holds {flat.size} values, expected {expected}")
        offset = 0
        d = enc.channels

        def take(shape):
            nonlocal offset
            size = int(np.prod(shape))
            block = flat[offset:offset + size].reshape(shape)
            offset += size
            return block

        enc.embed = take((4, d))
        enc.cls_token = take((d,))
        rebuilt = []
        for proj, _, _ in enc.layer_weights:
            new_proj = HeadProjections(w_k=take((d, d)), w_q=take((d, d)),
                                       w_v=take((d, d)), num_heads=enc.num_heads,
                                       scale=proj.scale)
            rebuilt.append((new_proj, take((d, d)), take((d,))))
        enc.layer_weights = rebuilt
        return enc


class MockSegmenter(SegmenterBackend):
    """Click geometry: positive disks minus negative disks, clipped to the
    box when one is present. The dense mask prompt is accepted but unused.

    Disk radius is ``radius_frac`` of the shorter image side. Confidence
    is the fraction of positive clicks inside the box (1.0 with no box).
    """

    capabilities = _DETERMINISTIC

    def __init__(self, radius_frac: float = 0.08):
        if not (0 < radius_frac < 1):
            raise ContractViolation("radius_frac must lie in (0, 1)")
        self.radius_frac = float(radius_frac)

    def segment(self, pixels: np.ndarray, prompts: PromptSet
                ) -> List[Tuple[BinaryMask, float]]:
        h, w = np.asarray(pixels).shape[:2]
        if (w, h) != tuple(prompts.image_size):
            raise ContractViolation(
                f"prompt set sized {prompts.image_size} for a {w}x{h} image")
        radius = self.radius_frac * min(h, w)
        ys, xs = np.mgrid[0:h, 0:w]
        cx = xs + 0.5
        cy = ys + 0.5

        def disks(points):
            region = np.zeros((h, w), dtype=bool)
            for px, py in points:
                region |= (cx - px) ** 2 + (cy - py) ** 2 <= radius ** 2
            return region

        mask = disks(prompts.positives) & ~disks(prompts.negatives)
        confidence = 1.0
        if prompts.box is not None:
            inside = (prompts.box.x0 <= cx) & (cx < prompts.box.x1) \
                & (prompts.box.y0 <= cy) & (cy < prompts.box.y1)
            mask &= inside
            if prompts.positives:
                hits = sum(prompts.box.contains(x, y) for x, y in prompts.positives)
                confidence = hits / len(prompts.positives)
        return [(BinaryMask(mask), confidence)]
