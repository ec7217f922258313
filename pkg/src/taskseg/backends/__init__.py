"""Backend interfaces, deterministic mocks, and the name registry.

Real-model adapters are an optional install; they register themselves here
under a name the CLI can select. Only the mock wiring ships by default.
"""

from pathlib import Path
from typing import Callable, Dict

from ..errors import ContractViolation
from .base import (
    BackendCapabilities,
    Backends,
    CaptionQABackend,
    EncoderBackend,
    ImageRef,
    SegmenterBackend,
    pixel_digest,
    select_candidate,
)
from .mock import MockCaptionQA, MockEncoder, MockSegmenter, keyword_color

__all__ = [
    "BackendCapabilities", "Backends", "CaptionQABackend", "EncoderBackend",
    "ImageRef", "SegmenterBackend", "pixel_digest", "select_candidate",
    "MockCaptionQA", "MockEncoder", "MockSegmenter", "keyword_color",
    "register_backend", "build_backends", "available_backends",
]

QA_FIXTURE_NAME = "qa_fixture.json"


def _build_mock(cfg) -> Backends:
    root = getattr(cfg, "dataset_root", None)
    if root is None:
        raise ContractViolation("mock backend needs a dataset root for its QA fixture")
    fixture = Path(root) / QA_FIXTURE_NAME
    if not fixture.exists():
        raise ContractViolation(f"missing QA fixture {fixture}")
    return Backends(
        qa=MockCaptionQA.from_file(fixture),
        encoder=MockEncoder(
            seed=getattr(cfg, "seed", 0),
            grid_side=getattr(cfg, "mock_grid_side", 8),
            channels=getattr(cfg, "mock_channels", 32),
            layers=getattr(cfg, "mock_layers", 4),
            delta=getattr(cfg, "mock_delta", 2),
            mode=getattr(cfg, "attention_mode", "kkv"),
        ),
        segmenter=MockSegmenter(radius_frac=getattr(cfg, "mock_radius_frac", 0.08)),
    )


_BUILDERS: Dict[str, Callable[[object], Backends]] = {"mock": _build_mock}


def register_backend(name: str, builder: Callable[[object], Backends]) -> None:
    """Hook for adapter packages to make themselves selectable by name."""
    _BUILDERS[name] = builder


def available_backends():
    return sorted(_BUILDERS)


def build_backends(name: str, cfg) -> Backends:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ContractViolation(
            f"unknown backend {name!r}; available: {', '.join(available_backends())}"
        ) from None
    return builder(cfg)
