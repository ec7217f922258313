"""Dual-stream self-attention kernels.

The encoder keeps two token streams. The original stream advances through
every block with standard query-key attention. From a configurable depth
``delta`` onward a parallel stream is spawned and advanced with a variant
kernel (key-key by default, value-value as an ablation) whose residual
recycles the parallel stream itself, while the attention term is always
computed from the original stream.

All kernels are pure functions over float64 arrays. Heads are contiguous
column blocks of the projected matrices; every head applies a row-wise
softmax scaled by ``HeadProjections.scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ContractViolation


class AttentionMode(str, Enum):
    KKV = "kkv"
    VVV = "vvv"
    KQV = "kqv"


def identity_ffn(x: np.ndarray) -> np.ndarray:
    return x


def default_scale(d_k: int, num_heads: int) -> float:
    """Softmax temperature 1/sqrt(per-head key width)."""
    return 1.0 / np.sqrt(d_k / num_heads)


def _as_float_matrix(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class TokenFeatures:
    """A stack of L token feature vectors at some encoder depth.

    ``layer_index`` counts applied blocks: 0 for raw embeddings, m after
    the m-th block. Encoder streams carry a class token plus a square
    patch grid; the kernels themselves only require L >= 1.
    """

    tokens: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        tokens = _as_float_matrix(self.tokens, "tokens")
        if tokens.shape[0] < 1:
            raise ContractViolation("need at least one token")
        if self.layer_index < 0:
            raise ContractViolation("layer_index must be >= 0")
        object.__setattr__(self, "tokens", tokens)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class HeadProjections:
    """Key/query/value projections shared by all kernels.

    ``w_k`` and ``w_q`` must map to the same width; key and value widths
    must both divide evenly into ``num_heads`` contiguous column blocks.
    """

    w_k: np.ndarray
    w_q: np.ndarray
    w_v: np.ndarray
    num_heads: int = 1
    scale: float = 1.0

    def __post_init__(self):
        w_k = _as_float_matrix(self.w_k, "w_k")
        w_q = _as_float_matrix(self.w_q, "w_q")
        w_v = _as_float_matrix(self.w_v, "w_v")
        d = w_k.shape[0]
        if w_q.shape[0] != d or w_v.shape[0] != d:
            raise ContractViolation("projection input widths disagree")
        if w_k.shape[1] != w_q.shape[1]:
            raise ContractViolation("key and query widths must match")
        if self.num_heads < 1:
            raise ContractViolation("num_heads must be >= 1")
        if w_k.shape[1] % self.num_heads or w_v.shape[1] % self.num_heads:
            raise ContractViolation("head count must divide key and value widths")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ContractViolation("scale must be a positive real")
        object.__setattr__(self, "w_k", w_k)
        object.__setattr__(self, "w_q", w_q)
        object.__setattr__(self, "w_v", w_v)

    @property
    def input_width(self) -> int:
        return self.w_k.shape[0]

    @property
    def value_width(self) -> int:
        return self.w_v.shape[1]

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, d_k: Optional[int] = None,
               d_v: Optional[int] = None, num_heads: int = 1,
               weight_std: float = 1.0, scale: Optional[float] = None) -> "HeadProjections":
        """Draw dense Gaussian projections; scale defaults to 1/sqrt(d_k/h)."""
        d_k = d if d_k is None else d_k
        d_v = d if d_v is None else d_v
        if scale is None:
            scale = default_scale(d_k, num_heads)
        return cls(
            w_k=rng.normal(0.0, weight_std, (d, d_k)),
            w_q=rng.normal(0.0, weight_std, (d, d_k)),
            w_v=rng.normal(0.0, weight_std, (d, d_v)),
            num_heads=num_heads,
            scale=scale,
        )


def _split_heads(mat: np.ndarray, num_heads: int) -> np.ndarray:
    # (L, w) -> (h, L, w/h); head n owns columns [n*w/h, (n+1)*w/h)
    length, width = mat.shape
    return mat.reshape(length, num_heads, width // num_heads).transpose(1, 0, 2)


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def _attend(features: TokenFeatures, proj: HeadProjections, mode: AttentionMode,
            return_weights: bool = False):
    x = features.tokens
    if x.shape[1] != proj.input_width:
        raise ContractViolation(
            f"token width {x.shape[1]} does not match projection input {proj.input_width}")
    keys = _split_heads(x @ proj.w_k, proj.num_heads)
    values = _split_heads(x @ proj.w_v, proj.num_heads)
    if mode is AttentionMode.KKV:
        # The copy keeps numpy off its symmetric-product fast path, whose
        # rounding differs from the general matmul; with it, shared key and
        # query weights make kkv and kqv outputs bitwise identical.
        logits = keys.copy() @ keys.transpose(0, 2, 1)
    elif mode is AttentionMode.KQV:
        queries = _split_heads(x @ proj.w_q, proj.num_heads)
        logits = queries @ keys.transpose(0, 2, 1)
    elif mode is AttentionMode.VVV:
        logits = values @ values.transpose(0, 2, 1)
    else:  # pragma: no cover - enum is closed
        raise ContractViolation(f"unknown attention mode {mode!r}")
    weights = _row_softmax(logits * proj.scale)
    out = weights @ values  # (h, L, d_v/h)
    merged = out.transpose(1, 0, 2).reshape(x.shape[0], proj.value_width)
    if return_weights:
        return merged, weights
    return merged


def attention_kkv(features: TokenFeatures, proj: HeadProjections) -> np.ndarray:
    """Key-key attention: softmax(K K^T * scale) V, heads concatenated."""
    return _attend(features, proj, AttentionMode.KKV)


def attention_kqv(features: TokenFeatures, proj: HeadProjections) -> np.ndarray:
    """Standard query-key attention: softmax(Q K^T * scale) V."""
    return _attend(features, proj, AttentionMode.KQV)


def attention_vvv(features: TokenFeatures, proj: HeadProjections) -> np.ndarray:
    """Value-value ablation kernel: softmax(V V^T * scale) V."""
    return _attend(features, proj, AttentionMode.VVV)


def attention_weights(features: TokenFeatures, proj: HeadProjections,
                      mode: AttentionMode) -> np.ndarray:
    """Per-head softmax matrices, shape (num_heads, L, L). Rows sum to 1."""
    _, weights = _attend(features, proj, AttentionMode(mode), return_weights=True)
    return weights


_KERNELS = {
    AttentionMode.KKV: attention_kkv,
    AttentionMode.KQV: attention_kqv,
    AttentionMode.VVV: attention_vvv,
}


@dataclass(frozen=True)
class BlockConfig:
    """Per-block recurrence settings.

    ``delta`` is the 1-based block index at which the parallel stream is
    spawned; ``mode`` picks the kernel the parallel stream uses; ``ffn``
    is the host encoder's token-wise transform (identity by default so
    the bare recurrence can be tested in isolation).
    """

    delta: int
    mode: AttentionMode = AttentionMode.KKV
    ffn: Callable[[np.ndarray], np.ndarray] = field(default=identity_ffn)

    def __post_init__(self):
        if self.delta < 1:
            raise ContractViolation("delta must be >= 1 (blocks are 1-based)")
        object.__setattr__(self, "mode", AttentionMode(self.mode))


def dual_path_step(s_m: TokenFeatures, s_hat_m: Optional[TokenFeatures], m: int,
                   cfg: BlockConfig, proj: HeadProjections,
                   ) -> Tuple[TokenFeatures, Optional[TokenFeatures]]:
    """Advance both streams through block ``m`` (1-based).

    The original stream always takes standard attention with its own
    residual. The parallel stream is created at m == delta from the
    original stream and thereafter re-uses its own residual, but its
    attention term is always computed from the original stream's tokens.
    The parallel input must be absent for m <= delta and present after.
    Inputs are never mutated.
    """
    if m < 1:
        raise ContractViolation("block index m must be >= 1")
    if m <= cfg.delta and s_hat_m is not None:
        raise ContractViolation(
            f"parallel stream must be absent entering block {m} (delta={cfg.delta})")
    if m > cfg.delta and s_hat_m is None:
        raise ContractViolation(
            f"parallel stream missing entering block {m} (delta={cfg.delta})")
    if proj.value_width != s_m.width:
        raise ContractViolation(
            "residual needs value width equal to token width "
            f"({proj.value_width} != {s_m.width})")

    attn_main = attention_kqv(s_m, proj)
    s_next = TokenFeatures(cfg.ffn(attn_main + s_m.tokens), layer_index=m)

    if m < cfg.delta:
        return s_next, None
    attn_alt = _KERNELS[cfg.mode](s_m, proj)
    residual = s_m.tokens if m == cfg.delta else s_hat_m.tokens
    s_hat_next = TokenFeatures(cfg.ffn(attn_alt + residual), layer_index=m)
    return s_next, s_hat_next
