"""Training-free camouflaged-object segmentation from one generic prompt."""

from .attention import (
    AttentionMode,
    BlockConfig,
    HeadProjections,
    TokenFeatures,
    attention_kkv,
    attention_kqv,
    attention_vvv,
    dual_path_step,
)
from .chains import TaskPrompt, parse_keyword, run_chain_prompting
from .config import RunConfig, load_config
from .heatmap import Heatmap, build_consensus_heatmap
from .metrics import MetricsRecord, compute_all, iou
from .prompts import BinaryMask, Box, PostProcessMode, PromptSet, extract_points
from .refinement import (
    IterationTrace,
    RefineConfig,
    reweight_image,
    run_refinement,
    select_final_mask,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionMode",
    "BinaryMask",
    "BlockConfig",
    "Box",
    "Heatmap",
    "HeadProjections",
    "IterationTrace",
    "MetricsRecord",
    "PostProcessMode",
    "PromptSet",
    "RefineConfig",
    "RunConfig",
    "TaskPrompt",
    "TokenFeatures",
    "attention_kkv",
    "attention_kqv",
    "attention_vvv",
    "build_consensus_heatmap",
    "compute_all",
    "dual_path_step",
    "extract_points",
    "iou",
    "load_config",
    "parse_keyword",
    "reweight_image",
    "run_chain_prompting",
    "run_refinement",
    "select_final_mask",
    "__version__",
]
