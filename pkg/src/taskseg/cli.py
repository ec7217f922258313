"""Command-line entry point: segment a dataset and write result files.

Outputs under --out: masks/<stem>.png, metrics.csv, summary.md, and with
--save-trace a trace/<stem>/ directory per image. Images that fail are
logged, listed in the summary, and left out of the aggregate row.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from .backends import build_backends
from .backends.base import Backends, ImageRef
from .chains import TaskPrompt
from .config import RunConfig, load_config
from .datasets import (
    DatasetSpec,
    discover_pairs,
    format_aggregate_table,
    load_image,
    load_mask,
    save_mask_png,
    write_metrics_csv,
)
from .errors import BackendError, ContractViolation, DatasetError
from .metrics import MetricsRecord, aggregate, compute_all
from .refinement import RefineConfig, export_trace, run_refinement

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskseg",
        description="Segment camouflaged objects from a task-generic prompt.")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with config keys (lowest precedence)")
    parser.add_argument("--task-prompt", dest="task_prompt")
    parser.add_argument("--synonym", dest="synonyms", action="append",
                        help="synonym phrasing; repeat for more chains")
    parser.add_argument("--chains", type=int)
    parser.add_argument("--threshold", type=float)
    parser.add_argument("--upsample-factor", dest="upsample_factor", type=float)
    parser.add_argument("--w-pic", dest="w_pic", type=float)
    parser.add_argument("--iters", dest="iterations", type=int)
    parser.add_argument("--attention", dest="attention_mode",
                        choices=("kkv", "vvv", "kqv"))
    parser.add_argument("--post", dest="post_mode",
                        choices=("none", "maxbox", "mask", "maxioubox"))
    parser.add_argument("--backend")
    parser.add_argument("--dataset-root", dest="dataset_root", type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--save-trace", dest="save_trace", action="store_const",
                        const=True)
    parser.add_argument("--workers", type=int)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: value for name, value in vars(args).items()
                 if name != "config" and value is not None}
    return load_config(config_file=args.config, overrides=overrides)


def refine_config(cfg: RunConfig) -> RefineConfig:
    return RefineConfig(w_pic=cfg.w_pic, iterations=cfg.iterations,
                        reweight_base=cfg.reweight_base,
                        segment_input=cfg.segment_input,
                        threshold=cfg.threshold,
                        upsample_factor=cfg.upsample_factor,
                        post_mode=cfg.post_mode,
                        selection_norm=cfg.selection_norm)


@dataclass(frozen=True)
class RunResult:
    out_dir: Path
    scored: Tuple[Tuple[str, MetricsRecord], ...]
    failed: Tuple[str, ...]
    aggregate: Optional[MetricsRecord]


def _process_one(stem: str, image_path: Path, mask_path: Path,
                 prompt: TaskPrompt, backends: Backends, cfg: RunConfig,
                 out_dir: Path) -> MetricsRecord:
    image = ImageRef(stem, load_image(image_path))
    gt = load_mask(mask_path)
    trace = run_refinement(image, prompt, backends, refine_config(cfg))
    save_mask_png(trace.final_mask, out_dir / "masks" / f"{stem}.png")
    if cfg.save_trace:
        export_trace(trace, out_dir / "trace" / stem)
    return compute_all(trace.final_mask.to_float(), gt.grid)


def run_dataset(cfg: RunConfig) -> RunResult:
    """Process every image pair under the dataset root."""
    if cfg.dataset_root is None:
        raise ContractViolation("dataset_root is required")
    if cfg.out is None:
        raise ContractViolation("out is required")
    root = Path(cfg.dataset_root)
    spec = DatasetSpec(name=root.name, image_dir=root / "images",
                       mask_dir=root / "masks")
    pairs = discover_pairs(spec)

    backends = build_backends(cfg.backend, cfg)
    if cfg.workers > 1 and not backends.all_concurrent_safe():
        raise ContractViolation(
            f"backend {cfg.backend!r} is not safe for {cfg.workers} workers")

    prompt = TaskPrompt(cfg.task_prompt, cfg.synonyms).with_chain_count(cfg.chains)
    out_dir = Path(cfg.out)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    def worker(pair):
        stem, image_path, mask_path = pair
        return stem, _process_one(stem, image_path, mask_path, prompt,
                                  backends, cfg, out_dir)

    scored: List[Tuple[str, MetricsRecord]] = []
    failed: List[str] = []
    if cfg.workers == 1:
        outcomes = []
        for pair in pairs:
            try:
                outcomes.append(worker(pair))
            except (BackendError, ContractViolation) as exc:
                logger.error("%s failed: %s", pair[0], exc)
                failed.append(pair[0])
    else:
        outcomes = []
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(worker, pair): pair[0] for pair in pairs}
            for future, stem in futures.items():
                try:
                    outcomes.append(future.result())
                except (BackendError, ContractViolation) as exc:
                    logger.error("%s failed: %s", stem, exc)
                    failed.append(stem)
    scored = sorted(outcomes, key=lambda item: item[0])

    summary = aggregate([record for _, record in scored])
    write_metrics_csv(scored, out_dir / "metrics.csv")
    table = format_aggregate_table(summary, n_scored=len(scored), failed=failed)
    (out_dir / "summary.md").write_text(table, encoding="utf-8")
    return RunResult(out_dir=out_dir, scored=tuple(scored),
                     failed=tuple(sorted(failed)), aggregate=summary)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = run_dataset(cfg)
    except (ContractViolation, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"scored {len(result.scored)} images "
          f"({len(result.failed)} failed) -> {result.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
