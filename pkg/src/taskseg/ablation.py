"""Knob sweeps: rerun the pipeline per value and tabulate aggregates."""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .cli import RunResult, run_dataset
from .config import RunConfig
from .datasets import METRIC_COLUMNS
from .errors import ContractViolation
from .prompts import PostProcessMode

SWEEPS = {
    "chains": (1, 2, 3, 4, 5),
    "factor": (0.5, 1.0, 2.0, 4.0, 8.0),
    "threshold": (0.80, 0.85, 0.90, 0.95),
    "post": tuple(mode.value for mode in PostProcessMode),
}

_KNOB_FIELDS = {
    "chains": "chains",
    "factor": "upsample_factor",
    "threshold": "threshold",
    "post": "post_mode",
}


def run_sweep(cfg: RunConfig, knob: str,
              values: Optional[Sequence] = None) -> List[Tuple[object, RunResult]]:
    """One full run per value; aggregates land in ablation_<knob>.csv."""
    if knob not in _KNOB_FIELDS:
        raise ContractViolation(
            f"unknown sweep knob {knob!r}; available: {', '.join(sorted(_KNOB_FIELDS))}")
    if cfg.out is None:
        raise ContractViolation("out is required")
    values = SWEEPS[knob] if values is None else tuple(values)
    if not values:
        raise ContractViolation("sweep needs at least one value")

    field = _KNOB_FIELDS[knob]
    out_root = Path(cfg.out)
    results = []
    for value in values:
        run_cfg = replace(cfg, **{field: value,
                                  "out": out_root / f"ablation_{knob}" / str(value)})
        results.append((value, run_dataset(run_cfg)))

    table = out_root / f"ablation_{knob}.csv"
    table.parent.mkdir(parents=True, exist_ok=True)
    with open(table, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow((knob, "n_scored") + METRIC_COLUMNS)
        for value, result in results:
            if result.aggregate is None:
                row = (value, 0) + ("",) * len(METRIC_COLUMNS)
            else:
                row = ((value, len(result.scored))
                       + tuple(f"{getattr(result.aggregate, c):.6f}"
                               for c in METRIC_COLUMNS))
            writer.writerow(row)
    return results
