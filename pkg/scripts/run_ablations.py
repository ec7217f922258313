"""Sweep one pipeline knob (or all of them) over a dataset.

Each value gets its own full run under <out>/ablation_<knob>/<value>/ and
one aggregate row in <out>/ablation_<knob>.csv.
"""

import argparse
import sys

from taskseg.ablation import SWEEPS, run_sweep
from taskseg.config import load_config
from taskseg.errors import ContractViolation, DatasetError


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset-root", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--knob", default="all",
                        choices=sorted(SWEEPS) + ["all"])
    parser.add_argument("--iters", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--backend", default=None)
    args = parser.parse_args()

    overrides = {"dataset_root": args.dataset_root, "out": args.out}
    for name in ("seed", "backend"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if args.iters is not None:
        overrides["iterations"] = args.iters
    cfg = load_config(overrides=overrides)

    knobs = sorted(SWEEPS) if args.knob == "all" else [args.knob]
    try:
        for knob in knobs:
            results = run_sweep(cfg, knob)
            print(f"{knob}: {len(results)} runs -> "
                  f"{cfg.out / f'ablation_{knob}.csv'}")
    except (ContractViolation, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
