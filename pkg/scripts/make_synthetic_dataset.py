"""Write a synthetic camouflage dataset to disk.

Produces images/, masks/, and qa_fixture.json under --root, ready for
`python -m taskseg --dataset-root <root> ...`.
"""

import argparse

from taskseg.synthetic import generate_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=64,
                        help="square image side in pixels")
    parser.add_argument("--distractors", type=int, default=2,
                        help="decoy patches per scene")
    args = parser.parse_args()
    spec = generate_dataset(args.root, count=args.count, seed=args.seed,
                            size=args.size, distractors=args.distractors)
    print(f"wrote {args.count} scenes under {spec.image_dir.parent}")


if __name__ == "__main__":
    main()
