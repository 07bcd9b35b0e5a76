#!/usr/bin/env python3
"""Full desk-profile training run with both masked objectives enabled."""

import argparse

from textreid.config import desk_profile
from textreid.training import save_run, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", default="data/desk")
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    cfg = desk_profile(dataset_dir=args.dataset, output_dir=args.out, seed=args.seed)
    report, model = train(cfg, log=print)
    save_run(args.out, report, model)
    print(f"metrics: {report.final_metrics.to_json()}")
    print(f"wall clock: {report.wall_clock_sec:.1f}s")


if __name__ == "__main__":
    main()
