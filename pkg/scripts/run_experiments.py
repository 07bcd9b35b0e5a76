#!/usr/bin/env python3
"""Run the three experiment suites (ablation, head comparison, sweeps) at a
reduced scale that finishes on a laptop; pass --full for desk-profile runs."""

import argparse
from pathlib import Path

from textreid.config import desk_profile
from textreid.experiments import (run_ablation, run_mim_comparison, run_sweep,
                                  write_csv)
from textreid.storage import read_dataset
from textreid.svgplot import sweep_charts


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", default="data/desk")
    parser.add_argument("--out", default="runs/experiments")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--full", action="store_true",
                        help="30-epoch desk runs instead of the quick 6-epoch ones")
    args = parser.parse_args()
    out = Path(args.out)
    overrides = dict(dataset_dir=args.dataset, seed=args.seed)
    if not args.full:
        overrides.update(epochs=6, warmup_epochs=1)
    cfg = desk_profile(**overrides)
    dataset = read_dataset(args.dataset)

    _, lines = run_ablation(cfg, dataset=dataset, log=print)
    write_csv(out / "ablation.csv", lines)
    _, lines = run_mim_comparison(cfg, dataset=dataset, log=print)
    write_csv(out / "mim_compare.csv", lines)
    _, lines = run_sweep(cfg, dataset=dataset, log=print)
    write_csv(out / "sweep.csv", lines)
    rows = [tuple(float(v) for v in line.split(",")[:3]) for line in lines[1:]]
    sweep_charts(rows, out)
    print(f"results in {out}")


if __name__ == "__main__":
    main()
