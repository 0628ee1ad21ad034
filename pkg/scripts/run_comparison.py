"""Run the five-algorithm comparison over several seeds and print the median error table.

    python3 scripts/run_comparison.py --seeds 5 --config scripts/comparison.cfg
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from npglab.experiment import ALGORITHMS, ExperimentConfig, parse_config, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = parse_config(args.config.read_text()) if args.config else ExperimentConfig(out_dir="results/comparison")
    if args.out:
        cfg = replace(cfg, out_dir=args.out)

    curves = {a: [] for a in cfg.algorithms}
    for seed in range(args.seeds):
        res = run_experiment(replace(cfg, seed=seed))
        for t in res.traces:
            curves[t.algorithm].append([r.scaled_error for r in t.records])
    algs = [a for a in ALGORITHMS if a in curves]
    med = {a: np.median(np.array(curves[a]), axis=0) for a in algs}

    print(f"median scaled error over {args.seeds} seeds ({cfg.n_states}x{cfg.n_actions}, gamma={cfg.gamma})")
    print("k".rjust(4) + "".join(a.rjust(12) for a in algs))
    for k in sorted({0, 1, 2, 5, 10, 20, cfg.iterations} & set(range(cfg.iterations + 1))):
        print(f"{k:4d}" + "".join(f"{med[a][k]:12.3e}" for a in algs))
    print(f"per-seed CSV and SVG files in {cfg.out_dir}/")


if __name__ == "__main__":
    main()
