"""Certify constant-step runs against the geometric envelope for several lambda values.

Larger lambda delays the threshold but steepens the decay; this prints, per lambda,
how many runs have a non-vacuous envelope within K and how many rows violate it.

    python3 scripts/certify_sweep.py --instances 20 --iters 100
"""
import argparse
import math

from npglab.algorithms import run_npg_constant
from npglab.bounds import BoundParams, certify
from npglab.mdp import random_mdp
from npglab.solver import solve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--states", type=int, default=5)
    ap.add_argument("--actions", type=int, default=3)
    args = ap.parse_args()

    runs = []
    for seed in range(args.instances):
        mdp = random_mdp(seed, args.states, args.actions, args.gamma)
        rep = solve(mdp)
        runs.append((mdp, rep, run_npg_constant(mdp, math.log(mdp.n_actions), args.iters, report=rep)))

    print(f"{'lambda':>7} {'reached':>8} {'violations':>11} {'lemma4 rows':>12}")
    for lam in (1.1, 2.0, 10.0):
        reached = violations = rows = 0
        for mdp, rep, tr in runs:
            bp = BoundParams(mdp.discount, mdp.n_actions, math.log(mdp.n_actions), lam, rep.gap_delta)
            reached += bp.kappa <= args.iters
            cert = certify(tr, rep, ("thm1", "o1k", "lemma4"), lam=lam)
            violations += cert.violations
            rows += len(cert["lemma4"].rows)
        print(f"{lam:7.1f} {reached:5d}/{len(runs):<3d} {violations:11d} {rows:12d}")


if __name__ == "__main__":
    main()
