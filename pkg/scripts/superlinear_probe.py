"""Super-linear diagnostic on near-optimal starts with a doubling L schedule.

    python3 scripts/superlinear_probe.py --L 5 --instances 20
"""
import argparse

from npglab.algorithms import GeometricL, run_npg_adaptive
from npglab.bounds import superlinear_diag
from npglab.mdp import Policy, deterministic_policy, random_mdp, uniform_rho
from npglab.solver import solve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--L", type=float, default=5.0)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--iters", type=int, default=8)
    ap.add_argument("--mix", type=float, default=1e-3, help="weight of the uniform policy in the start")
    args = ap.parse_args()

    S, A, gamma = 4, 3, 0.5
    print(f"{'seed':>4} {'cond':>5} {'L~':>9} {'M':>7} {'b':>9}  ratios log e_k+1 / log e_k")
    for seed in range(args.instances):
        mdp = random_mdp(seed, S, A, gamma)
        rep = solve(mdp)
        best = deterministic_policy(rep.q_star.argmax(axis=1), A).probs
        init = Policy.from_probs((1 - args.mix) * best + args.mix / A)
        rho = uniform_rho(S)
        tr = run_npg_adaptive(mdp, GeometricL(args.L, args.p), args.iters, rho, report=rep, init=init)
        d = superlinear_diag(mdp, tr, rho, args.p, args.L, rep)
        ratios = " ".join(f"{r:.2f}" for _, r in d.ratios)
        print(f"{seed:4d} {str(d.condition_ok):>5} {d.L_tilde:9.3g} {d.M:7.3g} {d.b:9.3g}  {ratios}")


if __name__ == "__main__":
    main()
