"""Measured centralized-minus-SAIC gap against the epsilon return-gap bound.

    python3 scripts/bound_check.py --sizes 3,4,8 --rates 1,2,3 --episodes 100000
"""
import argparse

from saic import qcore, schemes
from saic.gridworld import GridSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="3,4,8")
    ap.add_argument("--rates", default="1,2,3")
    ap.add_argument("--episodes", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'N':>3} {'R':>3} {'gap':>9} {'bound':>9}  ok")
    for n in map(int, args.sizes.split(",")):
        spec = GridSpec(n=n, goal=n * n - 1 if n < 8 else 22)
        cfg = qcore.TrainConfig(episodes=args.episodes, seed=args.seed)
        opt = schemes.centralized_optimum(spec, cfg.gamma, cfg.horizon)
        for rate in map(int, args.rates.split(",")):
            res = schemes.run_saic(spec, cfg, rate)
            gap = opt - res.mean_return
            print(f"{n:>3} {rate:>3} {gap:9.4f} {res.bound:9.3f}  {gap <= res.bound}")


if __name__ == "__main__":
    main()
