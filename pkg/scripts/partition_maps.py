"""Print SAIC partition maps and compression ratios for a few goal cells.

    python3 scripts/partition_maps.py --goals 21,22 --rate 2 --episodes 200000
"""
import argparse

from saic import aggregation as agg
from saic import qcore, schemes
from saic.gridworld import GridSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--goals", default="21")
    ap.add_argument("--rate", type=int, default=2)
    ap.add_argument("--episodes", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = qcore.TrainConfig(episodes=args.episodes, seed=args.seed)
    for goal in map(int, args.goals.split(",")):
        spec = GridSpec(n=args.n, goal=goal)
        q, _ = qcore.train_centralized(spec, cfg)
        values, part = schemes.saic_partition(spec, q, args.rate)
        p = agg.reset_distribution(spec)
        ratio = agg.compression_ratio(p, agg.message_distribution(part.assignment, p))
        eps = agg.epsilon_of_partition(values, part)
        print(f"goal {goal}: {part.k} classes, ratio {agg.format_ratio(ratio)}, epsilon {eps:.3f}")
        print(agg.partition_grid(part.assignment, spec))


if __name__ == "__main__":
    main()
