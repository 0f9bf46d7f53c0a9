"""Run one or more presets and print their aggregate tables.

    python3 scripts/reproduce.py all-schemes rate-sweep --episodes 50000 --seeds 0,1
"""
import argparse
import sys

from saic import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("presets", nargs="+")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--episodes")
    ap.add_argument("--seeds")
    ap.add_argument("--workers")
    args = ap.parse_args()
    overrides = {k: v for k in ("episodes", "seeds", "workers")
                 if (v := getattr(args, k)) is not None}
    status = 0
    for name in args.presets:
        cfg = harness.load_config(name, overrides)
        out = harness.run_dir_name(cfg, args.out)
        _, failures = harness.run_sweep(cfg, out)
        print(f"== {name}")
        print(harness.report(out))
        status |= bool(failures)
    return status


if __name__ == "__main__":
    sys.exit(main())
