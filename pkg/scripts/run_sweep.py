#!/usr/bin/env python3
"""Run the noise sweep on the default ten-intent configuration.

Writes sweep.csv (q, kappa, mean_test_mse, train_seconds) under --out and
prints one line per grid point.  Use --paper-scale for full-size datasets;
expect that to take hours rather than minutes.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from groupintent import harness


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default="results")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true")
    args = parser.parse_args()

    cfg = harness.load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, master_seed=args.seed)
    if args.paper_scale:
        cfg = harness.paper_scale(cfg)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    points = harness.run_sweep(cfg, out_csv=csv_path)
    for p in points:
        print(f"q={p.q:.2f}  kappa={p.kappa:.4f}  mse={p.mean_test_mse:.6g}  "
              f"train={p.train_seconds:.1f}s")
    print(f"wrote {csv_path}")


if __name__ == "__main__":
    main()
