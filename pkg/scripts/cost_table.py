"""Client/cloud cost table over deployments and distilled lengths.

Prints the table and writes ``cost_table.csv`` with the bench CSV columns.

    python scripts/cost_table.py --out runs/cost
"""
import argparse
import os
from dataclasses import replace

from tsdistill import nets, saasbench
from tsdistill.nets import NetConfig

ROWS = (
    ("i3d", "cloud_only", 80, 80),
    ("i3d", "cloud_only", 20, 20),
    ("i3d", "cloud_only", 40, 40),
    ("uniform", "cloud_only", 80, 20),
    ("attn", "split", 80, 20),
    ("tsd", "cloud_only", 80, 20),
    ("tsd", "split", 80, 20),
    ("tsd", "split", 80, 40),
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/cost")
    ap.add_argument("--Q", type=int, default=3)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    geom = NetConfig()
    reports = []
    for variant, deployment, T, T_s in ROWS:
        params = nets.init_params(replace(geom, T=T, T_s=T_s), 0, variant)
        reports.append(saasbench.simulate_session(params, variant, deployment, T, T_s, args.Q, geom))
    print(f"{'variant':8} {'deploy':10} {'T':>3} {'T_s':>3} {'client MFLOP':>12} {'sent':>5} "
          f"{'cloud MFLOP':>11} {'KiB sent':>9}")
    for r in reports:
        print(f"{r.variant:8} {r.deployment:10} {r.T:3d} {r.T_s:3d} {r.client_flops / 1e6:12.1f} "
              f"{r.frames_transmitted:5d} {r.cloud_flops / 1e6:11.1f} {r.bytes_transmitted / 1024:9.0f}")
    saasbench.write_cost_csv(os.path.join(args.out, "cost_table.csv"), reports)


if __name__ == "__main__":
    main()
