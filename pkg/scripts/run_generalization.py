#!/usr/bin/env python3
"""Generalization study: score unseen five-node architectures.

Labels all 501 single-split n=5 architectures on 10 seeded scenarios
(tagged ``holdout``) and evaluates a checkpoint trained only on smaller
graphs, measuring how well learned rankings transfer to a graph size the
model never saw.
"""

import argparse
import pathlib
import subprocess
import sys


def sh(*args):
    print("+", " ".join(str(a) for a in args), flush=True)
    subprocess.run([str(a) for a in args], check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True,
                    help="model trained on the desk-scale population")
    ap.add_argument("--outdir", type=pathlib.Path,
                    default=pathlib.Path("generalization"))
    ap.add_argument("--scenario-seed", type=int, default=404)
    ap.add_argument("--label-seed", type=int, default=7)
    ap.add_argument("--scenario-count", type=int, default=10)
    ap.add_argument("--workers", type=int, default=8)
    ap.add_argument("--plant-config", default=None)
    args = ap.parse_args()

    out = args.outdir
    out.mkdir(parents=True, exist_ok=True)
    plant = ["--plant-config", args.plant_config] if args.plant_config else []

    sh("thermarank", "enumerate", "--family", "single", "--nodes", 5,
       "--out", out / "s5.txt")
    sh("thermarank", "gen-scenarios", "--nodes", 5,
       "--count", args.scenario_count, "--seed", args.scenario_seed,
       "--out", out / "scenarios.txt")
    sh("thermarank", "label", "--graphs", out / "s5.txt",
       "--scenarios", out / "scenarios.txt",
       "--workers", args.workers, "--seed", args.label_seed,
       "--tag", "holdout", "--out", out / "s5.jsonl", *plant)
    sh("thermarank", "eval", "--checkpoint", args.checkpoint,
       "--dataset", out / "s5.jsonl", "--out-prefix", out / "eval")
    print(f"done; artifacts in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
