#!/usr/bin/env python3
"""Desk-scale ranking study.

Builds the 95-architecture population (single-split n=3 and n=4 plus
multi-split n=3), labels it against 60 seeded load scenarios, trains the
GAT regressor on a 30/70 scenario split, and writes evaluation tables.

Everything is driven through the ``thermarank`` CLI so a rerun with the
same seeds reproduces every artifact byte for byte.
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
    ap.add_argument("--outdir", type=pathlib.Path, default=pathlib.Path("desk_study"))
    ap.add_argument("--scenario-seed", type=int, default=202)
    ap.add_argument("--label-seed", type=int, default=7)
    ap.add_argument("--train-seed", type=int, default=9)
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=8)
    ap.add_argument("--plant-config", default=None)
    args = ap.parse_args()

    out = args.outdir
    out.mkdir(parents=True, exist_ok=True)
    plant = ["--plant-config", args.plant_config] if args.plant_config else []

    sh("thermarank", "enumerate", "--family", "single", "--nodes", 3,
       "--out", out / "s3.txt")
    sh("thermarank", "enumerate", "--family", "single", "--nodes", 4,
       "--out", out / "s4.txt")
    sh("thermarank", "enumerate", "--family", "multi", "--nodes", 3,
       "--out", out / "m3.txt")
    sh("thermarank", "gen-scenarios", "--nodes", 4, "--count", 60,
       "--seed", args.scenario_seed, "--out", out / "scenarios.txt")

    for pop in ("s3", "s4", "m3"):
        sh("thermarank", "label", "--graphs", out / f"{pop}.txt",
           "--scenarios", out / "scenarios.txt",
           "--workers", args.workers, "--seed", args.label_seed,
           "--out", out / f"{pop}.jsonl", *plant)

    dataset = out / "dataset.jsonl"
    with open(dataset, "w") as fh:
        for pop in ("s3", "s4", "m3"):
            fh.write(open(out / f"{pop}.jsonl").read())

    sh("thermarank", "train", "--dataset", dataset,
       "--epochs", args.epochs, "--batch-size", 100, "--seed", args.train_seed,
       "--out-checkpoint", out / "checkpoint.json",
       "--out-history", out / "history.csv")
    sh("thermarank", "eval", "--checkpoint", out / "checkpoint.json",
       "--dataset", dataset, "--out-prefix", out / "eval")
    print(f"done; artifacts in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
