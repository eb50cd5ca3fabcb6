"""Command-line pipeline: enumerate, label, train, evaluate, reduce.

Every command is deterministic given its inputs and seeds, and writes
output files atomically, so reruns are byte-identical.  Labeling keeps a
per-row completion log next to the output file and resumes from it.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from . import architectures as ag
from . import dataset as ds
from . import gat
from . import metrics as mt
from .architectures import Scenario
from .endurance import LabeledInstance, OlocConfig, label_one
from .plant import IntegrationError, PlantParams, default_params


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_plant(path: str | None) -> PlantParams:
    try:
        if path:
            return PlantParams.from_file(path)
        return default_params()
    except (OSError, ValueError) as exc:
        _fail(f"plant config: {exc}")


@click.group()
def main():
    """Thermal-architecture enumeration and GNN rank screening."""


@main.command("enumerate")
@click.option("--family", type=click.Choice(["single", "multi"]), required=True)
@click.option("--nodes", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def cmd_enumerate(family, nodes, out):
    """Write every architecture of one family, one record per line."""
    try:
        if family == "single":
            archs = ag.enumerate_single_split(nodes)
        else:
            archs = ag.enumerate_multi_split(nodes)
        ds.write_architectures(archs, out)
    except (ag.ArchitectureError, OSError) as exc:
        _fail(f"{out}: {exc}")
    click.echo(f"{len(archs)} architectures -> {out}")


@main.command("gen-scenarios")
@click.option("--nodes", type=int, required=True)
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--low", type=float, default=4.0, show_default=True)
@click.option("--high", type=float, default=16.0, show_default=True)
@click.option("--fixed", type=str, default=None,
              help="comma-separated loads for a single fixed scenario")
@click.option("--out", type=click.Path(), required=True)
def cmd_gen_scenarios(nodes, count, seed, low, high, fixed, out):
    """Seeded heat-load scenarios (numpy PCG64), uniform in [low, high] kW."""
    try:
        if fixed is not None:
            loads = tuple(float(x) for x in fixed.split(","))
            if len(loads) != nodes:
                raise ds.DatasetError(
                    f"--fixed has {len(loads)} loads, expected {nodes}"
                )
            scenarios = [Scenario(0, loads)]
        else:
            scenarios = ds.generate_scenarios(nodes, count, seed, low, high)
        ds.write_scenarios(scenarios, out)
    except (ds.DatasetError, ag.ArchitectureError, ValueError, OSError) as exc:
        _fail(f"{out}: {exc}")
    click.echo(f"{len(scenarios)} scenarios -> {out}")


@main.command("label")
@click.option("--graphs", type=click.Path(exists=True), required=True)
@click.option("--scenarios", type=click.Path(exists=True), required=True)
@click.option("--plant-config", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--n-intervals", type=int, default=4, show_default=True)
@click.option("--max-evals", type=int, default=400, show_default=True)
@click.option("--restarts", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tag", type=click.Choice(list(ds.SPLIT_TAGS)), default="")
@click.option("--out", type=click.Path(), required=True)
def cmd_label(graphs, scenarios, plant_config, workers, n_intervals,
              max_evals, restarts, seed, tag, out):
    """Label graphs x scenarios with the optimal-control oracle (resumable)."""
    params = _load_plant(plant_config)
    cfg = OlocConfig(n_intervals=n_intervals, max_evals=max_evals,
                     restarts=restarts, seed=seed)
    try:
        archs = sorted(ds.read_architectures(graphs), key=lambda a: a.key)
        scens = ds.read_scenarios(scenarios)
    except (OSError, ds.DatasetError, ag.ArchitectureError) as exc:
        _fail(str(exc))

    items = [(a, s) for a in archs for s in scens]
    partial_path = out + ".partial"
    done: dict[tuple[str, int], dict] = {}
    if os.path.exists(partial_path):
        with open(partial_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                done[(entry["arch_key"], entry["scenario_id"])] = entry

    pending = [
        item for item in items if (item[0].key, item[1].scenario_id) not in done
    ]

    def run(item):
        arch, scenario = item
        try:
            inst = label_one(arch, scenario, params, cfg)
        except IntegrationError as exc:
            return {"arch_key": arch.key, "scenario_id": scenario.scenario_id,
                    "skip": str(exc)}
        entry = json.loads(ds.DatasetRecord.from_instance(inst, tag).to_json())
        entry["evals"] = inst.label.evals_used
        return entry

    with open(partial_path, "a") as log:
        if workers <= 1:
            results = map(run, pending)
        else:
            pool = ThreadPoolExecutor(max_workers=workers)
            results = pool.map(run, pending)
        for entry in results:
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            log.flush()
            done[(entry["arch_key"], entry["scenario_id"])] = entry
            if "skip" in entry:
                click.echo(
                    f"skipped {entry['arch_key']} {entry['scenario_id']}: "
                    f"{entry['skip']}", err=True)
            else:
                click.echo(
                    f"labeled {entry['arch_key']} {entry['scenario_id']} "
                    f"J={entry['J']:.3f} evals={entry['evals']}")
        if workers > 1:
            pool.shutdown()

    records = []
    n_skipped = 0
    for item in items:
        entry = done[(item[0].key, item[1].scenario_id)]
        if "skip" in entry:
            n_skipped += 1
            continue
        entry = {k: v for k, v in entry.items() if k != "evals"}
        records.append(ds.DatasetRecord.from_json(json.dumps(entry)))
    ds.write_dataset(records, out)
    os.unlink(partial_path)
    click.echo(f"{len(records)} rows ({n_skipped} skipped) -> {out}")


@main.command("train")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=int, default=5000, show_default=True)
@click.option("--batch-size", type=int, default=100, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-fraction", type=float, default=0.30, show_default=True)
@click.option("--out-checkpoint", type=click.Path(), required=True)
@click.option("--out-history", type=click.Path(), required=True)
def cmd_train(dataset_path, epochs, batch_size, learning_rate, seed,
              train_fraction, out_checkpoint, out_history):
    """Scenario-level 30/70 split and GAT training; holdout rows are skipped."""
    try:
        cfg = gat.TrainConfig(epochs=epochs, batch_size=batch_size,
                              learning_rate=learning_rate, seed=seed,
                              train_fraction=train_fraction)
        records = [r for r in ds.read_dataset(dataset_path)
                   if r.split_tag != "holdout"]
        instances = _instances_from_records(records)
        model, history = gat.train(instances, cfg)
    except (gat.ModelError, ds.DatasetError, OSError) as exc:
        _fail(str(exc))
    gat.save_checkpoint(model, out_checkpoint, train_config={
        "epochs": epochs, "batch_size": batch_size,
        "learning_rate": learning_rate, "seed": seed,
        "train_fraction": train_fraction,
    })
    history.to_csv(out_history)
    click.echo(
        f"trained on {len(model.train_scenarios)} scenarios -> "
        f"{out_checkpoint}, history -> {out_history}"
    )


class _RecordInstance:
    """Adapter giving dataset records the labeled-instance surface."""

    def __init__(self, record: ds.DatasetRecord):
        self.record = record
        self.fg = record.feature_graph()
        self.scenario = Scenario(record.scenario_id, record.loads)
        self.label = type("L", (), {"J": record.J})()


def _instances_from_records(records):
    return [_RecordInstance(r) for r in records]


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out-prefix", type=click.Path(), required=True)
def cmd_eval(checkpoint, dataset_path, out_prefix):
    """Global tau per partition plus per-scenario rank metrics and scatter."""
    try:
        model = gat.load_checkpoint(checkpoint)
        records = ds.read_dataset(dataset_path)
    except (gat.ModelError, ds.DatasetError, OSError) as exc:
        _fail(str(exc))
    if not records:
        _fail(f"{dataset_path}: empty dataset")

    train_ids = set(model.train_scenarios)
    J_hat = gat.predict_many(model, [r.feature_graph() for r in records])
    J = np.array([r.J for r in records])

    def partition_of(r: ds.DatasetRecord) -> str:
        if r.split_tag == "holdout":
            return "holdout"
        return "train" if r.scenario_id in train_ids else "test"

    partitions = [partition_of(r) for r in records]

    summary_lines = ["partition,n,tau,MSE,MAE,RMSE,R2\n"]
    for part in ("train", "test", "holdout"):
        idx = [i for i, p in enumerate(partitions) if p == part]
        if len(idx) < 2:
            continue
        tau = mt.kendall_tau(list(J[idx]), list(J_hat[idx]))
        rep = mt.regression_report(J[idx], J_hat[idx])
        summary_lines.append(
            f"{part},{len(idx)},{tau!r},{rep['MSE']!r},{rep['MAE']!r},"
            f"{rep['RMSE']!r},{rep['R2']!r}\n"
        )
        click.echo(f"{part}: n={len(idx)} tau={tau:.4f} R2={rep['R2']:.4f}")
    ds.atomic_write_text(out_prefix + "_summary.csv", "".join(summary_lines))

    evals = scenario_evaluations(records, J_hat, partitions)
    mt.write_scenario_evals([e for _, e in evals], out_prefix + "_scenarios.csv")

    order_true = np.argsort(np.argsort(-J, kind="stable"), kind="stable")
    order_pred = np.argsort(np.argsort(-J_hat, kind="stable"), kind="stable")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["arch_key", "scenario_id", "group", "partition",
         "J", "J_hat", "rank_true", "rank_pred"]
    )
    for i, r in enumerate(records):
        writer.writerow(
            [r.arch_key, r.scenario_id, r.group(), partitions[i],
             repr(r.J), repr(float(J_hat[i])), order_true[i], order_pred[i]]
        )
    ds.atomic_write_text(out_prefix + "_scatter.csv", buf.getvalue())
    click.echo(f"wrote {out_prefix}_summary.csv, _scenarios.csv, _scatter.csv")


def scenario_evaluations(records, J_hat, partitions):
    """Rank metrics per (scenario, population group); returns
    [(partition, ScenarioEval), ...] in deterministic order."""
    keys = sorted({(r.scenario_id, r.group()) for r in records})
    out = []
    for sid, group in keys:
        idx = [i for i, r in enumerate(records)
               if r.scenario_id == sid and r.group() == group]
        part = partitions[idx[0]]
        J_g = [records[i].J for i in idx]
        Jh_g = [float(J_hat[i]) for i in idx]
        out.append((part, mt.ScenarioEval.from_values(sid, group, J_g, Jh_g)))
    return out


@main.command("reduce")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--graphs", type=click.Path(exists=True), required=True)
@click.option("--scenarios", type=click.Path(exists=True), required=True)
@click.option("--scenario-id", type=int, default=None,
              help="restrict to one scenario id from the file")
@click.option("--budget", type=int, required=True)
@click.option("--plant-config", type=click.Path(exists=True), default=None)
@click.option("--n-intervals", type=int, default=4, show_default=True)
@click.option("--max-evals", type=int, default=400, show_default=True)
@click.option("--restarts", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None,
              help="full labels, enables N_OL+1 and reduction fraction")
@click.option("--out", type=click.Path(), required=True)
def cmd_reduce(checkpoint, graphs, scenarios, scenario_id, budget, plant_config,
               n_intervals, max_evals, restarts, seed, dataset_path, out):
    """Rank by prediction, oracle-verify only the top-k candidates."""
    if budget < 1:
        _fail("budget must be >= 1")
    params = _load_plant(plant_config)
    cfg = OlocConfig(n_intervals=n_intervals, max_evals=max_evals,
                     restarts=restarts, seed=seed)
    try:
        model = gat.load_checkpoint(checkpoint)
        archs = sorted(ds.read_architectures(graphs), key=lambda a: a.key)
        scens = ds.read_scenarios(scenarios)
    except (gat.ModelError, ds.DatasetError, ag.ArchitectureError, OSError) as exc:
        _fail(str(exc))
    if scenario_id is not None:
        scens = [s for s in scens if s.scenario_id == scenario_id]
        if not scens:
            _fail(f"scenario id {scenario_id} not present in {scenarios}")

    labels_by_key = {}
    if dataset_path:
        for r in ds.read_dataset(dataset_path):
            labels_by_key[(r.arch_key, r.scenario_id)] = r.J

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["scenario_id", "n_graphs", "budget", "best_found_J",
                     "best_found_key", "n_ol_plus_1", "reduction_fraction"])
    for scen in scens:
        k = min(budget, len(archs))
        if k < budget:
            click.echo(
                f"warning: budget {budget} exceeds population {len(archs)}; "
                f"clamped", err=True)
        fgs = [ag.node_features(a, Scenario(scen.scenario_id,
                                            scen.loads[: a.n_cphx]))
               for a in archs]
        J_hat = gat.predict_many(model, fgs)
        order = np.argsort(-J_hat, kind="stable")
        best_J, best_key = -np.inf, ""
        for i in order[:k]:
            inst = label_one(archs[i], scen, params, cfg)
            if inst.label.J > best_J:
                best_J, best_key = inst.label.J, archs[i].key
        nol1 = red = ""
        have_all = all(
            (a.key, scen.scenario_id) in labels_by_key for a in archs
        )
        if labels_by_key and have_all:
            J_true = [labels_by_key[(a.key, scen.scenario_id)] for a in archs]
            nol1 = mt.n_ol(J_true, list(J_hat)) + 1
            red = repr(1.0 - nol1 / len(archs))
        writer.writerow(
            [scen.scenario_id, len(archs), k, repr(best_J), best_key, nol1, red]
        )
        click.echo(
            f"scenario {scen.scenario_id}: best-found J={best_J:.3f} "
            f"({best_key})" + (f" N_OL+1={nol1} reduction={red}" if red else "")
        )
    ds.atomic_write_text(out, buf.getvalue())
    click.echo(f"report -> {out}")


@main.command("embed")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--graphs", type=click.Path(exists=True), required=True)
@click.option("--scenarios", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def cmd_embed(checkpoint, graphs, scenarios, out):
    """Export the 48-dim graph embeddings as CSV."""
    try:
        model = gat.load_checkpoint(checkpoint)
        archs = sorted(ds.read_architectures(graphs), key=lambda a: a.key)
        scens = ds.read_scenarios(scenarios)
    except (gat.ModelError, ds.DatasetError, ag.ArchitectureError, OSError) as exc:
        _fail(str(exc))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["arch_key", "scenario_id"] +
                    [f"e{i}" for i in range(gat.READOUT_DIM)])
    n_rows = 0
    for scen in scens:
        fgs = [ag.node_features(a, Scenario(scen.scenario_id,
                                            scen.loads[: a.n_cphx]))
               for a in archs]
        emb = gat.export_embeddings(model, fgs)
        for a, row in zip(archs, emb):
            writer.writerow([a.key, scen.scenario_id] + [repr(v) for v in row])
            n_rows += 1
    ds.atomic_write_text(out, buf.getvalue())
    click.echo(f"{n_rows} embeddings -> {out}")


if __name__ == "__main__":
    main()
