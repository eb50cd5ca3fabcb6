import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from thermarank import dataset as ds
from thermarank import gat
from thermarank.architectures import Scenario, enumerate_single_split, parse
from thermarank.cli import main
from thermarank.endurance import OlocConfig, label_population

from conftest import random_scenarios


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestDatasetFiles:
    def test_architecture_round_trip(self, tmp_path):
        path = str(tmp_path / "archs.txt")
        archs = enumerate_single_split(3)
        ds.write_architectures(archs, path)
        back = ds.read_architectures(path)
        assert [a.key for a in back] == [a.key for a in archs]

    def test_scenario_round_trip(self, tmp_path):
        path = str(tmp_path / "scen.txt")
        scens = ds.generate_scenarios(4, 7, seed=5)
        ds.write_scenarios(scens, path)
        assert ds.read_scenarios(path) == scens

    def test_scenario_bad_line(self, tmp_path):
        path = tmp_path / "scen.txt"
        path.write_text("0;8.0,9.0\nnot-a-line\n")
        with pytest.raises(ds.DatasetError, match="bad scenario line"):
            ds.read_scenarios(str(path))

    def test_generate_scenarios_validation(self):
        with pytest.raises(ds.DatasetError):
            ds.generate_scenarios(3, 0, seed=0)
        with pytest.raises(ds.DatasetError):
            ds.generate_scenarios(3, 5, seed=0, low=2.0)

    def test_generate_scenarios_seeded(self):
        a = ds.generate_scenarios(3, 5, seed=9)
        b = ds.generate_scenarios(3, 5, seed=9)
        c = ds.generate_scenarios(3, 5, seed=10)
        assert a == b
        assert a != c

    def test_dataset_record_round_trip(self, plant, fast_oloc):
        archs = [parse("S;2;{[0],[1]}"), parse("S;2;{[0,1]}")]
        scens = random_scenarios(2, 2, seed=1)
        labeled, _ = label_population(archs, scens, plant, fast_oloc)
        for inst in labeled:
            rec = ds.DatasetRecord.from_instance(inst, split_tag="train")
            back = ds.DatasetRecord.from_json(rec.to_json())
            assert back == rec
            fg = back.feature_graph()
            assert np.allclose(fg.features, inst.fg.features)
            assert np.array_equal(fg.flat.adjacency, inst.fg.flat.adjacency)

    def test_dataset_file_round_trip(self, tmp_path, plant, fast_oloc):
        archs = [parse("S;2;{[0],[1]}")]
        scens = random_scenarios(2, 3, seed=2)
        labeled, _ = label_population(archs, scens, plant, fast_oloc)
        records = [ds.DatasetRecord.from_instance(i) for i in labeled]
        path = str(tmp_path / "data.jsonl")
        ds.write_dataset(records, path)
        assert ds.read_dataset(path) == records

    def test_split_tag_validated(self):
        with pytest.raises(ds.DatasetError):
            ds.DatasetRecord("S;1;{[0]}", "S", 1, (), ("tank",), (8.0,), 0,
                             1.0, split_tag="validation")

    def test_atomic_write_replaces(self, tmp_path):
        path = str(tmp_path / "out.txt")
        ds.atomic_write_text(path, "one\n")
        ds.atomic_write_text(path, "two\n")
        assert open(path).read() == "two\n"
        assert os.listdir(tmp_path) == ["out.txt"]


class TestEnumerateAndScenariosCli:
    def test_enumerate(self, runner, tmp_path):
        out = str(tmp_path / "a.txt")
        res = invoke(runner, ["enumerate", "--family", "single",
                              "--nodes", "3", "--out", out])
        assert "13 architectures" in res.output
        assert len(ds.read_architectures(out)) == 13

    def test_enumerate_rejects_bad_n(self, runner, tmp_path):
        res = runner.invoke(main, ["enumerate", "--family", "multi",
                                   "--nodes", "1",
                                   "--out", str(tmp_path / "a.txt")])
        assert res.exit_code == 1
        assert "error:" in res.output

    def test_gen_scenarios_fixed(self, runner, tmp_path):
        out = str(tmp_path / "s.txt")
        invoke(runner, ["gen-scenarios", "--nodes", "2",
                        "--fixed", "8.5,15.0", "--out", out])
        assert ds.read_scenarios(out) == [Scenario(0, (8.5, 15.0))]

    def test_gen_scenarios_fixed_length_mismatch(self, runner, tmp_path):
        res = runner.invoke(main, ["gen-scenarios", "--nodes", "3",
                                   "--fixed", "8.5,15.0",
                                   "--out", str(tmp_path / "s.txt")])
        assert res.exit_code == 1

    def test_gen_scenarios_seeded_identical(self, runner, tmp_path):
        a, b = str(tmp_path / "a.txt"), str(tmp_path / "b.txt")
        args = ["gen-scenarios", "--nodes", "3", "--count", "4", "--seed", "6"]
        invoke(runner, args + ["--out", a])
        invoke(runner, args + ["--out", b])
        assert open(a).read() == open(b).read()


@pytest.fixture(scope="module")
def small_workspace(tmp_path_factory):
    """Graphs + scenarios + labels for the CLI pipeline tests."""
    root = tmp_path_factory.mktemp("cliws")
    runner = CliRunner()
    graphs = str(root / "graphs.txt")
    scens = str(root / "scens.txt")
    data = str(root / "data.jsonl")
    invoke(runner, ["enumerate", "--family", "single", "--nodes", "2",
                    "--out", graphs])
    invoke(runner, ["gen-scenarios", "--nodes", "2", "--count", "12",
                    "--seed", "31", "--out", scens])
    invoke(runner, ["label", "--graphs", graphs, "--scenarios", scens,
                    "--n-intervals", "2", "--max-evals", "60",
                    "--restarts", "1", "--seed", "7", "--workers", "2",
                    "--out", data])
    return {"root": root, "graphs": graphs, "scens": scens, "data": data}


class TestLabelCli:
    def test_row_count_and_order(self, small_workspace):
        records = ds.read_dataset(small_workspace["data"])
        assert len(records) == 3 * 12
        keys = [r.arch_key for r in records]
        assert keys == sorted(keys)
        # scenario-minor within each architecture
        assert [r.scenario_id for r in records[:12]] == list(range(12))

    def test_rerun_is_byte_identical(self, runner, small_workspace, tmp_path):
        out2 = str(tmp_path / "again.jsonl")
        invoke(runner, ["label", "--graphs", small_workspace["graphs"],
                        "--scenarios", small_workspace["scens"],
                        "--n-intervals", "2", "--max-evals", "60",
                        "--restarts", "1", "--seed", "7", "--workers", "1",
                        "--out", out2])
        assert open(out2).read() == open(small_workspace["data"]).read()

    def test_resume_from_partial(self, runner, small_workspace, tmp_path):
        out = str(tmp_path / "resumed.jsonl")
        # seed the completion log with the first half of an earlier run
        full = open(small_workspace["data"]).read().splitlines()
        with open(out + ".partial", "w") as fh:
            for line in full[:18]:
                entry = json.loads(line)
                entry["evals"] = 1
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        res = invoke(runner, ["label", "--graphs", small_workspace["graphs"],
                              "--scenarios", small_workspace["scens"],
                              "--n-intervals", "2", "--max-evals", "60",
                              "--restarts", "1", "--seed", "7",
                              "--out", out])
        assert res.output.count("labeled ") == 36 - 18
        assert open(out).read() == open(small_workspace["data"]).read()
        assert not os.path.exists(out + ".partial")

    def test_tagging(self, runner, small_workspace, tmp_path):
        out = str(tmp_path / "tagged.jsonl")
        invoke(runner, ["label", "--graphs", small_workspace["graphs"],
                        "--scenarios", small_workspace["scens"],
                        "--n-intervals", "1", "--max-evals", "20",
                        "--restarts", "0", "--seed", "7",
                        "--tag", "holdout", "--out", out])
        assert all(r.split_tag == "holdout" for r in ds.read_dataset(out))


@pytest.fixture(scope="module")
def trained_workspace(small_workspace):
    runner = CliRunner()
    ck = str(small_workspace["root"] / "ck.json")
    hist = str(small_workspace["root"] / "hist.csv")
    invoke(runner, ["train", "--dataset", small_workspace["data"],
                    "--epochs", "60", "--batch-size", "12", "--seed", "1",
                    "--out-checkpoint", ck, "--out-history", hist])
    return dict(small_workspace, ck=ck, hist=hist)


class TestTrainEvalCli:
    def test_checkpoint_loads(self, trained_workspace):
        model = gat.load_checkpoint(trained_workspace["ck"])
        assert len(model.train_scenarios) == 4  # 30% of 12 scenarios

    def test_history_csv(self, trained_workspace):
        lines = open(trained_workspace["hist"]).read().splitlines()
        assert lines[0] == "bucket_start_epoch,train_mse,test_mse"
        assert len(lines) == 2  # 60 epochs -> one final bucket

    def test_train_deterministic(self, runner, trained_workspace, tmp_path):
        ck2 = str(tmp_path / "ck2.json")
        hist2 = str(tmp_path / "hist2.csv")
        invoke(runner, ["train", "--dataset", trained_workspace["data"],
                        "--epochs", "60", "--batch-size", "12", "--seed", "1",
                        "--out-checkpoint", ck2, "--out-history", hist2])
        assert open(ck2).read() == open(trained_workspace["ck"]).read()
        assert open(hist2).read() == open(trained_workspace["hist"]).read()

    def test_eval_outputs(self, runner, trained_workspace, tmp_path):
        prefix = str(tmp_path / "ev")
        res = invoke(runner, ["eval", "--checkpoint", trained_workspace["ck"],
                              "--dataset", trained_workspace["data"],
                              "--out-prefix", prefix])
        assert "train:" in res.output and "test:" in res.output
        summary = open(prefix + "_summary.csv").read().splitlines()
        assert summary[0] == "partition,n,tau,MSE,MAE,RMSE,R2"
        assert len(summary) == 3
        import csv as csvmod
        rows = list(csvmod.DictReader(open(prefix + "_scatter.csv")))
        assert len(rows) == 36
        assert all(None not in r for r in rows)   # no ragged lines
        float(rows[0]["J_hat"])                   # parses cleanly
        scen_rows = list(csvmod.DictReader(open(prefix + "_scenarios.csv")))
        assert len(scen_rows) == 12
        assert {r["group"] for r in scen_rows} == {"S2"}

    def test_reduce(self, runner, trained_workspace, tmp_path):
        out = str(tmp_path / "reduce.csv")
        res = invoke(runner, [
            "reduce", "--checkpoint", trained_workspace["ck"],
            "--graphs", trained_workspace["graphs"],
            "--scenarios", trained_workspace["scens"],
            "--scenario-id", "0", "--budget", "2",
            "--n-intervals", "2", "--max-evals", "60", "--restarts", "1",
            "--seed", "7", "--dataset", trained_workspace["data"],
            "--out", out])
        import csv as csvmod
        rows = list(csvmod.DictReader(open(out)))
        assert len(rows) == 1
        row = rows[0]
        assert row["budget"] == "2"
        # with full labels supplied the certificate columns are present
        assert int(row["n_ol_plus_1"]) >= 1
        records = ds.read_dataset(trained_workspace["data"])
        best_possible = max(r.J for r in records if r.scenario_id == 0)
        assert float(row["best_found_J"]) <= best_possible + 1e-9

    def test_reduce_budget_clamped(self, runner, trained_workspace, tmp_path):
        out = str(tmp_path / "reduce.csv")
        res = invoke(runner, [
            "reduce", "--checkpoint", trained_workspace["ck"],
            "--graphs", trained_workspace["graphs"],
            "--scenarios", trained_workspace["scens"],
            "--scenario-id", "1", "--budget", "99",
            "--n-intervals", "1", "--max-evals", "20", "--restarts", "0",
            "--seed", "7", "--out", out])
        assert "clamped" in res.output
        import csv as csvmod
        row = list(csvmod.DictReader(open(out)))[0]
        assert row["budget"] == "3"
        # full-population sweep always finds the true optimum
        assert row["n_ol_plus_1"] == ""

    def test_embed(self, runner, trained_workspace, tmp_path):
        out = str(tmp_path / "emb.csv")
        invoke(runner, ["embed", "--checkpoint", trained_workspace["ck"],
                        "--graphs", trained_workspace["graphs"],
                        "--scenarios", trained_workspace["scens"],
                        "--out", out])
        import csv as csvmod
        rows = list(csvmod.DictReader(open(out)))
        assert len(rows) == 36
        assert len(rows[0]) == 2 + gat.READOUT_DIM

    def test_eval_missing_checkpoint(self, runner, trained_workspace, tmp_path):
        res = runner.invoke(main, ["eval", "--checkpoint",
                                   str(tmp_path / "none.json"),
                                   "--dataset", trained_workspace["data"],
                                   "--out-prefix", str(tmp_path / "x")])
        assert res.exit_code != 0


class TestWorkerInvariance:
    def test_workers_do_not_change_output(self, runner, small_workspace,
                                          tmp_path):
        out = str(tmp_path / "w8.jsonl")
        invoke(runner, ["label", "--graphs", small_workspace["graphs"],
                        "--scenarios", small_workspace["scens"],
                        "--n-intervals", "2", "--max-evals", "60",
                        "--restarts", "1", "--seed", "7", "--workers", "8",
                        "--out", out])
        assert open(out).read() == open(small_workspace["data"]).read()
