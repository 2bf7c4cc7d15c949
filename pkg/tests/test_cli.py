import json
import os

import numpy as np
import pytest

from rmrouter.cli import main
from rmrouter.features import load_dataset, load_embeddings
from rmrouter.offline import load_behavior, load_model
from rmrouter.online import init_router, save_state
from rmrouter.serialize import read_json, write_json
from rmrouter.sim import scenario_to_dict

from scenarios import two_specialists_scenario


@pytest.fixture()
def scenario_file(tmp_path):
    scenario = two_specialists_scenario(
        pairs_per_step=8, n_steps=6, offline_pairs=120, seeds=[1, 2]
    )
    path = tmp_path / "scenario.json"
    write_json(path, scenario_to_dict(scenario))
    return str(path)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def train_args(data_dir, out, loss_csv=None, extra=()):
    args = [
        "train-offline",
        "--dataset", f"{data_dir}/dataset.jsonl",
        "--behavior", f"{data_dir}/behavior.jsonl",
        "--embeddings", f"{data_dir}/embeddings.jsonl",
        "--out", out,
        "--lr", "0.5",
        "--epochs", "20",
        "--batch-size", "32",
        "--seed", "3",
    ]
    if loss_csv:
        args += ["--loss-csv", loss_csv]
    return args + list(extra)


class TestPipeline:
    def test_full_workflow(self, tmp_path, scenario_file, capsys):
        data_dir = str(tmp_path / "data")
        assert main(["collect-behavior", "--scenario", scenario_file,
                     "--seed", "1", "--out-dir", data_dir]) == 0
        pairs = load_dataset(f"{data_dir}/dataset.jsonl")
        embs = load_embeddings(f"{data_dir}/embeddings.jsonl")
        records = load_behavior(f"{data_dir}/behavior.jsonl")
        assert len(pairs) == 120
        assert len(embs) == 120
        assert len(records) == 120 * 2

        model_path = str(tmp_path / "model.json")
        loss_csv = str(tmp_path / "loss.csv")
        assert main(train_args(data_dir, model_path, loss_csv)) == 0
        out = capsys.readouterr().out
        assert "held-out routing accuracy" in out
        model = load_model(model_path)
        assert model.n_arms == 2
        assert model.lam == 0.2  # default combined-loss weight
        lines = [l for l in open(loss_csv).read().splitlines() if not l.startswith("#")]
        assert lines[0] == "epoch,total_loss,bt_loss,cls_loss"
        assert len(lines) == 1 + 20

        prior_path = str(tmp_path / "prior.json")
        assert main(["export-prior", "--model", model_path, "--out", prior_path]) == 0
        prior_doc = read_json(prior_path)
        assert np.array_equal(
            np.asarray(prior_doc["bt_embeddings"]), model.bt_embeddings
        )

        out_dir = str(tmp_path / "runs")
        assert main(["run-sim", "--scenario", scenario_file, "--router", "all",
                     "--out-dir", out_dir, "--prior-file", prior_path]) == 0
        summary = [
            l for l in open(f"{out_dir}/summary.csv").read().splitlines()
            if not l.startswith("#")
        ]
        n_routers = 2 + 5 + 3  # single:{0,1}, five fixed baselines, three prior-based
        assert len(summary) == 1 + n_routers * 2  # header + routers x seeds
        assert os.path.exists(f"{out_dir}/thompson_1.metrics.jsonl")
        assert os.path.exists(f"{out_dir}/thompson_1.decisions.jsonl")
        assert os.path.exists(f"{out_dir}/thompson_1.rewards.jsonl")
        assert os.path.exists(f"{out_dir}/thompson_1.state.json")

        report_path = str(tmp_path / "report.csv")
        assert main(["compare", "--summary", f"{out_dir}/summary.csv",
                     "--baseline", "random", "--out", report_path]) == 0
        out = capsys.readouterr().out
        assert "mean_delta" in out
        report_rows = [
            l for l in open(report_path).read().splitlines() if not l.startswith("#")
        ]
        assert len(report_rows) == 1 + n_routers * 2

        assert main(["inspect", model_path]) == 0
        out = capsys.readouterr().out
        assert "offline model: 2 arms" in out

    def test_lambda_zero_trains(self, tmp_path, scenario_file):
        data_dir = str(tmp_path / "data")
        main(["collect-behavior", "--scenario", scenario_file, "--seed", "1",
              "--out-dir", data_dir])
        model_path = str(tmp_path / "model.json")
        assert main(train_args(data_dir, model_path, extra=["--lambda", "0"])) == 0
        model = load_model(model_path)
        assert model.lam == 0.0
        # frozen classifier head keeps its tiny random init, far below the
        # trained ranking head
        assert np.linalg.norm(model.cls_embeddings) < 0.1 * np.linalg.norm(model.bt_embeddings)

    def test_router_all_without_prior_runs_base_suite(self, tmp_path, scenario_file):
        out_dir = str(tmp_path / "runs")
        assert main(["run-sim", "--scenario", scenario_file, "--router", "all",
                     "--seeds", "1", "--out-dir", out_dir]) == 0
        rows = [l for l in open(f"{out_dir}/summary.csv").read().splitlines()
                if not l.startswith("#")]
        assert len(rows) == 1 + (2 + 5)  # header + single:{0,1} + fixed baselines

    def test_metrics_jsonl_steps(self, tmp_path, scenario_file):
        out_dir = str(tmp_path / "runs")
        assert main(["run-sim", "--scenario", scenario_file, "--router", "random",
                     "--seeds", "1", "--out-dir", out_dir]) == 0
        lines = open(f"{out_dir}/random_1.metrics.jsonl").read().splitlines()
        meta = json.loads(lines[0])
        assert "_meta" in meta and meta["_meta"]["router"] == "random"
        assert len(lines) == 1 + 6  # meta + one row per step
        row = json.loads(lines[1])
        assert {"step", "routing_accuracy", "cumulative_regret", "rm_calls"} <= set(row)


class TestValidation:
    def test_missing_dataset_exits_2(self, tmp_path):
        code = main([
            "train-offline",
            "--dataset", str(tmp_path / "nope.jsonl"),
            "--behavior", str(tmp_path / "nope2.jsonl"),
            "--out", str(tmp_path / "m.json"),
        ])
        assert code == 2

    def test_invalid_router_exits_2_and_lists_names(self, tmp_path, scenario_file, capsys):
        code = main(["run-sim", "--scenario", scenario_file, "--router", "sorcery",
                     "--out-dir", str(tmp_path / "runs")])
        assert code == 2
        err = capsys.readouterr().err
        assert "thompson" in err and "majority" in err

    def test_injected_without_prior_file_exits_2(self, tmp_path, scenario_file):
        code = main(["run-sim", "--scenario", scenario_file, "--router", "thompson",
                     "--prior", "injected", "--out-dir", str(tmp_path / "runs")])
        assert code == 2

    def test_offline_router_needs_prior_file(self, tmp_path, scenario_file):
        code = main(["run-sim", "--scenario", scenario_file, "--router", "offline",
                     "--out-dir", str(tmp_path / "runs")])
        assert code == 2

    def test_unknown_scenario_key_exits_2(self, tmp_path):
        doc = scenario_to_dict(two_specialists_scenario(seeds=[1]))
        doc["typo_key"] = True
        path = tmp_path / "bad.json"
        write_json(path, doc)
        code = main(["collect-behavior", "--scenario", str(path),
                     "--out-dir", str(tmp_path / "d")])
        assert code == 2

    def test_version_mismatch_exits_2(self, tmp_path, capsys):
        state = init_router(2, 2)
        path = tmp_path / "state.json"
        save_state(path, state)
        doc = read_json(path)
        doc["version"] = 42
        write_json(path, doc)
        assert main(["inspect", str(path)]) == 2
        assert "supported" in capsys.readouterr().err


class TestInspect:
    def test_fresh_zero_state(self, tmp_path, capsys):
        state = init_router(3, 4, prior_variance=0.5)
        path = str(tmp_path / "state.json")
        save_state(path, state)
        assert main(["inspect", path]) == 0
        out = capsys.readouterr().out
        assert "step=0" in out
        assert out.count("|mean|=0.000000") == 3
        # trace of each covariance is d * prior_variance before any update
        assert out.count("trace(cov)=2.000000") == 3

    def test_injected_state_means_match_prior(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        prior = rng.standard_normal((2, 3))
        state = init_router(2, 3, prior_mode="injected", offline_prior=prior)
        for n, arm in enumerate(state.arms):
            assert np.all(np.abs(arm.mean - prior[n]) < 1e-12)
        path = str(tmp_path / "state.json")
        save_state(path, state)
        assert main(["inspect", path]) == 0
        out = capsys.readouterr().out
        for n in range(2):
            assert f"arm {n}: |mean|={np.linalg.norm(prior[n]):.6f}" in out


class TestDeterminism:
    def test_collect_behavior_rerun_byte_identical(self, tmp_path, scenario_file):
        dirs = [str(tmp_path / d) for d in ("a", "b")]
        for d in dirs:
            assert main(["collect-behavior", "--scenario", scenario_file,
                         "--seed", "5", "--out-dir", d]) == 0
        for name in ("dataset.jsonl", "embeddings.jsonl", "behavior.jsonl"):
            assert read_bytes(f"{dirs[0]}/{name}") == read_bytes(f"{dirs[1]}/{name}")

    def test_train_offline_rerun_byte_identical(self, tmp_path, scenario_file):
        data_dir = str(tmp_path / "data")
        main(["collect-behavior", "--scenario", scenario_file, "--seed", "1",
              "--out-dir", data_dir])
        outs = [str(tmp_path / f"model_{i}.json") for i in range(2)]
        for out in outs:
            assert main(train_args(data_dir, out)) == 0
        assert read_bytes(outs[0]) == read_bytes(outs[1])

    def test_run_sim_jobs_parallel_identical(self, tmp_path, scenario_file):
        dirs = [str(tmp_path / d) for d in ("seq", "par")]
        for d, jobs in zip(dirs, ("1", "2")):
            assert main(["run-sim", "--scenario", scenario_file, "--router",
                         "thompson,random", "--out-dir", d, "--jobs", jobs]) == 0
        assert read_bytes(f"{dirs[0]}/summary.csv") == read_bytes(f"{dirs[1]}/summary.csv")
        assert read_bytes(f"{dirs[0]}/thompson_1.metrics.jsonl") == read_bytes(
            f"{dirs[1]}/thompson_1.metrics.jsonl"
        )
