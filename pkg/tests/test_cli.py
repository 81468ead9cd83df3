import csv
import json
import logging

import pytest
from conftest import error_line, write_lines

from packbench.bin import BinDims
from packbench.dataset import generate_dataset, load_dataset, write_dataset
from packbench.errors import NonFiniteLossError
from packbench.main import LOG_LEVEL_ENV_VAR, app, configure_logging


TINY_TRAIN = [
    "--preset",
    "smoke",
    "--n-envs",
    "2",
    "--steps-per-update",
    "5",
    "--batch-size",
    "4",
    "--epochs",
    "1",
    "--steps-per-epoch",
    "20",
    "--ppo-epochs",
    "1",
    "--checkpoint-every",
    "1",
    "--ems-cap",
    "16",
    "--embed-dim",
    "8",
    "--blocks",
    "1",
]


def test_version(runner):
    result = runner.invoke(app, ["--version"])

    assert result.exit_code == 0
    assert result.output.startswith("packbench ")


def test_gen_dataset(runner, tmp_path):
    out = tmp_path / "rs.jsonl"

    result = runner.invoke(app, ["gen-dataset", "--out", str(out), "--count", "3", "--length", "5", "--seed", "1"])

    assert result.exit_code == 0, result.output
    dataset = load_dataset(out)
    assert len(dataset) == 3
    assert dataset == generate_dataset(BinDims.cube(10), 3, 1, 5)


def test_gen_dataset_scales_an_existing_file(runner, tmp_path):
    source = tmp_path / "bin10.jsonl"
    write_dataset(generate_dataset(BinDims.cube(10), 2, 0, 6), source)
    out = tmp_path / "bin30.jsonl"

    result = runner.invoke(app, ["gen-dataset", "--out", str(out), "--bin", "30x30x30", "--scale-from", str(source)])

    assert result.exit_code == 0, result.output
    assert load_dataset(out).sequences == load_dataset(source).scaled(3).sequences


def test_gen_dataset_rejects_non_multiple_scale(runner, tmp_path):
    source = tmp_path / "bin10.jsonl"
    write_dataset(generate_dataset(BinDims.cube(10), 1, 0, 3), source)

    result = runner.invoke(
        app, ["gen-dataset", "--out", str(tmp_path / "x.jsonl"), "--bin", "25x25x25", "--scale-from", str(source)]
    )

    assert result.exit_code == 1
    assert error_line(result.output)["error"] == "domain_error"


def test_bad_bin_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(app, ["gen-dataset", "--out", str(tmp_path / "x.jsonl"), "--bin", "10x10"])

    assert result.exit_code == 2
    assert not (tmp_path / "x.jsonl").exists()


def test_eval_json(runner):
    args = ["eval", "-p", "best_fit", "-d", "bin-10", "--count", "2", "--length", "20", "--output", "json"]

    result = runner.invoke(app, args)

    assert result.exit_code == 0, result.output
    row = json.loads(result.stdout)
    assert (row["method"], row["env"], row["count"]) == ("best_fit", "bin-10", 2)
    assert 0.0 < row["uti"] <= 1.0


def test_eval_writes_reports(runner, tmp_path):
    report, instances, scenes = tmp_path / "summary.csv", tmp_path / "instances.csv", tmp_path / "scenes"

    result = runner.invoke(
        app,
        [
            "eval",
            "-p",
            "heightmap_min",
            "--count",
            "2",
            "--length",
            "20",
            "-o",
            str(report),
            "--instances",
            str(instances),
            "--scenes",
            str(scenes),
        ],
    )

    assert result.exit_code == 0, result.output
    with report.open() as handle:
        assert [row["method"] for row in csv.DictReader(handle)] == ["heightmap_min"]
    assert len(instances.read_text().splitlines()) == 3
    assert sorted(p.name for p in scenes.iterdir()) == ["scene-0000.json", "scene-0001.json"]


def test_eval_unknown_policy(runner, mocker):
    mocker.patch("packbench.bench.policy_plugins", return_value={})

    result = runner.invoke(app, ["eval", "-p", "nonesuch", "--count", "1", "--length", "5"])

    assert result.exit_code == 2
    assert error_line(result.output)["error"] == "unknown_policy"


def test_eval_missing_dataset_file(runner, tmp_path):
    missing = tmp_path / "missing.jsonl"

    result = runner.invoke(app, ["eval", "-p", "best_fit", "-d", str(missing)])

    assert result.exit_code == 2
    line = error_line(result.output)
    assert line["error"] == "io_error"
    assert "missing.jsonl" in line["message"]


def test_eval_corrupt_dataset(runner, tmp_path):
    path = write_lines(tmp_path / "corrupt.jsonl", ['{"format":"packbench-rs"'])

    result = runner.invoke(app, ["eval", "-p", "best_fit", "-d", str(path)])

    assert result.exit_code == 2
    assert error_line(result.output)["error"] == "dataset_error"


def test_eval_scales_a_dataset_file_onto_the_bin(runner, tmp_path):
    path = tmp_path / "rs.jsonl"
    write_dataset(generate_dataset(BinDims.cube(10), 2, 3, 20), path)
    base = ["eval", "-p", "best_fit", "-d", str(path)]
    report = tmp_path / "summary.csv"

    small = runner.invoke(app, [*base, "--output", "json"])
    large = runner.invoke(app, [*base, "--bin", "30x30x30", "--report", str(report)])

    assert small.exit_code == 0, small.output
    assert large.exit_code == 0, large.output
    with report.open() as handle:
        row = next(csv.DictReader(handle))
    assert float(row["uti"]) == pytest.approx(json.loads(small.stdout)["uti"])


def test_eval_rejects_a_bin_that_is_not_a_multiple(runner):
    result = runner.invoke(app, ["eval", "-p", "best_fit", "--count", "1", "--length", "5", "--bin", "25x25x25"])

    assert result.exit_code == 1
    assert error_line(result.output)["error"] == "domain_error"


@pytest.mark.parametrize("command", ["eval", "bench", "export-scenes"])
def test_evaluation_commands_share_out_and_bin(runner, command):
    result = runner.invoke(app, [command, "--help"])

    assert result.exit_code == 0, result.output
    assert "--out" in result.output
    assert "--bin" in result.output


def test_bench_writes_a_table(runner, tmp_path):
    out = tmp_path / "bench.csv"

    result = runner.invoke(
        app,
        ["bench", "-m", "best_fit", "-m", "online_bph", "-e", "bin-10", "-e", "bin-20"]
        + ["--count", "2", "--length", "15", "--out", str(out)],
    )

    assert result.exit_code == 0, result.output
    with out.open() as handle:
        rows = list(csv.DictReader(handle))
    assert [(r["method"], r["env"]) for r in rows] == [
        ("best_fit", "bin-10"),
        ("best_fit", "bin-20"),
        ("online_bph", "bin-10"),
        ("online_bph", "bin-20"),
    ]
    assert rows[0]["uti"] == rows[1]["uti"]


def test_bench_json_output(runner):
    args = ["bench", "-m", "random", "-e", "bin-10", "--count", "1", "--length", "10", "--output", "json"]

    result = runner.invoke(app, args)

    assert result.exit_code == 0, result.output
    assert [row["method"] for row in json.loads(result.stdout)] == ["random"]


def test_bench_with_a_failed_cell_exits_one(runner, tmp_path):
    out = tmp_path / "bench.csv"
    missing = str(tmp_path / "missing.jsonl")

    result = runner.invoke(
        app,
        ["bench", "-m", "best_fit", "-e", "bin-10", "-e", missing, "--count", "1", "--length", "10", "--out", str(out)],
    )

    assert result.exit_code == 1
    line = error_line(result.output)
    assert line["error"] == "bench_cell_failed"
    assert "missing.jsonl" in line["message"]
    assert len(out.read_text().splitlines()) == 3


def test_config_show_json(runner):
    result = runner.invoke(app, ["config", "show", "--preset", "smoke", "--output", "json"])

    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    assert data["n_envs"] == 2
    assert data["policy"]["blocks"] == 3


def test_config_show_reads_the_environment_variable(runner, tmp_path, monkeypatch):
    path = write_lines(tmp_path / "train.yaml", ["seed: 9"])
    monkeypatch.setenv("PACKBENCH_CONFIG", str(path))

    result = runner.invoke(app, ["config", "show", "--output", "json"])

    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["seed"] == 9


def test_config_show_table(runner):
    result = runner.invoke(app, ["config", "show", "--preset", "large"])

    assert result.exit_code == 0, result.output
    assert "preset 'large'" in result.output
    assert "policy.embed_dim" in result.output


def test_config_show_malformed_file(runner, tmp_path):
    path = write_lines(tmp_path / "bad.yaml", ["lr: [unclosed"])

    result = runner.invoke(app, ["config", "show", "--config", str(path)])

    assert result.exit_code == 2
    assert error_line(result.output)["error"] == "malformed_config"


def test_config_init_refuses_to_overwrite(runner, tmp_path):
    path = tmp_path / "train.yaml"

    first = runner.invoke(app, ["config", "init", str(path), "--preset", "smoke"])
    second = runner.invoke(app, ["config", "init", str(path)])
    forced = runner.invoke(app, ["config", "init", str(path), "--preset", "large", "--force"])

    assert first.exit_code == 0, first.output
    assert second.exit_code == 1
    assert "already" in second.output
    assert forced.exit_code == 0, forced.output
    assert "n_envs: 128" in path.read_text()


@pytest.mark.parametrize("command", [["config", "show"], ["train"]])
def test_unknown_preset_is_a_usage_error(runner, tmp_path, command):
    result = runner.invoke(app, [*command, "--preset", "huge"])

    assert result.exit_code == 2
    assert "huge" in result.output


def test_train_then_evaluate_the_checkpoint(runner, tmp_path):
    out = tmp_path / "run"

    trained = runner.invoke(app, ["train", *TINY_TRAIN, "--out", str(out)])

    assert trained.exit_code == 0, trained.output
    assert "Finished 2 updates" in trained.output
    for name in ("config.yaml", "metrics.csv", "checkpoint-0.ckpt", "checkpoint-2.ckpt", "final.ckpt"):
        assert (out / name).exists()

    evaluated = runner.invoke(
        app,
        ["eval", "-p", f"ckpt:{out / 'final.ckpt'}", "--count", "2", "--length", "10", "--ems-cap", "16"]
        + ["--output", "json"],
    )

    assert evaluated.exit_code == 0, evaluated.output
    assert json.loads(evaluated.stdout)["method"] == "final"


def test_train_rejects_invalid_overrides(runner, tmp_path):
    result = runner.invoke(app, ["train", "--preset", "smoke", "--out", str(tmp_path / "run"), "--lr", "-1"])

    assert result.exit_code == 2
    assert error_line(result.output)["error"] == "validation_error"
    assert not (tmp_path / "run").exists()


def test_aborted_training_names_the_checkpoint(runner, tmp_path, mocker):
    mocker.patch("packbench.ppo.update_policy", side_effect=NonFiniteLossError("PPO loss is not finite"))

    result = runner.invoke(app, ["train", *TINY_TRAIN, "--out", str(tmp_path / "run")])

    assert result.exit_code == 1
    line = error_line(result.output)
    assert line["error"] == "training_aborted"
    assert "checkpoint-0.ckpt" in line["message"]


def test_export_scenes(runner, tmp_path):
    out = tmp_path / "scenes"

    args = ["export-scenes", "-p", "online_bph", "--out", str(out), "--count", "2", "--length", "10"]
    args += ["--bin", "20x20x20"]

    result = runner.invoke(app, args)

    assert result.exit_code == 0, result.output
    assert len(list(out.glob("scene-*.json"))) == 2
    assert all(json.loads(p.read_text())["bin"] == [20, 20, 20] for p in out.glob("scene-*.json"))


def test_split_dataset(runner, tmp_path):
    result = runner.invoke(app, ["split-dataset", "--out", str(tmp_path), "--count", "2", "--length", "5"])

    assert result.exit_code == 0, result.output
    names = {p.name for p in tmp_path.iterdir()}
    assert {"types-sub.json", "types-exc.json", "rs.jsonl", "rs_sub.jsonl", "rs_exc.jsonl"} <= names


@pytest.mark.parametrize(("verbose", "level"), [(0, logging.WARNING), (1, logging.INFO), (3, logging.DEBUG)])
def test_verbosity_sets_the_log_level(verbose, level):
    configure_logging(verbose)

    logger = logging.getLogger("packbench")
    assert logger.level == level
    assert len(logger.handlers) == 1


@pytest.mark.parametrize(
    ("value", "level"), [("debug", logging.DEBUG), ("ERROR", logging.ERROR), ("loud", logging.WARNING)]
)
def test_log_level_environment_variable_wins(monkeypatch, value, level):
    monkeypatch.setenv(LOG_LEVEL_ENV_VAR, value)

    configure_logging(2)

    assert logging.getLogger("packbench").level == level
