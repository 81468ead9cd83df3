import json

import pytest
import typer
from rich.console import Console

from packbench.bin import BinDims
from packbench.helpers import (
    OutputFormat,
    atomic_write_bytes,
    atomic_write_text,
    bin_dims_option,
    dump_text,
    metric_text,
    output_results,
    parse_bin_dims,
    results_table,
)


@pytest.mark.parametrize(
    ("text", "expected"),
    [("10x10x10", BinDims(10, 10, 10)), ("20X30x40", BinDims(20, 30, 40)), (" 5 x 6 x 7 ", BinDims(5, 6, 7))],
)
def test_parse_bin_dims(text, expected):
    assert parse_bin_dims(text) == expected


@pytest.mark.parametrize("text", ["10x10", "0x10x10", "ax10x10", "10x10x10x10", ""])
def test_parse_bin_dims_rejects_bad_sizes(text):
    with pytest.raises(ValueError, match="Invalid bin size"):
        parse_bin_dims(text)


def test_bin_dims_option_raises_bad_parameter():
    with pytest.raises(typer.BadParameter):
        bin_dims_option("10")


def test_atomic_write_creates_parents_and_replaces(tmp_path):
    path = tmp_path / "a" / "b" / "file.bin"

    atomic_write_bytes(path, b"first")
    atomic_write_text(path, "second")

    assert path.read_text() == "second"
    assert [p.name for p in path.parent.iterdir()] == ["file.bin"]


def test_atomic_write_failure_keeps_the_old_file(tmp_path, mocker):
    path = tmp_path / "file.txt"
    atomic_write_text(path, "old")
    mocker.patch("packbench.helpers.os.replace", side_effect=OSError("disk full"))

    with pytest.raises(OSError, match="disk full"):
        atomic_write_text(path, "new")

    assert path.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["file.txt"]


@pytest.mark.parametrize(
    ("column", "value", "text"),
    [
        ("uti", 0.5487, "54.9%"),
        ("num", 11.46, "11.5"),
        ("sta", 0.08123, "0.081"),
        ("count", 100, "100"),
        ("uti", None, "-"),
    ],
)
def test_metric_text(column, value, text):
    assert metric_text(column, value) == text


def test_results_table_formats_metrics_and_failures():
    rows = [
        {"method": "best_fit", "env": "bin-10", "uti": 0.5487, "num": 11.46, "sta": 0.08123, "count": 100},
        {"method": "random", "env": "broken", "error": "cannot read"},
    ]
    console = Console(width=200, record=True)

    console.print(results_table(rows, title="bench"))

    text = console.export_text()
    assert "54.9%" in text
    assert "11.5" in text
    assert "0.081" in text
    assert "failed" in text
    assert "cannot read" in text


def test_output_results_json_keeps_raw_values(capsys):
    output_results([{"method": "best_fit", "uti": 0.5487}], OutputFormat.JSON)

    assert json.loads(capsys.readouterr().out) == [{"method": "best_fit", "uti": 0.5487}]


def test_output_results_yaml(capsys):
    output_results({"method": "random", "num": 12.0}, OutputFormat.YAML)

    out = capsys.readouterr().out
    assert "method: random" in out
    assert "num: 12.0" in out


def test_output_results_table_wraps_a_single_row(mocker):
    printed = mocker.patch("packbench.helpers.console.print")
    row = {"method": "best_fit", "env": "bin-10", "uti": 0.5, "num": 10.0, "sta": 0.0, "count": 1}

    output_results(row, OutputFormat.TABLE)

    table = printed.call_args.args[0]
    assert table.row_count == 1
    assert [column.header for column in table.columns] == ["Method", "Env", "Uti", "Sta", "Num", "Count"]


def test_table_format_has_no_text_dump():
    with pytest.raises(ValueError, match="rendered"):
        dump_text({}, OutputFormat.TABLE)
