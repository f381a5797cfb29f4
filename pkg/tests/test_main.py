import csv
import io
import json

import pytest

from main import main


def run(capsys, *argv):
    code = main([*argv, "--no-cache"])
    return code, capsys.readouterr().out


def run_json(capsys, *argv):
    code, out = run(capsys, *argv, "--format", "json")
    return code, json.loads(out)


def test_enum(capsys):
    code, data = run_json(capsys, "enum", "--max-level", "3")
    assert code == 0
    assert data["level_sizes"] == [1, 2, 5]
    assert data["offspring"] == [4, 5, 6, 5, 8]
    assert [row["causet"] for row in data["rows"] if row["n"] == 2] == ["2;0<1", "2;"]


def test_enum_of_the_first_level(capsys):
    code, data = run_json(capsys, "enum", "--max-level", "1")
    assert code == 0
    assert data["level_sizes"] == [1]
    assert data["offspring"] == [2]


def test_paper_example(capsys):
    code, data = run_json(capsys, "paper-example")
    assert code == 0
    assert data["passed"]
    assert data["path_order"][0] == "1;|2;0<1|3;0<1,1<2"
    assert len(data["site_decoherence"]) == 8


def test_offspring_counts_come_from_the_offspring_records(capsys, monkeypatch):
    monkeypatch.setattr("main.offspring", lambda x: [])
    code, data = run_json(capsys, "enum", "--max-level", "3")
    assert code == 0
    assert data["offspring"] == [0, 0, 0, 0, 0]
    code, data = run_json(capsys, "paper-example")
    assert code == 1
    failed = [row["quantity"] for row in data["rows"] if not row["passed"]]
    assert failed == [f"offspring of x{i}" for i in range(4, 9)]


def test_paths(capsys):
    code, data = run_json(capsys, "paths", "--max-level", "3")
    assert code == 0
    assert [row["re"] for row in data["rows"]] == pytest.approx([-0.5, 0.5, 0.5, 0.5, 0.25, -0.25])
    assert data["norm"] == pytest.approx(1.125)


def test_mu_as_csv(capsys):
    code, out = run(capsys, "mu", "--set", "path:chain", "--max-level", "4", "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [row["n"] for row in rows] == ["1", "2", "3", "4"]
    assert [float(row["mu"]) for row in rows] == pytest.approx([1, 0.25, 0.25, 0.25 / 7])
    assert [float(row["product"]) for row in rows] == pytest.approx([1, 0.25, 0.25, 0.25 / 7])


def test_mu_table_ends_with_the_verdict(capsys):
    code, out = run(capsys, "mu", "--set", "cyl:1;|2;0<1", "--max-level", "4")
    assert code == 0
    assert out.rstrip().endswith("PASS")


@pytest.mark.parametrize(
    "argv",
    [
        ["mu", "--set", "bogus"],
        ["mu", "--set", "site:3;", "--max-level", "2"],
        ["enum", "--max-level", "20"],
        ["enum", "--tol", "0"],
        ["enum", "--ap", "bogus"],
        ["ap", "--ap", "file:/nonexistent/table.json"],
    ],
)
def test_bad_input_exits_with_two(capsys, argv):
    code, out = run(capsys, *argv)
    assert code == 2
    assert out == ""


@pytest.mark.parametrize("suite", ["growth", "qsgp", "ap", "action", "einstein", "classical"])
def test_verify(capsys, suite):
    code, data = run_json(capsys, "verify", "--suite", suite, "--N", "4", "--pairs", "2")
    assert code == 0, [s for s in data["suites"] if not all(c["passed"] for c in s["checks"])]
    assert data["suites"][0]["suite"] == suite
    assert len(data["suites"]) == 1
    assert data["suites"][0]["checks"]
    assert all({"name", "passed"} <= set(check) for check in data["suites"][0]["checks"])


def test_verify_is_deterministic(capsys):
    first = run_json(capsys, "verify", "--suite", "ap", "--seed", "5")
    second = run_json(capsys, "verify", "--suite", "ap", "--seed", "5")
    assert first == second
    assert first[0] == 0


def test_einstein_dump(capsys):
    code, data = run_json(capsys, "einstein", "--N", "3", "--dump", "D")
    assert code == 0
    assert isinstance(data, list)
    assert {"source", "targets"} <= set(data[0])


def test_einstein_suite_for_a_path_pair(capsys):
    code, data = run_json(capsys, "einstein", "--N", "4", "--omega", "path:chain", "--omega-prime", "1;|2;|3;0<1|4;0<1")
    assert code == 0
    assert data["N"] == 4


def test_zscan_extremes(capsys):
    code, data = run_json(capsys, "zscan", "--extremes", "--max-j", "8")
    assert code == 0
    assert [row["j"] for row in data["rows"]] == list(range(2, 9))


def test_ap_table_round_trips_through_a_file(capsys, tmp_path):
    path = tmp_path / "action.json"
    code, data = run_json(capsys, "ap", "--max-level", "3", "--save", str(path))
    assert code == 0
    assert data["transitions"] == 8
    code, data = run_json(capsys, "paths", "--max-level", "3", "--ap", f"file:{path}")
    assert code == 0
    assert [row["re"] for row in data["rows"]] == pytest.approx([-0.5, 0.5, 0.5, 0.5, 0.25, -0.25])


def test_out_writes_a_file(capsys, tmp_path):
    path = tmp_path / "enum.csv"
    code, out = run(capsys, "enum", "--max-level", "2", "--format", "csv", "--out", str(path))
    assert code == 0
    assert out == ""
    assert path.read_text(encoding="utf-8").startswith("n,index,causet")
