"""End-to-end tests of the ``efbv`` command line."""

import csv
import json

import pytest

from efbv.cli import (
    EXIT_CONFIGURATION,
    EXIT_DIVERGED,
    EXIT_OK,
    build_arg_parser,
    main,
)
from efbv.types import RoundRecord


def _write_manifest(tmp_path, **overrides):
    data = {
        "synthetic": {"d": 5, "N": 40, "separation": 1.0, "seed": 3},
        "workers": 4,
        "l2": 0.1,
        "compressor": {"family": "comp", "k": 1, "k_prime": 3},
        "rounds": 40,
        "cadence": 10,
        "seeds": [0, 1],
    }
    data.update(overrides)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# -- parser -------------------------------------------------------


def test_parser_requires_subcommand():
    """A bare invocation is a usage error."""
    with pytest.raises(SystemExit):
        build_arg_parser().parse_args([])


def test_dataset_and_synthetic_are_exclusive():
    """--dataset and --synthetic cannot be combined."""
    with pytest.raises(SystemExit):
        build_arg_parser().parse_args(
            ["run", "--dataset", "a.svm", "--synthetic", "2,10,1"]
        )


@pytest.mark.parametrize(
    "argv",
    [
        ["certify", "--seeds", "1"],
        ["certify", "--config", "exp.json"],
        ["shapes", "--out", "x"],
        ["tune", "--bits-per-coord", "32"],
    ],
)
def test_flags_are_scoped_to_their_subcommand(argv):
    """Flags a subcommand cannot use are rejected by the parser."""
    with pytest.raises(SystemExit):
        build_arg_parser().parse_args(argv)


# -- tune ---------------------------------------------------------


def test_tune_explicit_shape(capsys):
    """An explicit comp shape prints both algorithms without gamma."""
    code = main(
        ["tune", "--d", "112", "--n", "1000", "--k", "1", "--k-prime", "56"]
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "comp-(1,56) ef_bv" in out
    assert "comp-(1,56) ef21" in out
    assert "0.00532" in out
    assert "0.555" in out
    assert "omitted" in out


def test_tune_with_constants_prints_gamma(capsys):
    """L and mu add the step-size row."""
    code = main(
        [
            "tune", "--d", "112", "--n", "1000", "--k", "1",
            "--k-prime", "56", "--L", "1.0", "--mu", "0.1",
        ]
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "omitted" not in out
    assert "gamma" in out


def test_tune_from_manifest(tmp_path, capsys):
    """A manifest supplies the shape and smoothness constants."""
    code = main(["tune", "--config", _write_manifest(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "comp-(1,3)" in out
    assert "omitted" not in out


def test_tune_without_shape_is_configuration_error(capsys):
    """A partial shape exits with code 2."""
    assert main(["tune", "--d", "10"]) == EXIT_CONFIGURATION


@pytest.mark.parametrize(
    "flag",
    [["--seeds", "1"], ["--synthetic", "3,20,1"], ["--dataset", "a.svm"]],
)
def test_tune_overrides_need_config(flag):
    """Manifest overrides without --config are configuration errors."""
    argv = ["tune", "--d", "10", "--n", "4", "--k", "1", "--k-prime", "5"]
    assert main(argv + flag) == EXIT_CONFIGURATION


def test_tune_invalid_comp_is_configuration_error():
    """k > k' exits with code 2."""
    code = main(
        ["tune", "--d", "10", "--n", "4", "--k", "5", "--k-prime", "2"]
    )
    assert code == EXIT_CONFIGURATION


# -- shapes -------------------------------------------------------


def test_shapes(capsys):
    """The four dataset shapes are reported."""
    assert main(["shapes"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("mushrooms", "phishing", "a9a", "w8a"):
        assert f"{name} comp-(1," in out
    assert "0.0295" in out
    assert "0.649" in out


# -- certify ------------------------------------------------------


def test_certify_writes_report(tmp_path, capsys):
    """The report goes to stdout and certification.csv at full precision."""
    code = main(
        [
            "certify", "--d", "8", "--n", "4", "--samples", "20000",
            "--probes", "2", "--out", str(tmp_path),
        ]
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.splitlines()[0].startswith("compressor,claimed_eta")
    report = tmp_path / "certification.csv"
    assert report.read_text(encoding="utf-8") == out
    rows = _read_csv(report)
    assert len(rows) == 8
    assert all(row[-1] == "True" for row in rows[1:])
    for row in rows[1:]:
        for value in row[1:-1]:
            assert value == format(float(value), ".17g")


# -- run ----------------------------------------------------------


def test_run_writes_traces(tmp_path, capsys):
    """A run writes traces, summaries, bits-to-target and a plot script."""
    out_dir = tmp_path / "out"
    code = main(
        [
            "run", "--config", _write_manifest(tmp_path),
            "--out", str(out_dir), "--jobs", "1", "--gnuplot",
        ]
    )
    assert code == EXIT_OK
    for name in (
        "ef_bv_seed0.csv",
        "ef_bv_seed1.csv",
        "ef21_seed0.csv",
        "summary_ef_bv.csv",
        "summary_ef21.csv",
        "bits_to_target.csv",
        "plot.gp",
    ):
        assert (out_dir / name).exists(), name
    rows = _read_csv(out_dir / "ef_bv_seed0.csv")
    assert tuple(rows[0]) == RoundRecord.CSV_FIELDS
    assert [r[0] for r in rows[1:]] == ["0", "10", "20", "30", "40"]
    assert float(rows[2][1]) == 10 * 64
    targets = _read_csv(out_dir / "bits_to_target.csv")
    assert targets[0] == ["algorithm", "target", "bits_per_node"]
    assert {r[0] for r in targets[1:]} == {"ef_bv", "ef21"}
    assert "summary_ef_bv.csv" in (out_dir / "plot.gp").read_text()
    assert "bits to f_gap" in capsys.readouterr().out


def test_run_overrides(tmp_path):
    """CLI seeds, data and bit width override the manifest."""
    out_dir = tmp_path / "out"
    code = main(
        [
            "run", "--config", _write_manifest(tmp_path, rounds=10),
            "--out", str(out_dir), "--jobs", "1", "--seeds", "5",
            "--synthetic", "6,30,1.0", "--bits-per-coord", "32",
        ]
    )
    assert code == EXIT_OK
    rows = _read_csv(out_dir / "ef21_seed5.csv")
    assert rows[-1][0] == "10"
    assert float(rows[-1][1]) == 10 * 32
    assert not (out_dir / "ef21_seed0.csv").exists()


def test_run_bits_from_environment(tmp_path, monkeypatch):
    """EFBV_BITS_PER_COORD sets the default bit width."""
    monkeypatch.setenv("EFBV_BITS_PER_COORD", "16")
    out_dir = tmp_path / "out"
    code = main(
        [
            "run", "--config", _write_manifest(tmp_path, rounds=10),
            "--out", str(out_dir), "--jobs", "1",
        ]
    )
    assert code == EXIT_OK
    rows = _read_csv(out_dir / "ef_bv_seed0.csv")
    assert float(rows[-1][1]) == 10 * 16


def test_run_needs_config(tmp_path):
    """run without --config exits with code 2."""
    code = main(["run", "--out", str(tmp_path), "--synthetic", "3,20,1"])
    assert code == EXIT_CONFIGURATION


def test_run_rejects_unknown_manifest_key(tmp_path):
    """Unknown manifest keys exit with code 2."""
    path = _write_manifest(tmp_path, learning_rate=0.1)
    assert main(["run", "--config", path, "--jobs", "1"]) == (
        EXIT_CONFIGURATION
    )


def test_run_reports_divergence(tmp_path):
    """A diverging run exits with code 3 and keeps its trace."""
    path = _write_manifest(tmp_path, x0=[1e13] * 5, seeds=[0])
    out_dir = tmp_path / "out"
    code = main(
        ["run", "--config", path, "--out", str(out_dir), "--jobs", "1"]
    )
    assert code == EXIT_DIVERGED
    assert (out_dir / "ef_bv_seed0.csv").exists()


def test_bad_log_level(tmp_path):
    """An unknown log level exits with code 2, also via the table10 alias."""
    code = main(["table10", "--log-level", "chatty"])
    assert code == EXIT_CONFIGURATION
