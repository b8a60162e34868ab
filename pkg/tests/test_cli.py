import dataclasses
import io
import json
import logging
import subprocess
import sys
from importlib.resources import files

import pytest

from sqv import cli
from sqv.maps import enumerate_maps, format_map

QUARTIC = str(files("sqv").joinpath("data", "quartic0d.cfg"))
TWO_SITE = str(files("sqv").joinpath("data", "quartic_n2.cfg"))


def run(*argv):
    out = io.StringIO()
    code = cli.run(list(argv), out=out)
    return code, out.getvalue()


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def test_selftest_passes():
    code, out = run("selftest")
    assert code == 0
    assert "passed" in out.splitlines()[0]
    assert "checks passed" in out


def test_selftest_records_one_per_check():
    code, out = run("selftest", "--format", "records")
    recs = records(out)
    assert code == 0
    assert len(recs) == len(cli.selftest_checks())
    assert all(r["passed"] is True for r in recs)


def test_enumerate_maps_quartic_order_two():
    code, out = run("enumerate-maps", "--n", "2", "--degree", "4", "--p", "2", "--connected", "--format", "records")
    assert code == 0
    assert sorted(r["embeddings"] for r in records(out)) == [6, 9, 9]


def test_enumerate_maps_table():
    code, out = run("enumerate-maps", "--n", "2", "--degree", "4", "--p", "2", "--connected")
    assert code == 0
    assert out.startswith("24 unlabeled maps in 3 abstract graphs")


def test_enumerate_trees():
    code, out = run("enumerate-trees", "--p", "4", "--degree", "3", "--format", "records")
    assert code == 0
    recs = records(out)
    counts = [r for r in recs if "recursive" in r]
    assert [r["recursive"] for r in counts] == [1, 1, 2, 6]
    assert [r["plane"] for r in counts] == [1, 1, 2, 5]
    qary = [r["trees"] for r in recs if "fuss_catalan" in r]
    assert qary == [1, 1, 3, 12, 55]


def test_verify_quartic_order_two():
    code, out = run("verify", "--theory", QUARTIC, "--n", "2", "--order", "2", "--jobs", "1")
    assert code == 0
    assert "order 2: 24 map checks" in out
    assert "worst rel_discrepancy" in out


def test_verify_records_round_trip():
    code, out = run("verify", "--theory", QUARTIC, "--n", "2", "--order", "2", "--format", "records", "--jobs", "1")
    recs = records(out)
    assert code == 0 and len(recs) == 24
    fields = {"map_key", "order", "feynman_value", "forests", "forest_sum", "rel_discrepancy", "passed"}
    for r in recs:
        assert set(r) == fields
        assert json.loads(json.dumps(r)) == r
        assert r["order"] == 2 and r["passed"] is True
    assert sorted(r["feynman_value"] for r in recs) == [1.0] * 24


def test_verify_order_runs_all_orders():
    code, out = run("verify-order", "--theory", TWO_SITE, "--order", "2", "--format", "records", "--jobs", "2")
    recs = records(out)
    assert code == 0
    assert [sum(r["order"] == p for r in recs) for p in range(3)] == [1, 3, 24]


def test_verify_quadrature_method():
    code, out = run("verify", "--theory", TWO_SITE, "--order", "1", "--method", "quadrature", "--format", "records")
    assert code == 0 and len(records(out)) == 3


def test_output_is_deterministic():
    argv = ("verify", "--theory", TWO_SITE, "--order", "2", "--format", "records", "--jobs", "1")
    assert run(*argv) == run(*argv)


def test_twelve_significant_digits():
    assert cli.fmt(1 / 3) == "0.333333333333"
    assert cli._json_value(2 / 3) == 0.666666666667
    assert cli.fmt(True) == "true"


def test_verification_failure_exit_code(monkeypatch):
    real = cli.verify_order

    def broken(*args, **kwargs):
        rep = real(*args, **kwargs)
        bad = dataclasses.replace(rep.reports[0], rel_discrepancy=1.0)
        return dataclasses.replace(rep, reports=(bad,) + rep.reports[1:])

    monkeypatch.setattr(cli, "verify_order", broken)
    code, out = run("verify", "--theory", QUARTIC, "--order", "1", "--jobs", "1")
    assert code == 1 and "FAIL" in out


def test_amplitude_verb():
    tadpole = format_map(enumerate_maps(2, (4,), 1).maps[0])
    code, out = run("amplitude", "--theory", QUARTIC, "--map", tadpole, "--format", "records")
    recs = records(out)
    assert code == 0
    assert [r["value"] for r in recs[:-1]] == [-0.5, -0.5]
    assert recs[-1]["feynman"] == -1.0 and recs[-1]["forest_sum"] == -1.0


def test_simulate_verb(tmp_path):
    dump = tmp_path / "traj.txt"
    code, out = run(
        "simulate", "--theory", TWO_SITE, "--steps", "2000", "--burn-in", "200", "--chains", "32",
        "--monomial", "0,0", "--monomial", "0,1", "--seed", "3", "--format", "records", "--dump", str(dump),
    )
    recs = records(out)
    assert code == 0
    assert [r["monomial"] for r in recs] == ["0,0", "0,1"]
    assert all(abs(r["z"]) < 4 for r in recs)
    assert len(dump.read_text().splitlines()) == 2000


@pytest.mark.parametrize(
    "argv",
    [
        ("bogus",),
        (),
        ("verify", "--order", "1"),
        ("enumerate-maps", "--n", "two", "--degree", "4", "--p", "1"),
    ],
)
def test_usage_errors_exit_two(argv, capsys):
    assert run(*argv)[0] == 2


def test_config_error_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("N = 1\nA = 1\nkernel = local arity=4 g=oops\n")
    assert run("verify", "--theory", str(bad), "--order", "1")[0] == 2
    assert "line 3" in capsys.readouterr().err
    assert run("verify", "--theory", QUARTIC, "--n", "4", "--order", "1")[0] == 2
    assert run("simulate", "--theory", QUARTIC, "--monomial", "0,5")[0] == 2


def test_log_level_from_environment(monkeypatch):
    monkeypatch.setenv("SQV_LOG", "debug")
    root = logging.getLogger()
    saved = root.level, list(root.handlers)
    root.handlers.clear()
    try:
        run("enumerate-trees", "--p", "2")
        assert root.level == logging.DEBUG
    finally:
        root.setLevel(saved[0])
        root.handlers[:] = saved[1]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sqv", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("sqv ")
