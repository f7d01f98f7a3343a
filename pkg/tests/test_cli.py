import filecmp
import json
import os

import pytest

from lobhawkes.cli import ConfigInvalid, PipelineConfig, main
from lobhawkes.estimator import load_estimators

FAST = ["--k-levels", "1", "--support", "2"]


@pytest.fixture(scope="module")
def day(tmp_path_factory):
    """One simulated 20-minute day taken through ingest and binning."""
    root = tmp_path_factory.mktemp("cli")
    sim, ing = root / "sim", root / "ing"
    assert main(["simulate", "--horizon", "1200", "--seed", "3", "--out", str(sim)] + FAST) == 0
    msgs = [f for f in os.listdir(sim) if "message" in f][0]
    book = [f for f in os.listdir(sim) if "orderbook" in f][0]
    assert main(["ingest", "--messages", str(sim / msgs), "--orderbook", str(sim / book),
                 "--out", str(ing), "--k-levels", "1"]) == 0
    assert main(["bin", "--events", str(ing), "--out", str(root / "day1.npz")] + FAST) == 0
    return root


def test_ingest_matches_simulation(day):
    with open(day / "sim" / "events.csv") as a, open(day / "ing" / "events.csv") as b:
        assert a.read() == b.read()
    report = json.loads((day / "ing" / "report.json").read_text())
    assert report["drift_resyncs"] == 0


def test_estimate_is_deterministic(day):
    for out in ("est_a", "est_b"):
        assert main(["estimate", "--bins", str(day / "day1.npz"), "--out", str(day / out),
                     "--variant", "6", "--day", "d1"]) == 0
    cmp = filecmp.dircmp(day / "est_a", day / "est_b")
    assert cmp.left_list == cmp.right_list and not cmp.diff_files
    assert filecmp.cmpfiles(day / "est_a", day / "est_b", cmp.common_files, shallow=False)[0] == cmp.common_files
    est = load_estimators(day / "est_a")
    assert est.kernels.shape == (12, 12, 8)


def test_delta_override(day):
    assert main(["bin", "--events", str(day / "ing"), "--out", str(day / "coarse.npz"),
                 "--k-levels", "1", "--delta", "0.5", "--support", "20"]) == 0
    assert main(["estimate", "--bins", str(day / "coarse.npz"), "--out", str(day / "coarse"),
                 "--variant", "4"]) == 0
    meta = json.loads((day / "coarse" / "meta.json").read_text())
    assert meta["p"] == 40 and meta["delta"] == 0.5


def test_select_prints_table(day, capsys):
    assert main(["select", "--bins", str(day / "day1.npz"), "--out", str(day / "sel"),
                 "--lambda", "auto"]) == 0
    out = capsys.readouterr().out
    for pair in ("④-③", "⑥-④", "⑤-④", "⑤-③", "⑦-⑥"):
        assert pair in out
    rows = (day / "sel" / "selection.csv").read_text().splitlines()
    assert len(rows) == 8


def test_aggregate_and_export(day):
    assert main(["aggregate", "--bundles", str(day / "est_a"), str(day / "est_b"),
                 "--out", str(day / "agg")]) == 0
    cov = json.loads((day / "agg" / "coverage.json").read_text())
    assert cov["days"] == ["d1", "d1"]
    assert main(["export", "--bundle", str(day / "agg"), "--pair", "+1(i):+1(i)", "--pair", "1:2",
                 "--event", "+1(c)", "--out", str(day / "plots")]) == 0
    names = sorted(os.listdir(day / "plots"))
    assert "kernel_4_to_4.csv" in names and "kernel_1_to_2.csv" in names
    assert "liquidity_5.csv" in names and "time_5.csv" in names


def test_roundtrip_check(capsys):
    assert main(["roundtrip-check", "--horizon", "60"] + FAST) == 0
    assert "identical: True" in capsys.readouterr().out


def test_config_file_and_flags(tmp_path, day):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"delta": 0.5, "support": 2.0, "k_levels": 1}))
    assert main(["bin", "--events", str(day / "ing"), "--out", str(tmp_path / "b.npz"),
                 "--config", str(cfg), "--delta", "0.25"]) == 0
    from lobhawkes.binning import load_bins
    assert load_bins(tmp_path / "b.npz").config.delta == 0.25


@pytest.mark.parametrize("args", [
    ["--delta", "-1"],
    ["--lambda", "-0.1"],
    ["--lambda", "abc"],
    ["--variant", "9"],
    ["--delta", "2", "--support", "1"],
])
def test_invalid_config_exit_code(tmp_path, args, capsys):
    rc = main(["bin", "--events", str(tmp_path), "--out", str(tmp_path / "x.npz")] + args)
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_config_field(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"deltaa": 0.5}))
    assert main(["bin", "--events", str(tmp_path), "--out", str(tmp_path / "x"), "--config", str(cfg)]) == 2


def test_config_reports_every_problem():
    with pytest.raises(ConfigInvalid) as err:
        PipelineConfig(delta=-1, k_levels=0, variant=0).validate()
    assert set(err.value.problems) == {"delta", "k_levels", "variant"}


def test_module_error_exit_code(tmp_path):
    assert main(["estimate", "--bins", str(tmp_path / "missing.npz"), "--out", str(tmp_path / "o")]) == 1
