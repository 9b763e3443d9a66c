import io
import json

import numpy as np
import pytest

from detfuse import cli
from detfuse.config import ConfigError, load_config
from detfuse.harness import (
    ExperimentReport,
    generate_observations,
    read_stage_trace,
    run_rmse_experiment,
    run_roc_experiment,
    run_trace,
    trace_histogram,
    write_csv,
    write_stage_trace,
)

from conftest import make_scenario

VALID = """
schema_version = 1

[scenario]
p0 = 0.8
free = ["p0", "h1_dep"]

[scenario.h0]
copula = "independence"
marginals = [[3.0, 4.0], [5.0, 4.0]]

[scenario.h1]
copula = "clayton"
dependence = 1.0759
marginals = [[5.0, 4.0], [7.0, 4.0]]

[grid]
y_min = 0.0
y_max = 60.0
delta = 1.0

[init]
indicators = [[[3.0, -60.0]], [[-3.0, 60.0]]]
rule = "or"

[costs]
c00 = 0.0
c01 = 1.0
c10 = 2.0
c11 = 0.0
"""


def write_config(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_config_happy_path(quick_config_path):
    cfg = load_config(quick_config_path)
    assert cfg.schema_version == 1
    assert cfg.scenario.params.free == ("p0", "h1_dep")
    assert cfg.grid.n_cells == 60
    assert cfg.init_bank().rates == (1, 1)
    assert cfg.init_rule().decisions.tolist() == [False, True, True, True]
    assert cfg.costs.c10 == 2.0
    assert cfg.trace.stages == 3
    assert cfg.trace.warm_start_chain is False
    assert cfg.trace.design_restarts == 0
    assert cfg.rmse.rho_values == [0.5]
    assert cfg.rmse.design_restarts == 0
    assert cfg.efficiency.groups == 3
    assert cfg.roc.budgets == [(2, 50)]
    assert len(cfg.sha256) == 64


def test_scenario_with_dependence(quick_config_path):
    cfg = load_config(quick_config_path)
    scen = cfg.scenario_with_dependence(2.1316)
    assert scen.params.h1.dependence == 2.1316
    assert scen.params.free == ("p0", "h1_dep")
    assert scen.params.p0 == 0.8


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda t: t.replace("schema_version = 1", ""), "schema_version"),
        (lambda t: t.replace("schema_version = 1", "schema_version = 9"), "schema_version 9"),
        (lambda t: t.replace("[grid]", "[grids]"), "[grid]"),
        (lambda t: t.replace('copula = "clayton"', 'copula = "frank"'), "frank"),
        (lambda t: t.replace("dependence = 1.0759\n", ""), "requires 'dependence'"),
        (
            lambda t: t.replace(
                'copula = "independence"',
                'copula = "independence"\ndependence = 1.0',
            ),
            "no 'dependence'",
        ),
        (
            lambda t: t.replace(
                "indicators = [[[3.0, -60.0]], [[-3.0, 60.0]]]",
                "indicators = [[[3.0, -60.0]]]",
            ),
            "init.indicators",
        ),
        (lambda t: t.replace("c10 = 2.0", "c10 = -1.0"), "costs"),
        (lambda t: t.replace("y_max = 60.0", "y_max = 60.3"), "grid"),
        (lambda t: t.replace("p0 = 0.8", 'p0 = "high"'), "scenario.p0"),
        (lambda t: t + "\n[trace]\nstages = true\nsamples_per_stage = 5\nseed = 1\n", "trace.stages"),
        (
            lambda t: t
            + "\n[trace]\nstages = 3\nsamples_per_stage = [5, 5]\nseed = 1\n",
            "samples_per_stage",
        ),
        (
            lambda t: t
            + "\n[rmse]\nrho_values = [0.3]\ntheta_values = [0.5, 1.0]\n"
            "stages = 2\nsamples_per_stage = 5\nreplicates = 2\nbase_seed = 1\n",
            "pair up",
        ),
        (
            lambda t: t
            + "\n[rmse]\nrho_values = [0.3]\ntheta_values = [0.5]\n"
            "stages = 2\nsamples_per_stage = 5\nreplicates = 2\nbase_seed = 1\n"
            'design_restarts = "many"\n',
            "rmse.design_restarts",
        ),
        (
            lambda t: t
            + "\n[efficiency]\nrho = 0.5\ntheta = 1.0\ngroups = 2\n"
            "samples_per_group = 5\nreplicates = 2\nbase_seed = 1\n"
            "thresholds1 = [10.0]\nthresholds2 = [10.0, 20.0]\n",
            "threshold",
        ),
        (
            lambda t: t
            + "\n[roc]\nrho = 0.5\ntheta = 1.0\nc01_values = [1.0]\n"
            "budgets = [[2]]\nreplicates = 2\nn_test_h0 = 5\nn_test_h1 = 5\nbase_seed = 1\n",
            "budgets",
        ),
        (lambda t: t + "\nnot valid toml [", "TOML"),
    ],
)
def test_load_config_errors(tmp_path, mutate, fragment):
    path = write_config(tmp_path, mutate(VALID))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert fragment in str(err.value)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_explicit_rule_list(tmp_path):
    path = write_config(
        tmp_path, VALID.replace('rule = "or"', "rule = [0, 1, 1, 0]")
    )
    rule = load_config(path).init_rule()
    assert rule.decisions.tolist() == [False, True, True, False]


def test_write_csv_frozen_bytes():
    report = ExperimentReport(
        kind="demo",
        columns=("a", "b", "s", "flag"),
        rows=[(1, 0.5, "hi", True), (2, 1 / 3, "y,z", False)],
        metadata={"ignored": "yes"},
    )
    buf = io.StringIO()
    write_csv(report, buf)
    assert buf.getvalue() == (
        "a,b,s,flag\r\n1,0.5,hi,1\r\n2,0.3333333333333333,\"y,z\",0\r\n"
    )


def test_generate_observations_shapes():
    scen = make_scenario()
    y, labels = generate_observations(scen.mixture(), 50, np.random.default_rng(0))
    assert y.shape == (50, 2)
    assert labels.shape == (50,)
    y2, labels2 = generate_observations(scen.hypothesis(1), 20, np.random.default_rng(0))
    assert y2.shape == (20, 2)
    assert labels2 is None


def test_run_trace_deterministic_and_seed_override(quick_config_path):
    cfg = load_config(quick_config_path)
    a = run_trace(cfg)
    b = run_trace(cfg)
    c = run_trace(cfg, seed=999)
    assert len(a) == 3
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.group.counts, rb.group.counts)
    assert not all(
        np.array_equal(ra.group.counts, rc.group.counts) for ra, rc in zip(a, c)
    )


def test_stage_trace_round_trip(tmp_path, quick_config_path):
    cfg = load_config(quick_config_path)
    records = run_trace(cfg)
    path = tmp_path / "trace.jsonl"
    write_stage_trace(records, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    first, later = json.loads(lines[0]), json.loads(lines[1])
    assert "quantizers" in first and "quantizer_changes" not in first
    assert "quantizer_changes" in later and "quantizers" not in later
    back = read_stage_trace(path)
    for rec, orig in zip(back, records):
        assert rec["bank"] == orig.design.bank
        assert rec["fusion_rule"] == orig.design.rule
        assert rec["estimate"]["p0"] == orig.estimate.p0


def test_stage_trace_rejects_delta_first(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"stage": 1, "rule": "0", "quantizer_changes": []}\n')
    with pytest.raises(ValueError):
        read_stage_trace(path)


def test_rmse_experiment_deterministic(quick_config_path):
    cfg = load_config(quick_config_path)
    a = run_rmse_experiment(cfg)
    b = run_rmse_experiment(cfg)
    assert a.columns == (
        "rho",
        "j",
        "n_total",
        "rmse_p1",
        "rmse_theta1",
        "crlb_sqrt_p1",
        "crlb_sqrt_theta1",
    )
    assert a.rows == b.rows
    assert [r[:2] for r in a.rows] == [(0.5, 1), (0.5, 2)]
    assert a.metadata["config_sha256"] == cfg.sha256


def test_roc_experiment_schema(quick_config_path):
    cfg = load_config(quick_config_path)
    rep = run_roc_experiment(cfg)
    detectors = sorted({r[1] for r in rep.rows})
    assert detectors == ["clairvoyant", "feedback_2x50", "independence"]
    assert len(rep.rows) == 3 * len(cfg.roc.c01_values)
    assert rep.rows == sorted(rep.rows, key=lambda r: (r[1], r[2]))
    for row in rep.rows:
        pf, pd = row[3], row[4]
        assert 0.0 <= pf <= 1.0 and 0.0 <= pd <= 1.0


def test_cli_rmse_bytes_identical(tmp_path, quick_config_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["rmse", "--config", str(quick_config_path), "--out", str(out1)]) == 0
    assert cli.main(["rmse", "--config", str(quick_config_path), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert b"\r\n" in out1.read_bytes()


def test_cli_replicates_override(tmp_path, quick_config_path, capsys):
    rc = cli.main(
        ["rmse", "--config", str(quick_config_path), "--replicates", "2"]
    )
    captured = capsys.readouterr()
    assert rc == 0
    meta = json.loads(captured.err.strip().splitlines()[-1])
    assert meta["replicates"] == 2
    assert captured.out.startswith("rho,j,n_total")


def test_cli_estimate_round_trip(tmp_path, quick_config_path):
    trace_path = tmp_path / "trace.jsonl"
    hist_path = tmp_path / "hist.jsonl"
    est_path = tmp_path / "est.json"
    assert (
        cli.main(
            [
                "trace",
                "--config",
                str(quick_config_path),
                "--out",
                str(trace_path),
                "--hist-out",
                str(hist_path),
            ]
        )
        == 0
    )
    assert (
        cli.main(
            [
                "estimate",
                "--config",
                str(quick_config_path),
                "--hist",
                str(hist_path),
                "--out",
                str(est_path),
            ]
        )
        == 0
    )
    est = json.loads(est_path.read_text())
    final = json.loads(trace_path.read_text().strip().splitlines()[-1])["estimate"]
    for name, value in final.items():
        assert est["estimate"][name] == value
    assert est["crlb_sqrt"] is not None


def test_cli_design(tmp_path, quick_config_path):
    out = tmp_path / "design.json"
    assert cli.main(["design", "--config", str(quick_config_path), "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["converged"] is True
    assert set(d["metrics"]) == {"p_false_alarm", "p_detect", "bayes_cost"}
    assert len(d["quantizers"]) == 2


def test_cli_bad_config_exit_2(tmp_path, capsys):
    path = write_config(tmp_path, VALID.replace("[costs]", "[cost]"))
    assert cli.main(["rmse", "--config", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_missing_section_exit_2(tmp_path, capsys):
    path = write_config(tmp_path, VALID)  # no [rmse] section
    assert cli.main(["rmse", "--config", str(path)]) == 2
    assert "[rmse]" in capsys.readouterr().err


def test_cli_experiment_failure_exit_3(tmp_path, capsys):
    # an iteration budget of 1 cannot converge, so every replicate is
    # excluded and the failure threshold trips
    text = VALID + (
        "\n[mle]\nrestarts = 1\nseed = 0\nmaxiter = 1\n"
        "\n[rmse]\nrho_values = [0.5]\ntheta_values = [1.0759]\n"
        "stages = 2\nsamples_per_stage = 20\nreplicates = 2\nbase_seed = 3\n"
    )
    path = write_config(tmp_path, text)
    assert cli.main(["rmse", "--config", str(path)]) == 3
    assert "experiment failure" in capsys.readouterr().err
