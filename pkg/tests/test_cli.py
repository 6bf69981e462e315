import csv

import pytest

from riskbo.cli import main

FAST_TOML = """
problem.name = "toy"
algorithm = "rho_kg_apx"
budget = 42
seed = 3

[acq]
K = 3
M = 4

[opt]
restarts = 1
raw_samples = 4
q2 = 5
inner_restarts = 1
inner_raw = 8
q3 = 5

[gp]
restarts = 1
q1 = 20

[rec]
M = 8
restarts = 1
raw_samples = 8
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(FAST_TOML)
    return str(p)


def test_run_writes_results(tmp_path, config):
    out = tmp_path / "res.csv"
    assert main(["run", "--config", config, "--output", str(out)]) == 0
    rows = list(csv.reader(out.read_text().splitlines()[1:]))
    assert rows[0][:5] == ["run_id", "seed", "algorithm", "iteration", "evals_used"]
    assert rows[-1][4] == "42"
    assert (tmp_path / "res.csv.history.csv").exists()


def test_run_needs_output(config, capsys):
    assert main(["run", "--config", config]) == 2
    assert "--output" in capsys.readouterr().err


def test_suggest_and_recommend(tmp_path, config, capsys):
    out = tmp_path / "res.csv"
    main(["run", "--config", config, "--output", str(out)])
    hist = str(out) + ".history.csv"
    assert main(["suggest", "--config", config, "--history", hist]) == 0
    text = capsys.readouterr().out.splitlines()
    assert text[0] == "x_1,w_1"
    assert all(0 <= float(v) <= 1 for v in text[1].split(","))
    assert main(["recommend", "--config", config, "--history", hist]) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header == "x_rec_1,posterior_risk_estimate,true_risk"


def test_oracle_grid(tmp_path, config):
    out = tmp_path / "grid.csv"
    assert main(["oracle", "--config", config, "--grid", "11", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x_1,risk" and len(lines) == 12


def test_report_and_plot(tmp_path, config):
    out = tmp_path / "res.csv"
    main(["run", "--config", config, "--output", str(out)])
    rep = tmp_path / "rep.csv"
    assert main(["report", str(out), "--output", str(rep)]) == 0
    assert rep.read_text().splitlines()[0].startswith("algorithm,evals_used,n_runs")
    plot = tmp_path / "plot.csv"
    assert main(["plot-data", str(out), "--output", str(plot)]) == 0
    assert plot.read_text().splitlines()[0] == "algorithm,evals_used,mean_log_gap,lower,upper"


def test_report_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("nonsense\n")
    assert main(["report", str(bad)]) == 2
    assert "bad.csv:1" in capsys.readouterr().err


def test_bad_config_key(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("colour = 1\n")
    assert main(["oracle", "--config", str(p)]) == 2
