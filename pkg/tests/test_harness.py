import numpy as np
import pytest

from riskbo import harness
from riskbo.errors import BudgetExhaustedError, ConfigError, ResultParseError

FAST = dict(restarts=1, raw_samples=4, q2=5, inner_restarts=1, inner_raw=8, q3=5, gp_restarts=1, gp_q1=20,
            rec_raw=8, rec_restarts=1, rec_M=8, K=3, M=4)


def cfg(**kw):
    base = dict(problem="toy", algorithm="rho_kg_apx", budget=43, seed=1)
    base.update(FAST)
    base.update(kw)
    return harness.load_config(None, **base)


class TestConfig:
    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError):
            cfg(algorithm="nope")

    def test_unknown_field(self):
        with pytest.raises(ConfigError):
            harness.load_config(None, banana=1)

    def test_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('algorithm = "ei"\nbudget = 70\n[problem]\nname = "toy"\nalpha = 0.5\n[acq]\nK = 3\n')
        c = harness.load_config(p, seed=9)
        assert (c.algorithm, c.budget, c.alpha, c.K, c.seed) == ("ei", 70, 0.5, 3, 9)

    def test_toml_unknown_key(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[acq]\nZ = 3\n")
        with pytest.raises(ConfigError):
            harness.load_config(p)

    def test_toml_syntax_error(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("budget = = 3\n")
        with pytest.raises(ConfigError):
            harness.load_config(p)

    def test_budget_below_initialization(self):
        with pytest.raises(ConfigError):
            harness.initialize(cfg(budget=10))


class TestBudget:
    @pytest.mark.parametrize("algorithm", ["rho_kg_apx", "rho_random"])
    def test_ours_spend_exactly(self, algorithm):
        state = harness.run(cfg(algorithm=algorithm))
        assert state.evals_used == 43
        assert [r.evals_used for r in state.recommendations] == list(range(40, 44))
        with pytest.raises(BudgetExhaustedError):
            harness.step(state)

    @pytest.mark.parametrize("algorithm", ["ei", "ucb", "random", "kg_plain"])
    def test_baselines_never_overspend(self, algorithm):
        state = harness.run(cfg(algorithm=algorithm, budget=65))
        assert state.evals_used == 60  # 4 init points + 2 iterations of 10 evaluations
        assert state.remaining < state.iteration_cost

    def test_rho_kg_runs(self):
        state = harness.run(cfg(algorithm="rho_kg", budget=41))
        assert len(state.recommendations) == 2
        assert not state.fallbacks


class TestDeterminism:
    def test_same_seed_same_history(self):
        a = harness.run(cfg())
        b = harness.run(cfg())
        assert [o.y for o in a.history] == [o.y for o in b.history]
        assert np.array_equal(a.recommendations[-1].x, b.recommendations[-1].x)

    def test_different_seed_differs(self):
        a = harness.run(cfg(algorithm="rho_random"))
        b = harness.run(cfg(algorithm="rho_random", seed=2))
        assert [o.y for o in a.history] != [o.y for o in b.history]


class TestRecommendation:
    def test_gap_is_nonnegative(self):
        state = harness.run(cfg())
        for r in state.recommendations:
            assert r.gap >= -1e-9
            assert r.true_risk == pytest.approx(r.gap + state.problem.true_optimum)

    def test_recommendation_inside_bounds(self):
        state = harness.run(cfg(algorithm="ei", budget=60))
        for r in state.recommendations:
            assert 0 <= r.x[0] <= 1


class TestFiles:
    def test_result_roundtrip(self, tmp_path):
        out = tmp_path / "r.csv"
        state = harness.run(cfg(output=str(out)))
        rows = harness.read_results(out)
        assert len(rows) == len(state.recommendations)
        assert rows[-1]["gap"] == state.recommendations[-1].gap
        assert out.read_text().startswith("# riskbo result file; created ")

    def test_history_rebuild(self, tmp_path):
        out = tmp_path / "r.csv"
        state = harness.run(cfg(output=str(out)))
        back = harness.read_history(str(out) + ".history.csv", cfg())
        assert [o.y for o in back.history] == [o.y for o in state.history]
        x, w = harness.suggest(back)
        assert x.shape == (1,) and w.shape == (1,)

    def test_parse_error_reports_line(self, tmp_path):
        out = tmp_path / "r.csv"
        harness.run(cfg(output=str(out)))
        lines = out.read_text().splitlines()
        lines[3] = lines[3].replace(",", ";", 2)
        out.write_text("\n".join(lines) + "\n")
        with pytest.raises(ResultParseError) as info:
            harness.read_results(out)
        assert info.value.line == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ResultParseError):
            harness.read_results(tmp_path / "absent.csv")

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ResultParseError):
            harness.read_results(p)


def _fake_results(path, alg, run_id, gaps, start=10):
    lines = ["run_id,seed,algorithm,iteration,evals_used,x_rec_1,posterior_risk_estimate,true_risk,gap,wall_time_s"]
    for i, g in enumerate(gaps):
        lines.append(f"{run_id},0,{alg},{i},{start + i},0.5,1.0,{1.0 + g},{g},0.1")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestReport:
    def test_identical_runs_have_zero_error(self, tmp_path):
        a = _fake_results(tmp_path / "a.csv", "ei", "r1", [1.0, 0.5])
        b = _fake_results(tmp_path / "b.csv", "ei", "r2", [1.0, 0.5])
        rows = harness.report([a, b])
        assert [r["se_gap"] for r in rows] == [0.0, 0.0]
        assert rows[1]["mean_log_gap"] == pytest.approx(np.log10(0.5))

    def test_mean_and_standard_error(self, tmp_path):
        paths = [_fake_results(tmp_path / f"{i}.csv", "random", f"r{i}", [g]) for i, g in enumerate([1.0, 2.0, 6.0])]
        row = harness.report(paths)[0]
        assert row["n_runs"] == 3
        assert row["mean_gap"] == pytest.approx(3.0)
        assert row["se_gap"] == pytest.approx(np.std([1, 2, 6], ddof=1) / np.sqrt(3))

    def test_smoothing_window(self, tmp_path):
        a = _fake_results(tmp_path / "a.csv", "ei", "r1", [3.0, 6.0, 9.0, 0.0])
        rows = harness.report([a], smooth=True)
        assert [r["mean_gap"] for r in rows] == pytest.approx([3.0, 6.0, 5.0, 0.0])

    def test_plot_bounds(self, tmp_path):
        paths = [_fake_results(tmp_path / f"{i}.csv", "ei", f"r{i}", [g, g]) for i, g in enumerate([1.0, 10.0])]
        for r in harness.plot_data(paths):
            assert r["lower"] <= r["mean_log_gap"] <= r["upper"]
