import json
import math
import sys
import textwrap

import numpy as np
import pytest

from riskbo.errors import InvalidArgumentError, ProtocolError, SimulatorError
from riskbo.problems import (
    BW_MASS,
    ExternalSimulator,
    branin,
    branin_williams,
    brute_force_risk,
    bw_distribution,
    external_problem,
    f6,
    get_problem,
    oracle_wset,
    toy_function,
    true_optimum,
)
from riskbo.risk import RiskSpec, UniformBox, WSet


class TestFunctions:
    def test_branin_global_minimum(self):
        for u, v in [(-math.pi, 12.275), (math.pi, 2.275), (9.42478, 2.475)]:
            assert branin(u, v) == pytest.approx(0.397887, abs=1e-5)

    def test_branin_williams_product(self):
        # both factors at a Branin minimizer
        z = np.array([(math.pi + 5) / 15, 2.275 / 15, (math.pi + 5) / 15, 2.275 / 15])
        assert branin_williams(z) == pytest.approx(0.397887**2, rel=1e-5)

    def test_branin_williams_vectorized(self):
        rng = np.random.default_rng(0)
        Z = rng.random((5, 4))
        np.testing.assert_allclose(branin_williams(Z), [branin_williams(z) for z in Z])

    def test_branin_williams_domain(self):
        with pytest.raises(InvalidArgumentError):
            branin_williams(np.array([0.5, 0.5, 0.5, 1.5]))

    def test_f6_values(self):
        assert f6(np.zeros(4), np.zeros(3)) == 0.0
        assert f6(np.array([1.0, 0, 0, 0]), np.zeros(3)) == 5.0
        # xe = (1, 0, 0): xc1^2 - xc2 + xc3 - xc4 + 2 - 1
        assert f6(np.zeros(4), np.array([1.0, 0, 0])) == 1.0

    def test_f6_domain(self):
        with pytest.raises(InvalidArgumentError):
            f6(np.full(4, 6.0), np.zeros(3))

    def test_toy_function_finite(self):
        x = np.linspace(0, 1, 11)
        assert np.all(np.isfinite(toy_function(x, 1 - x)))


class TestDistribution:
    def test_masses(self):
        ws = bw_distribution()
        m = dict(zip(map(tuple, ws.points), ws.weights))
        assert m[(0.5, 0.4)] == 0.1750
        assert m[(0.25, 0.2)] == 0.0375
        assert m[(0.75, 0.8)] == 0.0375
        assert m[(0.5, 0.2)] == 0.0750
        assert m[(0.25, 0.6)] == 0.0875
        assert ws.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_marginals(self):
        mass = np.array(BW_MASS)
        np.testing.assert_allclose(mass.sum(axis=1), [0.25, 0.5, 0.25])
        np.testing.assert_allclose(mass.sum(axis=0), [0.15, 0.35, 0.35, 0.15])


class TestRegistry:
    def test_defaults(self):
        p = get_problem("branin_williams")
        assert (p.risk.kind, p.risk.alpha, p.noise_std) == ("VaR", 0.7, 10.0)
        assert p.dim_x == 2 and p.dim_w == 2
        assert p.true_optimum == pytest.approx(207.0167, rel=1e-5)
        f = get_problem("f6")
        assert f.dim_x == 4 and isinstance(f.w_distribution, UniformBox)

    def test_overrides(self):
        p = get_problem("toy", alpha=0.5, risk="VaR", noise_std=0.0)
        assert p.risk == RiskSpec("VaR", 0.5)
        assert p.noise_std == 0.0
        assert p.true_optimum is None  # not precomputed

    def test_unknown(self):
        with pytest.raises(InvalidArgumentError):
            get_problem("rosenbrock")

    def test_unit_maps_roundtrip(self):
        p = get_problem("f6")
        z = np.array([1.0, -2.0, 3.0, 4.5, 0.1, -1.9, 2.0])
        np.testing.assert_allclose(p.from_unit(p.to_unit(z)), z)
        assert p.to_unit(z).min() >= 0 and p.to_unit(z).max() <= 1


class TestOracle:
    def test_brute_force_matches_loop(self):
        p = get_problem("branin_williams")
        ws = bw_distribution()
        x = np.array([0.3, 0.8])
        y = np.array([branin_williams(np.array([x[0], w[0], w[1], x[1]])) for w in ws.points])
        order = np.argsort(y, kind="stable")
        cum = np.cumsum(ws.weights[order])
        expected = y[order][np.argmax(cum >= 0.7 - 1e-12)]
        assert brute_force_risk(p, x) == expected

    def test_batched_matches_single(self):
        p = get_problem("toy")
        xs = np.linspace(0, 1, 7)[:, None]
        np.testing.assert_allclose(brute_force_risk(p, xs), [brute_force_risk(p, x) for x in xs])

    def test_stored_optima_are_lower_bounds(self):
        p = get_problem("branin_williams")
        rng = np.random.default_rng(0)
        vals = brute_force_risk(p, rng.random((500, 2)))
        assert vals.min() >= p.true_optimum - 1e-9

    def test_true_optimum_on_toy(self):
        p = get_problem("toy")
        x, v = true_optimum(p, 101)
        assert v == pytest.approx(p.true_optimum, abs=1e-6)

    def test_continuous_oracle_set(self):
        p = get_problem("f6")
        ws = oracle_wset(p, n=256)
        assert len(ws) == 256 and ws.points.min() >= -2 and ws.points.max() <= 2


def _script(tmp_path, body):
    path = tmp_path / "sim.py"
    path.write_text(textwrap.dedent(body))
    return [sys.executable, str(path)]


ECHO = """
    import json, sys
    for line in sys.stdin:
        req = json.loads(line)
        y = sum(req["x"]) + 10 * sum(req["w"]) + req["seed"] % 7
        print(json.dumps({"id": req["id"], "y": y}), flush=True)
"""


class TestExternalSimulator:
    def test_echo(self, tmp_path):
        with ExternalSimulator(_script(tmp_path, ECHO), timeout=30) as sim:
            assert sim.query([1.0, 2.0], [0.5], 14) == 8.0
            assert sim.query([0.0], [0.0], 3) == 3.0

    def test_hundred_queries_in_order(self, tmp_path):
        with ExternalSimulator(_script(tmp_path, ECHO), timeout=30) as sim:
            out = [sim.query([float(i)], [0.0], 0) for i in range(100)]
        assert out == [float(i) for i in range(100)]

    def test_malformed_line(self, tmp_path):
        cmd = _script(tmp_path, """
            import sys
            for line in sys.stdin:
                print("not json", flush=True)
        """)
        with ExternalSimulator(cmd, timeout=30) as sim, pytest.raises(ProtocolError):
            sim.query([0.0], [0.0], 0)

    def test_wrong_id(self, tmp_path):
        cmd = _script(tmp_path, """
            import json, sys
            for line in sys.stdin:
                print(json.dumps({"id": 99, "y": 1.0}), flush=True)
        """)
        with ExternalSimulator(cmd, timeout=30) as sim, pytest.raises(ProtocolError):
            sim.query([0.0], [0.0], 0)

    def test_non_numeric_value(self, tmp_path):
        cmd = _script(tmp_path, """
            import json, sys
            for line in sys.stdin:
                req = json.loads(line)
                print(json.dumps({"id": req["id"], "y": "NaN"}), flush=True)
        """)
        with ExternalSimulator(cmd, timeout=30) as sim, pytest.raises(ProtocolError):
            sim.query([0.0], [0.0], 0)

    def test_crash_reports_stderr(self, tmp_path):
        cmd = _script(tmp_path, """
            import sys
            sys.stdin.readline()
            sys.stderr.write("boom")
            sys.exit(3)
        """)
        with ExternalSimulator(cmd, timeout=30) as sim:
            with pytest.raises(SimulatorError) as info:
                sim.query([0.0], [0.0], 0)
        assert "3" in str(info.value)

    def test_timeout(self, tmp_path):
        cmd = _script(tmp_path, """
            import sys, time
            sys.stdin.readline()
            time.sleep(30)
        """)
        sim = ExternalSimulator(cmd, timeout=0.5)
        with pytest.raises(SimulatorError):
            sim.query([0.0], [0.0], 0)
        sim.close()

    def test_missing_executable(self):
        with pytest.raises(SimulatorError):
            ExternalSimulator(["/nonexistent/simulator"])

    def test_external_problem(self, tmp_path):
        ws = WSet.uniform(np.array([[0.0], [1.0]]))
        p = external_problem(_script(tmp_path, ECHO), [[0.0], [1.0]], ws, RiskSpec("CVaR", 0.5), timeout=30)
        try:
            assert p.extras["simulator"].query([0.25], [1.0], 0) == 10.25
            with pytest.raises(SimulatorError):
                p.evaluate([[0.1]], [[0.0]])
        finally:
            p.extras["simulator"].close()


def test_protocol_request_format(tmp_path):
    log = tmp_path / "requests.jsonl"
    cmd = _script(tmp_path, f"""
        import json, sys
        with open({str(log)!r}, "w") as fh:
            for line in sys.stdin:
                fh.write(line)
                fh.flush()
                req = json.loads(line)
                print(json.dumps({{"id": req["id"], "y": 0.0}}), flush=True)
    """)
    with ExternalSimulator(cmd, timeout=30) as sim:
        sim.query(np.array([0.5]), np.array([0.25, 0.75]), 42)
    req = json.loads(log.read_text().splitlines()[0])
    assert req == {"id": 0, "x": [0.5], "w": [0.25, 0.75], "seed": 42}
