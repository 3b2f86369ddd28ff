import json

import pytest

from cakecut import cli, repro
from cakecut.cli import main
from cakecut.solver import SolverError
from cakecut.io import InputError, dumps, load_allocation, load_instance, profile_from_dict, utility_table, write_atomic


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


@pytest.fixture
def mnw_lb_file(tmp_path, capsys):
    path = tmp_path / "mnw_lb.json"
    assert main(["gen", "mnw-lb", "--n", "3", "--out", str(path)]) == 0
    capsys.readouterr()
    return path


@pytest.fixture
def ef2_file(tmp_path, capsys):
    path = tmp_path / "ef2.json"
    assert main(["gen", "ef2-lb", "--out", str(path)]) == 0
    capsys.readouterr()
    return path


class TestSolve:
    def test_mnw_lb(self, capsys, mnw_lb_file):
        code, out, _ = _run(capsys, "solve", str(mnw_lb_file))
        assert code == 0
        rep = json.loads(out)
        assert rep["utilities"] == pytest.approx([3, 1.5, 1.5], abs=1e-9)
        assert rep["kkt_residual"] <= 1e-9
        assert rep["shares"]["lengths"][0][0] == pytest.approx(1.0)

    def test_malformed(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(
            '{\n  "cake": {"lo": 0, "hi": 1},\n  "agents": [\n'
            '    {"breakpoints": [0, 1], "values": [1]},\n'
            '    {"breakpoints": [0, 0.5, 1], "values": [1]}\n  ]\n}\n'
        )
        code, _, err = _run(capsys, "solve", str(path))
        assert code == 2
        assert f"{path}:5:" in err and "agents[1].values" in err

    def test_bad_json(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"cake": {"lo": 0, "hi": 1},\n "agents": [}\n')
        code, _, err = _run(capsys, "solve", str(path))
        assert code == 2
        assert f"{path}:2:" in err

    def test_single_agent(self, capsys, tmp_path):
        path = tmp_path / "one.json"
        path.write_text(json.dumps({"cake": {"lo": 0, "hi": 2}, "agents": [{"breakpoints": [0, 1, 2], "values": [3, 1]}]}))
        code, out, _ = _run(capsys, "solve", str(path))
        assert code == 0
        assert json.loads(out)["utilities"] == [4.0]

    def test_csv(self, capsys, mnw_lb_file):
        code, out, _ = _run(capsys, "solve", str(mnw_lb_file), "--format", "csv")
        assert code == 0
        assert out.splitlines()[0] == "agent,utility,mnw_utility,ratio"
        assert out.splitlines()[1].startswith("1,3.0")

    def test_solver_failure_exit_code(self, capsys, monkeypatch, mnw_lb_file):
        def fail(*a, **k):
            raise SolverError("no convergence", 3e-4)

        monkeypatch.setattr(cli, "solve_mnw", fail)
        code, _, err = _run(capsys, "solve", str(mnw_lb_file))
        assert code == 3
        assert "residual 0.0003" in err


class TestRun:
    def test_ef2(self, capsys, ef2_file):
        code, out, _ = _run(capsys, "run", str(ef2_file), "--mechanism", "ef2")
        rep = json.loads(out)
        assert code == 0
        assert rep["utilities"][0] == pytest.approx(3 / 8)
        assert rep["audit"]["envy_free"] is True
        assert rep["generator"] == "numpy.random.PCG64"

    def test_interp_c0_matches_mnw(self, capsys, mnw_lb_file):
        _, a, _ = _run(capsys, "run", str(mnw_lb_file), "-m", "interp", "--c", "0")
        _, b, _ = _run(capsys, "run", str(mnw_lb_file), "-m", "mnw")
        assert json.loads(a)["utilities"] == json.loads(b)["utilities"]

    def test_seeded_reproducible(self, capsys, tmp_path, mnw_lb_file):
        outs = []
        for k in range(2):
            path = tmp_path / f"r{k}.json"
            assert main(["run", str(mnw_lb_file), "-m", "rpa", "--seed", "7", "--out", str(path)]) == 0
            outs.append(_strip_timing(json.loads(path.read_text())))
        assert outs[0] == outs[1]
        assert outs[0]["seed"] == 7

    def test_report_round_trip(self, tmp_path, ef2_file):
        path = tmp_path / "r.json"
        main(["run", str(ef2_file), "-m", "pa", "--attack-agent", "1", "--out", str(path)])
        text = path.read_text()
        assert dumps(json.loads(text)) == text
        assert json.loads(text)["attack"]["kind"] == "searched lower bound"

    def test_bad_c(self, capsys, mnw_lb_file):
        code, _, err = _run(capsys, "run", str(mnw_lb_file), "-m", "interp", "--c", "2")
        assert code == 2 and "c must lie" in err

    def test_ef2_needs_two(self, capsys, mnw_lb_file):
        code, _, _ = _run(capsys, "run", str(mnw_lb_file), "-m", "ef2")
        assert code == 2


class TestAuditAttack:
    def test_audit(self, capsys, tmp_path, mnw_lb_file):
        alloc = tmp_path / "alloc.json"
        alloc.write_text(json.dumps({"complete": True, "bundles": [[[0, 1]], [[1, 2]], [[2, 3]]]}))
        code, out, _ = _run(capsys, "audit", str(mnw_lb_file), str(alloc))
        rep = json.loads(out)
        assert code == 0
        assert rep["utilities"] == pytest.approx([3, 1, 2])
        assert rep["audit"]["envy_free"] is False

    def test_audit_wrong_agents(self, capsys, tmp_path, mnw_lb_file):
        alloc = tmp_path / "alloc.json"
        alloc.write_text(json.dumps({"bundles": [[[0, 3]]]}))
        code, _, _ = _run(capsys, "audit", str(mnw_lb_file), str(alloc))
        assert code == 2

    def test_attack_ef2(self, capsys, ef2_file):
        code, out, _ = _run(capsys, "attack", str(ef2_file), "-m", "ef2", "--agent", "1", "--grid", "0.25", "--max-cells", "2")
        rep = json.loads(out)
        assert code == 0
        assert rep["attack"]["best_ratio"] == pytest.approx(4 / 3)
        assert rep["attack"]["agent"] == 1

    def test_attack_bad_agent(self, capsys, ef2_file):
        code, _, _ = _run(capsys, "attack", str(ef2_file), "--agent", "3")
        assert code == 2

    def test_attack_csv_refused(self, capsys, ef2_file):
        code, _, _ = _run(capsys, "attack", str(ef2_file), "--format", "csv")
        assert code == 2


class TestRepro:
    def test_mnw_lb(self, capsys, tmp_path):
        path = tmp_path / "rep.json"
        code, _, err = _run(capsys, "repro", "mnw-lb", "--n", "10", "--eps", "1e-3", "--out", str(path))
        assert code == 0
        rep = json.loads(path.read_text())
        assert rep["passed"] is True
        ratio = next(c for c in rep["checks"] if c["name"] == "manipulation ratio")
        assert ratio["observed"] == pytest.approx(1.899190, abs=1e-4)
        assert "[PASS] manipulation ratio" in err

    def test_ef2_small(self, capsys):
        code, out, _ = _run(capsys, "repro", "ef2-lb", "--instances", "20", "--attack-instances", "2")
        assert code == 0
        assert json.loads(out)["checks"][2]["observed"] == pytest.approx(4 / 3, abs=1e-9)

    def test_pa_bounds_small(self, capsys):
        code, _, _ = _run(capsys, "repro", "pa-bounds", "--instances", "30")
        assert code == 0

    def test_unknown(self, capsys):
        code, _, err = _run(capsys, "repro", "nope")
        assert code == 2 and "unknown scenario" in err

    def test_failure_exit_code(self, capsys, monkeypatch):
        def broken(**kw):
            res = repro.ReproResult("mnw-lb", kw)
            res.near("manipulation ratio", 1.5, 1.89919, 1e-4)
            return res

        monkeypatch.setitem(repro.SCENARIOS, "mnw-lb", broken)
        code, out, err = _run(capsys, "repro", "mnw-lb")
        assert code == 1
        assert "[FAIL] manipulation ratio" in err
        assert json.loads(out)["passed"] is False


class TestGen:
    @pytest.mark.parametrize("name", ["mnw-lb", "mnw-lb-lie", "pa-lb", "pa-lb-lie", "ef2-lb", "interp-lb", "random"])
    def test_loads_back(self, tmp_path, capsys, name):
        path = tmp_path / "g.json"
        assert main(["gen", name, "--out", str(path)]) == 0
        p = load_instance(path)
        assert p.n >= 2
        assert dumps(p.to_dict()) == path.read_text()

    def test_interp_pins_items(self, tmp_path):
        path = tmp_path / "g.json"
        main(["gen", "interp-lb", "--n", "3", "--k", "5", "--which", "2", "--out", str(path)])
        assert load_instance(path).m == 18


class TestIo:
    def test_profile_schema_errors(self):
        with pytest.raises(InputError):
            profile_from_dict({"agents": []})
        with pytest.raises(InputError):
            profile_from_dict({"cake": {"lo": 0, "hi": 1}, "agents": [{"values": [1]}]})
        with pytest.raises(InputError, match="spans"):
            profile_from_dict({"cake": {"lo": 0, "hi": 2}, "agents": [{"breakpoints": [0, 1], "values": [1]}]})

    def test_allocation_file(self, tmp_path):
        path = tmp_path / "a.json"
        path.write_text(json.dumps({"complete": True, "bundles": [[[0, 0.5], [0.5, 0.7]], []]}))
        alloc = load_allocation(path)
        assert alloc.complete and alloc.to_pairs() == [[[0.0, 0.7]], []]

    def test_utility_table(self):
        text = utility_table([{"agent": 1, "utility": 0.5, "mnw_utility": 1.0, "ratio": 0.5}])
        assert text == "agent,utility,mnw_utility,ratio\n1,0.5,1.0,0.5\n"

    def test_write_atomic(self, tmp_path):
        path = tmp_path / "sub" / "x.json"
        write_atomic(path, "abc")
        write_atomic(path, "def")
        assert path.read_text() == "def"
        assert [p.name for p in path.parent.iterdir()] == ["x.json"]
