import json
import os

import numpy as np
import pytest

from torusctrl import cli
from torusctrl.harness import (Scenario, ScenarioError, load_scenario,
                               run_experiment)


GOOD_CONFIG = """\
[system]
d1 = 1
d2 = 1
A = [[[1, 0], [1, 0]], [[1, 0], [1, 0]]]
D = [[[1, 0]]]
K = [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]
M = [[[1, 0], [0, 0]], [[0, 0], [1, 0]]]

[geometry]
omega = [[0, 3.141592653589793]]

[experiment]
kind = simulate
name = coupled-transport-heat
T = 2.0
nmax = 10
"""


class TestBuiltinParsing:

    def test_known_builtins_resolve(self):
        for spec in ("damped-wave(0.5)", "moving-wave(1, 1)",
                     "heat-memory", "nscl(1, 1, 1, 2, 1)"):
            scn = load_scenario(spec)
            assert scn.sys.d1 + scn.sys.d2 == 2

    def test_wrong_arity_rejected(self):
        with pytest.raises(ScenarioError, match="argument"):
            load_scenario("damped-wave(0.5, 1.0)")
        with pytest.raises(ScenarioError, match="argument"):
            load_scenario("nscl(1, 1)")

    def test_non_numeric_argument_rejected(self):
        with pytest.raises(ScenarioError, match="bad argument"):
            load_scenario("damped-wave(abc)")

    def test_unknown_name_rejected(self):
        with pytest.raises(ScenarioError, match="neither a builtin"):
            load_scenario("quasi-geostrophic")

    def test_horizon_defaults_track_minimal_time(self):
        scn = load_scenario("nscl(1, 1, 1, 2, 1)")
        assert scn.Tstar == pytest.approx(np.pi)
        assert scn.T == pytest.approx(1.5 * np.pi)
        assert scn.Tprime == pytest.approx(1.25 * np.pi)
        dw = load_scenario("damped-wave(0.5)")
        assert not np.isfinite(dw.Tstar)
        assert dw.T == 1.0

    def test_overrides_win(self):
        scn = load_scenario("nscl(1, 1, 1, 2, 1)", T=7.0, nmax=12, n0=4)
        assert scn.T == 7.0 and scn.nmax == 12 and scn.n0 == 4

    def test_unknown_experiment_kind_rejected(self):
        with pytest.raises(ScenarioError, match="experiment kind"):
            load_scenario("heat-memory", experiment="quadrature")


class TestConfigFiles:

    def test_roundtrip(self, tmp_path):
        p = tmp_path / "scn.ini"
        p.write_text(GOOD_CONFIG)
        scn = load_scenario(str(p))
        assert scn.name == "coupled-transport-heat"
        assert scn.T == 2.0 and scn.nmax == 10
        assert scn.sys.A == pytest.approx(np.ones((2, 2)))
        ser = scn.serialize()
        assert ser["A"] == [[[1.0, 0.0], [1.0, 0.0]],
                            [[1.0, 0.0], [1.0, 0.0]]]
        assert ser["omega"] == [[0.0, np.pi]]

    def test_parse_error_names_the_field(self, tmp_path):
        p = tmp_path / "scn.ini"
        p.write_text(GOOD_CONFIG.replace("K = [[[0, 0], [0, 0]], "
                                         "[[0, 0], [0, 0]]]",
                                         "K = [[0, not-json]]"))
        with pytest.raises(ScenarioError, match=r"\[system\] K"):
            load_scenario(str(p))

    def test_missing_section_rejected(self, tmp_path):
        p = tmp_path / "scn.ini"
        p.write_text(GOOD_CONFIG.replace("[geometry]\n"
                                         "omega = [[0, "
                                         "3.141592653589793]]\n", ""))
        with pytest.raises(ScenarioError, match=r"\[geometry\]"):
            load_scenario(str(p))

    def test_cli_overrides_config(self, tmp_path):
        p = tmp_path / "scn.ini"
        p.write_text(GOOD_CONFIG)
        scn = load_scenario(str(p), nmax=6, experiment="kalman")
        assert scn.nmax == 6 and scn.experiment == "kalman"


class TestRunExperiment:

    def test_simulate_emits_csv_and_manifest(self, tmp_path):
        scn = load_scenario("damped-wave(0.5)", nmax=8)
        code, text = run_experiment(scn, tmp_path, seed=3)
        assert code == 0
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["seed"] == 3
        assert man["scenario"]["name"] == "damped-wave(0.5)"
        assert "timestamp" not in man
        for fname in man["outputs"]:
            assert (tmp_path / fname).exists()
        assert "simulate" in text

    def test_kalman_on_cascade_system(self, tmp_path):
        scn = load_scenario("moving-wave(1, 1)", experiment="kalman",
                            nmax=8)
        code, text = run_experiment(scn, tmp_path)
        assert code == 0
        assert "satisfied" in text

    def test_refusal_still_writes_manifest(self, tmp_path):
        # zero transport speed: no finite minimal time, the pipeline
        # must refuse before doing any work
        scn = load_scenario("damped-wave(1)", experiment="pipeline",
                            nmax=8)
        code, text = run_experiment(scn, tmp_path)
        assert code == 2
        assert "REFUSED" in text
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "summary.txt").read_text() == text

    def test_determinism_byte_identical(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            scn = load_scenario("nscl(1, 1, 1, 2, 1)",
                                experiment="spectrum", nmax=8)
            code, _ = run_experiment(scn, d, seed=1)
            assert code == 0
            outs.append({f: (d / f).read_bytes()
                         for f in os.listdir(d)})
        assert outs[0].keys() == outs[1].keys()
        for f in outs[0]:
            assert outs[0][f] == outs[1][f], f


class TestCli:

    def test_exit_codes_and_outputs(self, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["simulate", "--scenario", "heat-memory",
                       "--nmax", "6", "--out-dir", str(out)])
        assert rc == 0
        assert (out / "manifest.json").exists()

    def test_scenario_error_exits_2(self, tmp_path, capsys):
        rc = cli.main(["simulate", "--scenario", "no-such-model",
                       "--out-dir", str(tmp_path)])
        assert rc == 2
        assert "neither a builtin" in capsys.readouterr().err

    def test_precondition_refusal_exits_2(self, tmp_path):
        rc = cli.main(["obstruct", "--scenario", "nscl(1, 1, 1, 2, 1)",
                       "--T", "10.0", "--nmax", "8",
                       "--out-dir", str(tmp_path)])
        assert rc == 2
