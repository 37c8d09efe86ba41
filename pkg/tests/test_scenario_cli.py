"""Scenario files and the command-line interface."""

import json

import numpy as np
import pytest

import bsde_stackelberg as bs
from bsde_stackelberg.cli import main
from bsde_stackelberg.scenario import load_scenario, scenario_from_dict

from conftest import scenario_document


def write_scenario(tmp_path, doc, name="scn.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture()
def hand_doc(hand_spec_coarse):
    return scenario_document(hand_spec_coarse)


class TestScenarioParsing:
    def test_round_trip_constant(self, tmp_path, hand_spec_coarse, hand_doc):
        scn = load_scenario(write_scenario(tmp_path, hand_doc))
        spec = scn.spec
        assert spec.grid == hand_spec_coarse.grid
        for name in ("A", "B1", "B2", "C", "Q1", "R1", "S1", "Q2", "R2", "S2"):
            np.testing.assert_array_equal(
                getattr(spec, name).values, getattr(hand_spec_coarse, name).values
            )
        np.testing.assert_array_equal(spec.G1, hand_spec_coarse.G1)
        np.testing.assert_array_equal(spec.xi.a, hand_spec_coarse.xi.a)
        assert scn.mode == "strict"
        assert len(scn.sha256) == 64

    def test_nodes_form_interpolates(self, hand_doc):
        hand_doc["coefficients"]["A"] = {"nodes": [[0.0, [0.0]], [1.0, [2.0]]]}
        scn = scenario_from_dict(hand_doc)
        np.testing.assert_allclose(
            scn.spec.A.values[:, 0, 0], 2.0 * scn.spec.grid.nodes, atol=1e-14
        )

    def test_steps_override(self, hand_doc):
        scn = scenario_from_dict(hand_doc, steps=64)
        assert scn.spec.grid.steps == 64

    def test_u2_parsing(self, hand_doc):
        hand_doc["u2"] = {"const": {"constant": [0.3]}, "lin": {"constant": [0.1]}}
        scn = scenario_from_dict(hand_doc)
        assert scn.u2.u_const.values[0, 0, 0] == 0.3
        assert scn.u2.u_lin.values[0, 0, 0] == 0.1

    def test_u2_defaults_to_zero(self, hand_doc):
        scn = scenario_from_dict(hand_doc)
        assert np.max(np.abs(scn.u2.u_const.values)) == 0.0
        assert np.max(np.abs(scn.u2.u_lin.values)) == 0.0

    def test_market_parsing(self, hand_doc, market):
        hand_doc["market"] = {
            "r": {"constant": [0.03]},
            "mu": {"constant": [0.08]},
            "sigma": {"constant": [0.25]},
            "R1": {"constant": [1.0]},
            "R2": {"constant": [1.5]},
            "G1": 1.0,
            "G2": 0.8,
        }
        scn = scenario_from_dict(hand_doc)
        assert scn.market is not None
        assert scn.market.theta().values[0, 0, 0] == pytest.approx(0.2)

    def test_bad_mode_rejected(self, hand_doc):
        hand_doc["mode"] = "sloppy"
        with pytest.raises(bs.SpecError):
            scenario_from_dict(hand_doc)

    def test_coefficient_without_form_rejected(self, hand_doc):
        hand_doc["coefficients"]["A"] = {"flat": [0.0]}
        with pytest.raises(bs.SpecError):
            scenario_from_dict(hand_doc)


class TestCliValidate:
    def test_pass_exit_zero(self, tmp_path, hand_doc, capsys):
        scn = write_scenario(tmp_path, hand_doc)
        out = tmp_path / "out"
        rc = main(["validate", "--scenario", str(scn), "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["passed"] is True
        assert summary["scenario_sha256"] == load_scenario(scn).sha256

    def test_strict_failure_exit_one_names_location(self, tmp_path, hand_doc):
        hand_doc["coefficients"]["Q1"] = {"constant": [-1.0]}
        scn = write_scenario(tmp_path, hand_doc)
        out = tmp_path / "out"
        rc = main(["validate", "--scenario", str(scn), "--out", str(out)])
        assert rc == 1
        summary = json.loads((out / "summary.json").read_text())
        assert summary["passed"] is False
        assert any("Q1" in v["location"] for v in summary["violations"])

    def test_missing_file_exit_three(self, tmp_path):
        rc = main(["validate", "--scenario", str(tmp_path / "nope.json")])
        assert rc == 3

    def test_malformed_json_exit_three(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["validate", "--scenario", str(path)]) == 3

    def test_incomplete_document_exit_one(self, tmp_path):
        path = tmp_path / "thin.json"
        path.write_text(json.dumps({"dims": {"n": 1, "d": 1, "k": 1}}))
        assert main(["validate", "--scenario", str(path)]) == 1


class TestCliPipelines:
    def test_invalid_scenario_blocks_solver_commands(self, tmp_path, hand_doc):
        hand_doc["coefficients"]["R1"] = {"constant": [-1.0]}
        scn = write_scenario(tmp_path, hand_doc)
        rc = main(["riccati", "--scenario", str(scn), "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_riccati_artifacts(self, tmp_path, hand_doc):
        scn = write_scenario(tmp_path, hand_doc)
        out = tmp_path / "out"
        rc = main(["riccati", "--scenario", str(scn), "--out", str(out)])
        assert rc == 0
        for name in ("p1", "p2", "pi1", "pi2"):
            assert (out / f"riccati_{name}.csv").exists()
        solv = json.loads((out / "solvability.json").read_text())
        assert solv["closed_form_applicable"] is True
        assert solv["pi1"]["satisfied"] and solv["pi2"]["satisfied"]
        summary = json.loads((out / "summary.json").read_text())
        assert max(summary["residual_max"].values()) < 1e-3

    def test_follower_summary(self, tmp_path, hand_doc):
        scn = write_scenario(tmp_path, hand_doc)
        out = tmp_path / "out"
        rc = main([
            "follower", "--scenario", str(scn), "--out", str(out),
            "--paths", "4", "--seed", "0",
        ])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["J1"]["mean"] == pytest.approx(0.25, abs=1e-4)
        assert summary["terminal_error_max"] < 1e-10
        assert (out / "paths_follower.csv").exists()

    def test_leader_and_equilibrium_alias(self, tmp_path, hand_doc):
        scn = write_scenario(tmp_path, hand_doc)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        rc_a = main([
            "leader", "--scenario", str(scn), "--out", str(out_a),
            "--paths", "4", "--seed", "0",
        ])
        rc_b = main([
            "equilibrium", "--scenario", str(scn), "--out", str(out_b),
            "--paths", "4", "--seed", "0",
        ])
        assert rc_a == rc_b == 0
        assert (out_a / "summary.json").read_text() == (out_b / "summary.json").read_text()
        summary = json.loads((out_a / "summary.json").read_text())
        assert summary["stationarity"]["leader"] < 1e-8
        assert summary["terminal_error_max"] < 1e-10

    def test_reruns_byte_identical(self, tmp_path, hand_doc):
        scn = write_scenario(tmp_path, hand_doc)
        texts = []
        for name in ("x", "y"):
            out = tmp_path / name
            main([
                "leader", "--scenario", str(scn), "--out", str(out),
                "--paths", "8", "--seed", "7",
            ])
            texts.append(
                ((out / "summary.json").read_bytes(), (out / "paths_leader.csv").read_bytes())
            )
        assert texts[0] == texts[1]

    def test_divergent_riccati_exit_two(self, tmp_path):
        # Q1 large and G1 large: P1' blows past the norm guard
        spec = bs.make_constant_spec(
            10.0, 200,
            A=2.0, B1=0.0, B2=1.0, C=0.0,
            Q1=5.0, R1=1.0, S1=0.0, G1=5.0,
            Q2=1.0, R2=1.0, S2=0.0, G2=1.0,
            a=1.0, b=0.0,
        )
        scn = write_scenario(tmp_path, scenario_document(spec))
        rc = main(["riccati", "--scenario", str(scn), "--out", str(tmp_path / "o")])
        assert rc == 2


class TestCliFinance:
    def test_requires_market_section(self, tmp_path, hand_doc):
        scn = write_scenario(tmp_path, hand_doc)
        rc = main(["finance", "--scenario", str(scn), "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_runs_with_market(self, tmp_path, hand_doc):
        hand_doc["mode"] = "permissive"
        hand_doc["terminal"] = {"a": [1.0], "b": [[0.3]]}
        hand_doc["market"] = {
            "r": {"constant": [0.03]},
            "mu": {"constant": [0.08]},
            "sigma": {"constant": [0.25]},
            "R1": {"constant": [1.0]},
            "R2": {"constant": [1.5]},
            "G1": 1.0,
            "G2": 0.8,
        }
        scn = write_scenario(tmp_path, hand_doc, "market.json")
        out = tmp_path / "out"
        rc = main([
            "finance", "--scenario", str(scn), "--out", str(out),
            "--paths", "500", "--seed", "1", "--steps", "50",
        ])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["initial_reserve"] == pytest.approx(summary["Y0"][1])
        gaps = np.abs(np.array(summary["dual_check"]["gap"]))
        sigmas = 3.0 * np.array(summary["dual_check"]["stderr"])
        assert np.all(gaps < np.maximum(sigmas, 1e-4))
        assert (out / "paths_finance.csv").exists()


class TestCliVerify:
    def test_hand_scenario_passes_strict(self, tmp_path, hand_doc):
        scn = write_scenario(tmp_path, hand_doc)
        out = tmp_path / "out"
        rc = main(["verify", "--scenario", str(scn), "--out", str(out), "--seed", "0"])
        assert rc == 0
        oracle = json.loads((out / "oracle.json").read_text())
        assert oracle["follower"]["rel_gap"] < 1e-3
        assert oracle["leader"]["rel_gap"] < 1e-2

    def test_stochastic_terminal_rejected(self, tmp_path, stochastic_spec):
        scn = write_scenario(tmp_path, scenario_document(stochastic_spec, mode="permissive"))
        rc = main(["verify", "--scenario", str(scn), "--out", str(tmp_path / "o")])
        assert rc == 1


class TestEntryPoint:
    def test_console_script_installed(self):
        import importlib.metadata as md

        eps = md.entry_points(group="console_scripts")
        names = {ep.name for ep in eps}
        assert "bsde-stackelberg" in names
