"""Command-line interface: artifacts, exit codes, and determinism."""

import json
import os

import pytest

from quantfit.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from quantfit.experiments import read_result_csv

TINY_AGENT = {"hidden_dim": 16, "n_basis": 4, "n_fractions": 2}


def _write_config(tmp_path, name, spec):
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return str(path)


def _train_spec(**overrides):
    spec = {
        "kind": "train",
        "environment": "bandit",
        "train_updates": 100,
        "record_every": 50,
        "eval_episodes": 2,
        "probe_draws": 16,
        "seeds": [1],
        "agent": dict(TINY_AGENT),
    }
    spec.update(overrides)
    return spec


class TestApproxCommand:
    def test_artifacts_and_schema(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            "approx.json",
            {
                "kind": "approx",
                "distributions": ["uniform"],
                "n_values": [2],
                "optimize_steps": 150,
                "n_random": 5,
            },
        )
        out = tmp_path / "out"
        assert main(["approx", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        rows = read_result_csv(str(out / "approx.csv"))
        assert {r.metric for r in rows} == {
            "w1_optimized",
            "w1_equally_spaced",
            "w1_random_mean",
        }
        assert (out / "approx.png").exists()
        assert (out / "approx_timing.csv").exists()

    def test_empty_n_list_writes_header_only(self, tmp_path):
        cfg = _write_config(
            tmp_path, "empty.json", {"kind": "approx", "n_values": []}
        )
        out = tmp_path / "out"
        assert main(["approx", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        assert (out / "approx.csv").read_text() == "experiment,seed,step,metric,value\n"

    def test_unknown_distribution_exits_1(self, tmp_path, capsys):
        cfg = _write_config(
            tmp_path, "bad.json", {"kind": "approx", "distributions": ["cauchy"]}
        )
        assert main(["approx", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "known names" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_pass_and_negative_control(self, tmp_path):
        base = {"kind": "gradcheck", "gradcheck_pairs": 6, "gradcheck_params": 15}
        cfg = _write_config(tmp_path, "g.json", base)
        out = tmp_path / "out"
        assert main(["gradcheck", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        assert (out / "gradcheck.png").exists()
        flipped = _write_config(tmp_path, "gf.json", {**base, "sign_flip_bug": True})
        code = main(["gradcheck", "--config", flipped, "--out", str(out), "--quiet"])
        assert code == EXIT_NUMERICAL


class TestOptimizeCommand:
    def test_trace_and_overlay_figures(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            "opt.json",
            {
                "kind": "optimize",
                "distributions": ["two_point"],
                "n_values": [2],
                "optimize_steps": 200,
            },
        )
        out = tmp_path / "out"
        assert main(["optimize", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        rows = read_result_csv(str(out / "optimize.csv"))
        assert any(r.metric == "w1" for r in rows)
        assert any(r.metric == "tau_1" for r in rows)
        assert (out / "optimize.png").exists()
        assert (out / "optimize_two_point_N2.png").exists()


class TestTrainCommand:
    def test_artifacts(self, tmp_path):
        cfg = _write_config(tmp_path, "t.json", _train_spec())
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        rows = read_result_csv(str(out / "train.csv"))
        assert {r.step for r in rows} == {50, 100}
        assert (out / "train.png").exists()
        assert (out / "checkpoint_learned_seed1.json").exists()

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _write_config(tmp_path, "t.json", _train_spec(seeds=[3]))
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
            outputs.append((out / "train.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = _write_config(tmp_path, "t.json", _train_spec(seeds=[1]))
        out = tmp_path / "out"
        code = main(["train", "--config", cfg, "--seed", "9", "--out", str(out), "--quiet"])
        assert code == EXIT_OK
        rows = read_result_csv(str(out / "train.csv"))
        assert {r.seed for r in rows} == {9}

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exits_2(self, tmp_path):
        spec = _train_spec(agent={**TINY_AGENT, "value_lr": 1e200})
        cfg = _write_config(tmp_path, "d.json", spec)
        out = tmp_path / "out"
        code = main(["train", "--config", cfg, "--out", str(out), "--quiet"])
        assert code == EXIT_NUMERICAL
        rows = read_result_csv(str(out / "train.csv"))
        assert rows[-1].metric == "diverged"


class TestSweepCommand:
    def test_one_curve_set_per_kind(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QF_THREADS", "2")
        spec = _train_spec(kind="sweep", agent_kinds=["learned", "fixed"])
        cfg = _write_config(tmp_path, "s.json", spec)
        out = tmp_path / "out"
        assert main(["sweep", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        rows = read_result_csv(str(out / "sweep.csv"))
        assert {r.experiment for r in rows} == {
            "train/bandit/learned",
            "train/bandit/fixed",
        }
        assert (out / "sweep.png").exists()
        assert (out / "sweep_learned_seed1.csv").exists()
        assert (out / "sweep_fixed_seed1.csv").exists()


class TestInvocationErrors:
    def test_missing_config_file(self):
        assert main(["train", "--config", "/does/not/exist.json"]) == EXIT_CONFIG

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["train", "--config", str(path)]) == EXIT_CONFIG

    def test_kind_command_mismatch(self, tmp_path):
        cfg = _write_config(tmp_path, "m.json", {"kind": "approx"})
        assert main(["train", "--config", cfg]) == EXIT_CONFIG

    def test_unknown_flag(self):
        assert main(["train", "--frobnicate"]) == EXIT_CONFIG

    def test_unknown_command(self):
        assert main(["dance"]) == EXIT_CONFIG

    def test_negative_seed(self, tmp_path):
        cfg = _write_config(tmp_path, "t.json", _train_spec())
        assert main(["train", "--config", cfg, "--seed", "-1"]) == EXIT_CONFIG

    def test_help_exits_0(self):
        assert main(["--help"]) == EXIT_OK

    def test_quiet_suppresses_stdout(self, tmp_path, capsys):
        cfg = _write_config(
            tmp_path, "a.json", {"kind": "approx", "n_values": [], "distributions": []}
        )
        main(["approx", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"])
        assert capsys.readouterr().out == ""
