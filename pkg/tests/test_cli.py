import json
import os

import pytest

from fescycle import biomech as bm
from fescycle import cli, sac
from fescycle.pattern import StimulationPattern, pattern_from_json, save_pattern


@pytest.fixture()
def config_path(tmp_path, nominal_2m):
    path = tmp_path / "config.json"
    path.write_text(bm.config_to_json(nominal_2m))
    return path


@pytest.fixture()
def pattern_path(tmp_path):
    pat = StimulationPattern(
        (bm.QUADRICEPS, bm.HAMSTRINGS), (((30.0, 170.0),), ((190.0, 330.0),)),
    )
    path = tmp_path / "pattern.json"
    save_pattern(pat, path)
    return path


def constant_agent(value=20.0, n_actions=2):
    """Checkpointable agent whose deterministic action saturates at ~1."""
    agent = sac.SacAgent(3 + n_actions, n_actions, sac.TrainConfig(seed=0))
    for p in agent.actor.trunk.params:
        p[:] = 0.0
    agent.actor.trunk.params[-1][:n_actions] = value
    return agent


class TestValidate:
    def test_valid_config(self, config_path, capsys):
        assert cli.main(["validate", str(config_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"valid": True}

    def test_unreachable_geometry(self, tmp_path, capsys):
        bad = bm.CyclingConfig(
            crank_hip_dx=0.9, crank_hip_dy=0.7, crank_arm=0.17,
            thigh_len=0.4, shank_len=0.4,
        )
        path = tmp_path / "bad.json"
        path.write_text(bm.config_to_json(bad))
        assert cli.main(["validate", str(path)]) == 1
        out = json.loads(capsys.readouterr().out)
        assert out["valid"] is False
        assert "crank_angle_deg" in out

    def test_malformed_json_reports_byte_offset(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text('{"crank_hip_dx": 0.5,, }')
        assert cli.main(["validate", str(path)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "parse_error"
        assert isinstance(err["byte_offset"], int)

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["validate", str(tmp_path / "nope.json")]) == 2

    def test_unknown_key_rejected(self, tmp_path, capsys):
        path = tmp_path / "extra.json"
        path.write_text('{"crank_hip_dx": 0.5, "body_mass": 70}')
        assert cli.main(["validate", str(path)]) == 2


class TestExtract:
    def test_constant_agent_full_circle(self, tmp_path, config_path, capsys):
        agent_path = tmp_path / "agent.json"
        sac.save_agent(constant_agent(), agent_path)
        out = tmp_path / "pattern.json"
        svg = tmp_path / "pattern.svg"
        rc = cli.main([
            "extract", str(agent_path), str(config_path),
            "--out", str(out), "--svg", str(svg),
        ])
        assert rc == 0
        pat = pattern_from_json(out.read_text())
        assert pat.intervals == (((0.0, 360.0),), ((0.0, 360.0),))
        assert svg.read_text().startswith("<svg")
        assert (tmp_path / "pattern.json.manifest.json").exists()

    def test_missing_agent_file(self, tmp_path, config_path):
        rc = cli.main([
            "extract", str(tmp_path / "none.json"), str(config_path),
            "--out", str(tmp_path / "p.json"),
        ])
        assert rc == 2


class TestCollectFinetuneEvaluate:
    def test_collect_writes_sessions(self, tmp_path, config_path, pattern_path, capsys):
        out_dir = tmp_path / "logs"
        rc = cli.main([
            "collect", str(config_path), str(pattern_path),
            "--out", str(out_dir), "--sessions", "2", "--duration", "3",
            "--seed", "5",
        ])
        assert rc == 0
        files = sorted(out_dir.glob("session*.csv"))
        assert len(files) == 2
        rows = files[0].read_text().strip().splitlines()
        assert len(rows) == 62  # header + 61 samples for 3 s at 50 ms
        assert (out_dir / "manifest.json").exists()

    def test_collect_gap_flag(self, tmp_path, config_path, pattern_path):
        gap_path = tmp_path / "gap.json"
        gap_path.write_text(json.dumps({"seed": 3}))
        out_dir = tmp_path / "gap_logs"
        rc = cli.main([
            "collect", str(config_path), str(pattern_path),
            "--gap", str(gap_path), "--out", str(out_dir),
            "--sessions", "1", "--duration", "2", "--seed", "5",
        ])
        assert rc == 0

    def test_finetune_runs_on_collected_logs(self, tmp_path, config_path, pattern_path, capsys):
        out_dir = tmp_path / "logs"
        cli.main([
            "collect", str(config_path), str(pattern_path),
            "--out", str(out_dir), "--sessions", "3", "--duration", "6",
            "--seed", "5",
        ])
        agent_path = tmp_path / "agent.json"
        sac.save_agent(constant_agent(), agent_path)
        train_path = tmp_path / "train.json"
        train_path.write_text(json.dumps({
            "batch": 64, "grad_steps_per_episode": 5, "cql_num_samples": 4,
        }))
        out_path = tmp_path / "agent_ft.json"
        rc = cli.main([
            "finetune", str(agent_path), str(out_dir), str(train_path),
            "--out", str(out_path), "--epochs", "1", "--seed", "1",
        ])
        assert rc == 0
        loaded = sac.load_agent(out_path)
        assert loaded.tc.cql_weight == 5.0  # offline default kicks in

    def test_finetune_insufficient_data(self, tmp_path, config_path, pattern_path, capsys):
        out_dir = tmp_path / "logs"
        cli.main([
            "collect", str(config_path), str(pattern_path),
            "--out", str(out_dir), "--sessions", "1", "--duration", "2",
            "--seed", "5",
        ])
        agent_path = tmp_path / "agent.json"
        sac.save_agent(constant_agent(), agent_path)
        rc = cli.main([
            "finetune", str(agent_path), str(out_dir),
            "--out", str(tmp_path / "ft.json"), "--epochs", "1",
        ])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InsufficientData"

    def test_evaluate_empty_pattern_zero_rpm(self, tmp_path, config_path, capsys):
        pat_path = tmp_path / "empty.json"
        save_pattern(
            StimulationPattern((bm.QUADRICEPS, bm.HAMSTRINGS), ((), ())), pat_path
        )
        out = tmp_path / "eval.csv"
        rc = cli.main([
            "evaluate", str(config_path), str(pat_path),
            "--out", str(out), "--trials", "2", "--duration", "8",
        ])
        assert rc == 0
        assert "mean RPM 0.00" in capsys.readouterr().out

    def test_evaluate_pattern_in_band(self, tmp_path, config_path, pattern_path, capsys):
        out = tmp_path / "eval.csv"
        rc = cli.main([
            "evaluate", str(config_path), str(pattern_path),
            "--out", str(out), "--trials", "2", "--duration", "12",
            "--seed", "3",
        ])
        assert rc == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "trial,step,time_s,rpm"
        assert len(rows) == 1 + 2 * 240

    def test_evaluate_reproducible_byte_for_byte(self, tmp_path, config_path, pattern_path):
        out1 = tmp_path / "eval1.csv"
        out2 = tmp_path / "eval2.csv"
        for out in (out1, out2):
            cli.main([
                "evaluate", str(config_path), str(pattern_path),
                "--out", str(out), "--trials", "2", "--duration", "6",
                "--seed", "3",
            ])
        assert out1.read_bytes() == out2.read_bytes()


class TestCompare:
    def test_identical_patterns(self, tmp_path, pattern_path, capsys):
        out = tmp_path / "cmp.json"
        rc = cli.main(["compare", str(pattern_path), str(pattern_path), "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report[bm.QUADRICEPS]["on_offset_deg"] == 0.0
        assert report[bm.QUADRICEPS]["overlap_arc"] == 140.0

    def test_rotated_copy_reports_offset(self, tmp_path, pattern_path, capsys):
        rotated = tmp_path / "rot.json"
        pat = pattern_from_json(pattern_path.read_text())
        from fescycle.pattern import PatternPerturbation, perturb_pattern, ROTATE

        save_pattern(perturb_pattern(pat, PatternPerturbation(ROTATE, 10.0)), rotated)
        out = tmp_path / "cmp.json"
        assert cli.main(["compare", str(pattern_path), str(rotated), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report[bm.QUADRICEPS]["on_offset_deg"] == 10.0
        assert report[bm.HAMSTRINGS]["on_offset_deg"] == 10.0

    def test_muscle_mismatch_is_domain_error(self, tmp_path, pattern_path, capsys):
        other = tmp_path / "one.json"
        save_pattern(
            StimulationPattern((bm.QUADRICEPS,), (((30.0, 150.0),),)), other
        )
        rc = cli.main(["compare", str(pattern_path), str(other), "--out", str(tmp_path / "c.json")])
        assert rc == 1


class TestTrain:
    def test_tiny_run_reproducible(self, tmp_path, config_path):
        train_path = tmp_path / "train.json"
        train_path.write_text(json.dumps({
            "batch": 64, "grad_steps_per_episode": 3,
        }))
        outs = []
        for tag in ("a", "b"):
            agent_path = tmp_path / f"agent_{tag}.json"
            curve_path = tmp_path / f"curve_{tag}.csv"
            rc = cli.main([
                "train", str(config_path), str(train_path),
                "--out", str(agent_path), "--curve", str(curve_path),
                "--max-episodes", "3", "--seed", "11",
            ])
            assert rc == 0
            outs.append((agent_path.read_bytes(), curve_path.read_bytes()))
        assert outs[0] == outs[1]
        header = outs[0][1].decode().splitlines()[0]
        assert header == "episode,train_return,test_return,norm_test_return"

    def test_zero_max_episodes_rejected(self, tmp_path, config_path, capsys):
        rc = cli.main([
            "train", str(config_path),
            "--out", str(tmp_path / "a.json"), "--curve", str(tmp_path / "c.csv"),
            "--max-episodes", "0",
        ])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InvalidArgument"

    def test_env_seed_override_changes_outputs(self, tmp_path, config_path):
        train_path = tmp_path / "train.json"
        train_path.write_text(json.dumps({"batch": 64, "grad_steps_per_episode": 3}))

        def run(env_seed):
            agent_path = tmp_path / f"agent_{env_seed}.json"
            curve_path = tmp_path / f"curve_{env_seed}.csv"
            old = os.environ.get("FESRL_SEED")
            os.environ["FESRL_SEED"] = env_seed
            try:
                rc = cli.main([
                    "train", str(config_path), str(train_path),
                    "--out", str(agent_path), "--curve", str(curve_path),
                    "--max-episodes", "2", "--seed", "11",
                ])
            finally:
                if old is None:
                    del os.environ["FESRL_SEED"]
                else:
                    os.environ["FESRL_SEED"] = old
            assert rc == 0
            return curve_path.read_bytes()

        assert run("101") != run("202")

    def test_manifest_written_next_to_agent(self, tmp_path, config_path):
        train_path = tmp_path / "train.json"
        train_path.write_text(json.dumps({"batch": 64, "grad_steps_per_episode": 2}))
        agent_path = tmp_path / "agent.json"
        cli.main([
            "train", str(config_path), str(train_path),
            "--out", str(agent_path), "--curve", str(tmp_path / "c.csv"),
            "--max-episodes", "2", "--seed", "1",
        ])
        manifest = json.loads((tmp_path / "agent.json.manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 1
        assert str(agent_path) in manifest["outputs"]
