import csv
import json

import pytest

from srl_handover import cli
from srl_handover.config import ConfigError, load_run_config
from srl_handover.dataio import read_corpus

TINY = {
    "seed": 5,
    "data": {"synth": {"n_pairs": 3, "clips_per_pair": 2}, "n_test_pairs": 1},
    "svae": {"latent_dim": 4, "hidden_dim": 16, "embed_dim": 8, "attention_heads": 2, "gate_hidden": 8,
             "stage1_epochs": 2, "stage2_epochs": 2, "stage2_switch_epoch": 1, "batch_size": 128},
    "rot": {"latent_dim": 4, "hidden_dim": 32, "embed_dim": 8, "attention_heads": 2, "epochs": 40,
            "lr_start": 1e-3},
    "timing": {"hidden": 16, "epochs": 3, "batch_size": 128},
}


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    assert cli.main(["synth-data", "--config", str(cfg), "--output-dir", str(root)]) == 0
    for model in ("timing", "rot", "svae"):
        assert cli.main(["train", model, "--config", str(cfg), "--output-dir", str(root)]) == 0
    return root, cfg


# --- parsing and config ---------------------------------------------------


@pytest.mark.parametrize("command", ["synth-data", "train", "eval", "importance", "simulate", "stats"])
def test_help_lists_common_flags(capsys, command):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--output-dir", "--seed", "--verbose"):
        assert flag in text


def test_usage_error_exit_code_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "nonsense"])
    assert exc.value.code == 1


def test_invalid_config_exit_code_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"svae": {"latent": 3}}))
    code, _, err = run(capsys, "stats", "--config", bad, "--output-dir", tmp_path)
    assert code == 1 and "unknown keys" in err


def test_config_sections_round_trip():
    cfg = load_run_config(TINY)
    assert cfg.svae.latent_dim == 4 and cfg.rot.epochs == 40 and cfg.timing.hidden == 16
    assert cfg.data.synth.n_pairs == 3
    assert load_run_config(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        load_run_config({"bogus": 1})
    with pytest.raises(ConfigError):
        load_run_config({"timing": {"hidden": 0}})


def test_sub_seeds_follow_root_seed():
    a, b = load_run_config({"seed": 1}), load_run_config({"seed": 2})
    assert a.svae.seed != b.svae.seed and a.svae.seed != a.rot.seed
    assert load_run_config({"seed": 1}).timing.seed == a.timing.seed


def test_output_root_precedence(monkeypatch, tmp_path):
    cfg = load_run_config({})
    monkeypatch.setenv("HANDOVER_HOME", str(tmp_path / "home"))
    assert cfg.output_root() == tmp_path / "home"
    assert cfg.output_root("flag").name == "flag"
    assert load_run_config({"output_dir": "cfgdir"}).output_root().name == "cfgdir"
    monkeypatch.delenv("HANDOVER_HOME")
    assert cfg.output_root().name == "handover_runs"


# --- commands -------------------------------------------------------------


def test_synth_data_deterministic_and_loadable(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(TINY))
    code, out, _ = run(capsys, "synth-data", "--config", cfg, "--out", tmp_path / "a")
    assert code == 0 and "wrote 6 clips" in out
    run(capsys, "synth-data", "--config", cfg, "--out", tmp_path / "b")
    assert cli.tree_hash(tmp_path / "a") == cli.tree_hash(tmp_path / "b")
    assert len(read_corpus(tmp_path / "a")) == 6
    run(capsys, "synth-data", "--config", cfg, "--out", tmp_path / "c", "--seed", 6)
    assert cli.tree_hash(tmp_path / "a") != cli.tree_hash(tmp_path / "c")


def test_train_logs(workspace):
    root, _ = workspace
    assert len(read_rows(root / "logs" / "timing_log.csv")) == 3
    assert len(read_rows(root / "logs" / "rot_log.csv")) == 40
    s1 = read_rows(root / "logs" / "svae_stage1_log.csv")
    assert len(s1) == 2 and list(s1[0])[:5] == ["epoch", "lr", "p", "recon", "kl"]
    assert len(read_rows(root / "logs" / "svae_stage2_log.csv")) == 2
    for m in ("svae", "rot", "timing"):
        assert (root / "checkpoints" / f"{m}.zip").exists()


def test_train_timing_reproduces_final_loss(capsys, workspace, tmp_path):
    root, cfg = workspace
    lines = []
    for k in range(2):
        code, out, _ = run(capsys, "train", "timing", "--config", cfg, "--output-dir", root,
                           "--checkpoint", tmp_path / f"t{k}.zip")
        assert code == 0
        lines.append([l for l in out.splitlines() if l.startswith("final loss:")][0])
    assert lines[0] == lines[1]


def test_train_missing_corpus_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "train", "timing", "--output-dir", tmp_path)
    assert code == 2 and "no corpus" in err


def test_train_nan_abort_exit_2(capsys, workspace, monkeypatch):
    from srl_handover import timing
    from srl_handover.training import TrainingError

    def boom(*a, **k):
        raise TrainingError("non-finite loss at epoch 3, batch 7")

    monkeypatch.setattr(timing, "train_timing", boom)
    root, cfg = workspace
    code, _, err = run(capsys, "train", "timing", "--config", cfg, "--output-dir", root, "--checkpoint",
                       root / "nan.zip")
    assert code == 2 and "epoch 3, batch 7" in err


@pytest.mark.parametrize("model,columns", [
    ("svae", ["activity", "mae_cm", "mae_std_cm", "ar_mae_cm", "ar_mae_std_cm", "n_windows", "n_segments"]),
    ("rot", ["activity", "MAE_cm", "MAE_std", "MEAE_rad", "MEAE_std", "n_windows"]),
    ("timing", ["group", "name", "segment_accuracy", "window_accuracy", "n_segments", "n_windows"]),
])
def test_eval_schema_and_determinism(capsys, workspace, model, columns):
    root, cfg = workspace
    code, out, _ = run(capsys, "eval", model, "--config", cfg, "--output-dir", root)
    assert code == 0
    path = root / "reports" / f"{model}_eval.csv"
    first = path.read_text()
    rows = read_rows(path)
    assert list(rows[0]) == columns
    run(capsys, "eval", model, "--config", cfg, "--output-dir", root)
    assert path.read_text() == first


def test_eval_train_split_beats_test(capsys, workspace):
    root, cfg = workspace
    mae = {}
    for split in ("train", "test"):
        out = root / "reports" / f"rot_{split}.csv"
        run(capsys, "eval", "rot", "--config", cfg, "--output-dir", root, "--split", split, "--out", out)
        mae[split] = float(read_rows(out)[-1]["MAE_cm"])
    assert mae["train"] < mae["test"]


def test_eval_checkpoint_mismatch(capsys, workspace):
    root, cfg = workspace
    code, _, err = run(capsys, "eval", "svae", "--config", cfg, "--output-dir", root,
                       "--checkpoint", root / "checkpoints" / "rot.zip")
    assert code == 2 and "not 'svae'" in err


def test_importance_and_stats(capsys, workspace):
    root, cfg = workspace
    code, out, _ = run(capsys, "importance", "timing", "--config", cfg, "--output-dir", root, "--max-samples", 100)
    assert code == 0 and out.startswith("position:")
    assert len(read_rows(root / "reports" / "timing_importance.csv")) == 34
    code, out, _ = run(capsys, "stats", "--config", cfg, "--output-dir", root)
    assert code == 0 and "segments" in out
    assert (root / "stats" / "handover_points.svg").exists()


def test_simulate_both_controllers(capsys, workspace, tmp_path):
    root, cfg = workspace
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps({"controller": "both", "activity": "Mount a mic", "seed": 2, "ticks": 60}))
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--output-dir", root, "--scenario", scenario,
                       "--out", tmp_path / "ep")
    assert code == 0 and out.startswith("baseline:") and "3hands:" in out
    rows = read_rows(tmp_path / "ep" / "summary.csv")
    assert [r["controller"] for r in rows] == ["baseline", "3hands"]


def test_simulate_rejects_unknown_scenario_key(capsys, tmp_path):
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps({"speed": 3}))
    code, _, err = run(capsys, "simulate", "--output-dir", tmp_path, "--scenario", scenario)
    assert code == 2 and "unknown scenario keys" in err
