"""Command-line behavior: subcommand dispatch, config files, exit codes,
and the files each pipeline writes."""

import json

import numpy as np
import pytest

from auxblocks.checkpoint import load_checkpoint
from auxblocks.cli import main
from auxblocks.evaluation import read_report_csv

SYN = ["--dataset", "synthetic", "--synthetic-classes", "4", "--synthetic-per-class", "30",
       "--synthetic-size", "16"]


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    base = tmp_path_factory.mktemp("ckpts")
    plain = base / "plain.auxb"
    aux = base / "aux.auxb"
    assert run(["train", *SYN, "--model", "lenet5", "--aux", "none", "--epochs", "2",
                "--batch-size", "32", "--lr", "0.05", "--seed", "7",
                "--out", str(plain)]) == 0
    assert run(["train", *SYN, "--model", "lenet5", "--aux", "mnist", "--taps", "1,3",
                "--epochs", "2", "--batch-size", "32", "--lr", "0.05", "--seed", "7",
                "--out", str(aux)]) == 0
    return plain, aux


class TestTrain:
    def test_checkpoint_written_and_loadable(self, checkpoints):
        plain, aux = checkpoints
        assert plain.exists() and aux.exists()
        model = load_checkpoint(aux)
        assert model.num_aux == 2
        assert model.meta["defense"] == "aux_block"

    def test_adv_train_subcommand(self, checkpoints, tmp_path):
        plain, _ = checkpoints
        out = tmp_path / "at.auxb"
        code = run(["train", *SYN, "--defense", "adv-train", "--pretrained", str(plain),
                    "--epochs", "1", "--batch-size", "32", "--lr", "0.05",
                    "--at-eps", "0.1", "--at-alpha", "0.05", "--at-iters", "2",
                    "--seed", "7", "--out", str(out)])
        assert code == 0
        assert load_checkpoint(out).meta["defense"] == "adv_training"

    def test_config_file_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "batch-size": 16, "lr": 0.05,
                                   "dataset": "synthetic", "synthetic-classes": "3",
                                   "synthetic-per-class": 10, "synthetic-size": 16,
                                   "aux": "none"}))
        out = tmp_path / "m.auxb"
        assert run(["train", "--config", str(cfg), "--seed", "1", "--out", str(out)]) == 0
        assert load_checkpoint(out).meta["epochs_trained"] == 1

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 5}))
        out = tmp_path / "m.auxb"
        assert run(["train", "--config", str(cfg), *SYN, "--aux", "none", "--epochs", "1",
                    "--batch-size", "32", "--seed", "1", "--out", str(out)]) == 0
        assert load_checkpoint(out).meta["epochs_trained"] == 1

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"learning-rate-typo": 3}))
        with pytest.raises(SystemExit) as exc:
            run(["train", "--config", str(cfg), "--out", "x.auxb"])
        assert exc.value.code == 2
        assert "learning-rate-typo" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--no-such-flag", "--out", "x.auxb"])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["deploy"])
        assert exc.value.code == 2

    def test_missing_checkpoint_is_runtime_error(self, tmp_path, capsys):
        code = run(["attack", "pgd", *SYN, "--checkpoint", str(tmp_path / "none.auxb"),
                    "--out", str(tmp_path)])
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestAttack:
    def test_pgd_reproduces_published_settings(self, checkpoints, tmp_path):
        plain, _ = checkpoints
        out = tmp_path / "atk"
        code = run(["attack", "pgd", *SYN, "--checkpoint", str(plain), "--n", "12",
                    "--eps", "0.3", "--alpha", "0.1", "--iters", "5", "--seed", "3",
                    "--out", str(out)])
        assert code == 0
        batch = np.load(out / "advbatch.npz")
        assert batch["adversarials"].shape == batch["originals"].shape
        assert np.abs(batch["adversarials"] - batch["originals"]).max() <= 0.3 + 1e-6
        assert (out / "adv_originals.pgm").exists()
        assert (out / "adv_adversarials.pgm").exists()
        assert (out / "adv_difference.pgm").exists()

    def test_boundary_family(self, checkpoints, tmp_path):
        plain, _ = checkpoints
        out = tmp_path / "batk"
        code = run(["attack", "boundary", *SYN, "--checkpoint", str(plain), "--n", "4",
                    "--queries", "40", "--seed", "3", "--out", str(out)])
        assert code == 0
        assert (out / "advbatch.npz").exists()


class TestEval:
    def test_static_writes_csv_rows(self, checkpoints, tmp_path):
        plain, aux = checkpoints
        out = tmp_path / "rep"
        code = run(["eval", "static", *SYN, "--undefended", str(plain),
                    "--aux-checkpoint", str(aux), "--attacks", "clean,pgd",
                    "--n", "50", "--eps", "0.2", "--alpha", "0.05", "--iters", "3",
                    "--seed", "3", "--out", str(out)])
        assert code == 0
        rows = read_report_csv(out / "report.csv")
        assert {r.defense for r in rows} == {"NA", "AuxBlock"}
        assert {r.attack for r in rows} == {"clean", "pgd"}
        assert (out / "report.json").exists()

    def test_sweep_and_ratio(self, checkpoints, tmp_path):
        _, aux = checkpoints
        out = tmp_path / "swp"
        code = run(["eval", "sweep", *SYN, "--checkpoint", str(aux),
                    "--family", "adp_pgd", "--eps-grid", "0,0.1", "--n", "30",
                    "--iters", "2", "--seed", "3", "--out", str(out)])
        assert code == 0
        data = json.loads((out / "report.json").read_text())
        assert "adp_pgd:vote" in data["sweeps"]

        out2 = tmp_path / "rat"
        code = run(["eval", "ratio", *SYN, "--checkpoint", str(aux),
                    "--eps-grid", "0,0.05", "--n", "20", "--seed", "3",
                    "--out", str(out2)])
        assert code == 0
        data = json.loads((out2 / "report.json").read_text())
        assert "pooled" in data["ratios"]

    def test_position_study(self, checkpoints, tmp_path):
        _, aux = checkpoints
        out = tmp_path / "pos"
        code = run(["eval", "position-study", *SYN, "--checkpoint", str(aux),
                    "--n", "30", "--eps", "0.1", "--alpha", "0.05", "--iters", "2",
                    "--seed", "3", "--out", str(out)])
        assert code == 0
        rows = read_report_csv(out / "report.csv")
        assert {r.mode for r in rows} == {"block0", "block1", "public"}


class TestReport:
    def test_merge_and_svg(self, checkpoints, tmp_path):
        _, aux = checkpoints
        r1 = tmp_path / "r1"
        r2 = tmp_path / "r2"
        run(["eval", "sweep", *SYN, "--checkpoint", str(aux), "--family", "adp_fgsm",
             "--eps-grid", "0,0.1", "--n", "20", "--seed", "3", "--out", str(r1)])
        run(["eval", "position-study", *SYN, "--checkpoint", str(aux), "--n", "20",
             "--eps", "0.1", "--alpha", "0.05", "--iters", "2", "--seed", "3",
             "--out", str(r2)])
        merged = tmp_path / "merged"
        code = run(["report", "--inputs", str(r1 / "report.json"), str(r2 / "report.json"),
                    "--formats", "csv,json,svg", "--out", str(merged)])
        assert code == 0
        assert (merged / "merged.csv").exists()
        assert (merged / "merged.json").exists()
        assert (merged / "merged_sweeps.svg").exists()

    def test_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--epochs", "--seed", "--alphas", "--schedule", "--defense"):
            assert flag in out
