# ===========================================
# SET-LSTM - Command Line Tests
# ===========================================

import json

import numpy as np
import pandas as pd
import pytest

from setlstm.cli import build_parser, main


def parse_output(text):
    """key=value stdout lines as a dict"""
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.fixture
def full_scale_config(tmp_path):
    path = tmp_path / "full_scale.cfg"
    path.write_text(
        "vocab_size=20000\nembed_dim=256\nhidden_dim=256\nseq_len=100\n"
        "n_classes=2\nepsilon=10\nzeta=0.2\nseed=0\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture
def trained_run(tmp_path, config_file, corpus_file, capsys):
    out = tmp_path / "run"
    code = main(
        ["train", "--config", str(config_file), "--data", str(corpus_file), "--out", str(out)]
    )
    assert code == 0
    capsys.readouterr()
    return out


class TestUsage:
    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_missing_config(self, corpus_file, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", str(corpus_file), "--out", str(tmp_path)])
        assert exc.value.code == 1

    def test_bad_choice(self):
        with pytest.raises(SystemExit) as exc:
            main(["fixed-topology", "--checkpoint", "x", "--data", "y", "--out", "z", "--mode", "warm"])
        assert exc.value.code == 1

    def test_hidden_flag_not_in_help(self):
        parser = build_parser()
        gradcheck = parser._subparsers._group_actions[0].choices["gradcheck"]
        assert "--corrupt-gradient" not in gradcheck.format_help()


class TestCountParams:
    def test_full_scale(self, full_scale_config, capsys):
        assert main(["count-params", "--config", str(full_scale_config)]) == 0
        out = parse_output(capsys.readouterr().out)
        assert out["embedding"] == "202560"
        assert out["w_xi"] == "5120"
        assert out["biases"] == "1024"
        assert out["total_excluding_output"] == "244544"
        assert out["dense_baseline"] == "5645312"
        assert out["sparsity"] == "0.956682"

    def test_epsilon_override(self, full_scale_config, capsys):
        assert main(["count-params", "--config", str(full_scale_config), "--epsilon", "2"]) == 0
        out = parse_output(capsys.readouterr().out)
        assert out["total_excluding_output"] == "49728"
        assert out["sparsity"] == "0.991191"

    def test_setc_variant_json(self, full_scale_config, capsys):
        code = main(
            ["count-params", "--config", str(full_scale_config), "--model-variant", "setc_lstm", "--json"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total_excluding_output"] == 5_161_984
        assert payload["sparsity"] == pytest.approx(0.085616, abs=1e-6)

    def test_config_echoed_to_stderr(self, full_scale_config, capsys):
        main(["count-params", "--config", str(full_scale_config)])
        err = capsys.readouterr().err
        assert "config: epsilon=10.0" in err

    def test_missing_config_file(self, tmp_path):
        assert main(["count-params", "--config", str(tmp_path / "none.cfg")]) == 2


class TestGradcheckCommand:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--seed", "0", "--instances", "2"]) == 0
        out = parse_output(capsys.readouterr().out)
        assert out["passed"] == "true"
        assert float(out["max_error"]) < 1e-4

    def test_corrupted_exits_three(self, capsys):
        code = main(["gradcheck", "--instances", "1", "--corrupt-gradient"])
        assert code == 3
        assert parse_output(capsys.readouterr().out)["passed"] == "false"

    def test_bad_sizes(self):
        assert main(["gradcheck", "--sizes", "B=oops"]) == 2


class TestTrainCommand:
    def test_outputs(self, trained_run):
        for name in ("metrics.csv", "metrics.json", "final.ckpt"):
            assert (trained_run / name).exists()
        frame = pd.read_csv(trained_run / "metrics.csv")
        assert frame["epoch"].tolist() == [1, 2, 3]

    def test_stdout_keys(self, tmp_path, config_file, corpus_file, capsys):
        main(["train", "--config", str(config_file), "--data", str(corpus_file), "--out", str(tmp_path / "o")])
        lines = capsys.readouterr().out.strip().splitlines()
        assert [line.split("=")[0] for line in lines] == [
            "epochs",
            "best_epoch",
            "best_test_acc",
            "test_acc",
        ]

    def test_resume_from_epoch_checkpoint(self, tmp_path, config_file, corpus_file, capsys):
        full = tmp_path / "full"
        main(
            [
                "train", "--config", str(config_file), "--data", str(corpus_file),
                "--out", str(full), "--save-every", "1",
            ]
        )
        assert (full / "epoch_001.ckpt").exists()
        resumed = tmp_path / "resumed"
        code = main(
            [
                "train", "--config", str(config_file), "--data", str(corpus_file),
                "--out", str(resumed), "--resume", str(full / "epoch_001.ckpt"),
            ]
        )
        assert code == 0
        assert (resumed / "metrics.csv").read_text() == (full / "metrics.csv").read_text()

    def test_resume_with_other_config(self, tmp_path, trained_run, corpus_file):
        other = tmp_path / "other.cfg"
        text = (trained_run.parent / "tiny.cfg").read_text().replace("zeta=0.3", "zeta=0.5")
        other.write_text(text)
        code = main(
            [
                "train", "--config", str(other), "--data", str(corpus_file),
                "--out", str(tmp_path / "x"), "--resume", str(trained_run / "final.ckpt"),
            ]
        )
        assert code == 2

    def test_same_seed_same_artifacts(self, tmp_path, config_file, corpus_file):
        for name in ("a", "b"):
            args = ["train", "--config", str(config_file), "--data", str(corpus_file)]
            assert main(args + ["--out", str(tmp_path / name)]) == 0
        for artifact in ("final.ckpt", "metrics.csv"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()

    def test_missing_corpus(self, tmp_path, config_file):
        code = main(
            ["train", "--config", str(config_file), "--data", str(tmp_path / "none.tsv"), "--out", str(tmp_path)]
        )
        assert code == 2

    def test_seed_flag(self, tmp_path, config_file, corpus_file, capsys):
        main(
            [
                "train", "--config", str(config_file), "--data", str(corpus_file),
                "--out", str(tmp_path / "s"), "--seed", "11",
            ]
        )
        assert "config: seed=11" in capsys.readouterr().err

    def test_fixed_topology_config(self, tmp_path, trained_run, corpus_file):
        cfg = tmp_path / "fixed.cfg"
        text = (trained_run.parent / "tiny.cfg").read_text()
        text = text.replace("fixed_topology=", f"fixed_topology={trained_run / 'final.ckpt'}")
        text = text.replace("init_mode=fresh", "init_mode=same-as-checkpoint")
        cfg.write_text(text)
        out = tmp_path / "fixed"
        assert main(["train", "--config", str(cfg), "--data", str(corpus_file), "--out", str(out)]) == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert all(r["removed"] == 0 for r in payload["history"])


class TestEvalCommand:
    def test_all_examples(self, trained_run, corpus_file, capsys):
        code = main(["eval", "--checkpoint", str(trained_run / "final.ckpt"), "--data", str(corpus_file)])
        assert code == 0
        out = parse_output(capsys.readouterr().out)
        assert out["n_examples"] == "120"
        assert 0.0 <= float(out["accuracy"]) <= 1.0

    def test_test_split_matches_training(self, trained_run, corpus_file, capsys):
        main(
            [
                "eval", "--checkpoint", str(trained_run / "final.ckpt"),
                "--data", str(corpus_file), "--split", "test", "--json",
            ]
        )
        payload = json.loads(capsys.readouterr().out)
        metrics = pd.read_csv(trained_run / "metrics.csv")
        assert payload["n_examples"] == 24
        assert payload["accuracy"] == pytest.approx(metrics["test_acc"].iloc[-1], abs=1e-6)

    def test_degree_spread_reported(self, trained_run, corpus_file, capsys):
        """Row and column degree variation of every sparse layer"""
        main(["eval", "--checkpoint", str(trained_run / "final.ckpt"), "--data", str(corpus_file)])
        out = parse_output(capsys.readouterr().out)
        for name in ("embedding", "w_xi", "w_hg"):
            assert float(out[f"{name}.row_cv"]) >= 0.0
            assert f"{name}.col_cv" in out

    def test_degree_summary_in_json(self, trained_run, corpus_file, capsys):
        main(
            [
                "eval", "--checkpoint", str(trained_run / "final.ckpt"),
                "--data", str(corpus_file), "--json",
            ]
        )
        degrees = json.loads(capsys.readouterr().out)["degrees"]
        assert len(degrees) == 9
        assert degrees["embedding"]["row_mean"] > 0.0

    def test_corrupt_checkpoint(self, tmp_path, corpus_file):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert main(["eval", "--checkpoint", str(bad), "--data", str(corpus_file)]) == 2


class TestExperimentCommands:
    def test_similarity(self, tmp_path, config_file, corpus_file, capsys):
        out = tmp_path / "sim"
        code = main(
            [
                "similarity", "--config", str(config_file), "--data", str(corpus_file),
                "--trials", "2", "--out", str(out),
            ]
        )
        assert code == 0
        cells = np.loadtxt(out / "cells_similarity.csv", delimiter=",")
        assert cells.shape == (2, 2)
        np.testing.assert_allclose(np.diag(cells), 1.0)
        assert (out / "embedding_similarity.csv").exists()
        assert len(pd.read_csv(out / "trials.csv")) == 2
        assert (out / "baseline.txt").read_text().startswith("cells=")
        keys = set(parse_output(capsys.readouterr().out))
        assert keys == {"cells_mean", "cells_baseline", "embedding_mean", "embedding_baseline"}

    def test_similarity_needs_two_trials(self, tmp_path, config_file, corpus_file):
        code = main(
            [
                "similarity", "--config", str(config_file), "--data", str(corpus_file),
                "--trials", "1", "--out", str(tmp_path),
            ]
        )
        assert code == 2

    def test_sweep(self, tmp_path, config_file, corpus_file, capsys):
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep", "--config", str(config_file), "--data", str(corpus_file),
                "--axis", "zeta", "--values", "0,0.3", "--out", str(out),
            ]
        )
        assert code == 0
        summary = pd.read_csv(out / "sweep_zeta.csv")
        assert summary["zeta"].tolist() == [0.0, 0.3]
        assert (out / "sweep_zeta_trials.csv").exists()
        assert "zeta_0.3.mean_test_acc" in parse_output(capsys.readouterr().out)

    def test_fixed_topology(self, tmp_path, trained_run, corpus_file, capsys):
        out = tmp_path / "ft"
        code = main(
            [
                "fixed-topology", "--checkpoint", str(trained_run / "final.ckpt"),
                "--data", str(corpus_file), "--mode", "fresh", "--seeds", "2",
                "--epochs", "0", "--out", str(out),
            ]
        )
        assert code == 0
        frame = pd.read_csv(out / "fixed_topology.csv")
        assert len(frame) == 2
        assert parse_output(capsys.readouterr().out)["mode"] == "fresh"
