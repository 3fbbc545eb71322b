import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from xcnn.cli import _resolve_threads, main
from xcnn.models import build_network, save_checkpoint
from xcnn.synthetic import write_overfit_dataset


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Synthetic dataset plus a manifest written through the CLI."""
    root = tmp_path_factory.mktemp("cli-ws")
    write_overfit_dataset(root / "data", seed=0)
    manifest = root / "manifest.csv"
    assert main(["split", "--data", str(root / "data"), "--seed", "0", "--manifest", str(manifest)]) == 0
    return root


@pytest.fixture(scope="session")
def trained_run(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-run")
    code = main(
        [
            "train", "--arch", "cnn1", "--manifest", str(workspace / "manifest.csv"),
            "--augment", "on", "--seed", "1", "--out", str(out),
            "--epochs1", "2", "--epochs2", "3", "--batch-size", "8",
        ]
    )
    assert code == 0
    return out


class TestSplit:
    def test_counts_printed(self, workspace, capsys):
        manifest2 = workspace / "again.csv"
        assert main(["split", "--data", str(workspace / "data"), "--seed", "0", "--manifest", str(manifest2)]) == 0
        out = capsys.readouterr().out
        assert "train COVID=11 Normal=11 total=22" in out
        assert "test COVID=3 Normal=3 total=6" in out
        assert "val COVID=2 Normal=2 total=4" in out

    def test_same_seed_rerun_identical_bytes(self, workspace):
        a, b = workspace / "m_a.csv", workspace / "m_b.csv"
        assert main(["split", "--data", str(workspace / "data"), "--seed", "5", "--manifest", str(a)]) == 0
        assert main(["split", "--data", str(workspace / "data"), "--seed", "5", "--manifest", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_class_dir_exits_2_naming_it(self, tmp_path, capsys):
        (tmp_path / "COVID").mkdir()
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(tmp_path / "COVID" / "a.png")
        code = main(["split", "--data", str(tmp_path), "--seed", "0", "--manifest", str(tmp_path / "m.csv")])
        assert code == 2
        assert "Normal" in capsys.readouterr().err

    def test_empty_covid_dir_exits_2_naming_it(self, tmp_path, capsys):
        (tmp_path / "COVID").mkdir()
        (tmp_path / "Normal").mkdir()
        code = main(["split", "--data", str(tmp_path), "--seed", "0", "--manifest", str(tmp_path / "m.csv")])
        assert code == 2
        assert "COVID" in capsys.readouterr().err

    def test_full_scale_counts(self, tmp_path, capsys):
        # Empty placeholder files: split only scans paths, it never decodes.
        for label, n in (("COVID", 3616), ("Normal", 10192)):
            d = tmp_path / label
            d.mkdir()
            for i in range(n):
                (d / f"{i:05d}.png").touch()
        code = main(["split", "--data", str(tmp_path), "--seed", "0", "--manifest", str(tmp_path / "m.csv")])
        assert code == 0
        out = capsys.readouterr().out
        assert "train COVID=2531 Normal=7134 total=9665" in out
        assert "test COVID=723 Normal=2038 total=2761" in out
        assert "val COVID=362 Normal=1020 total=1382" in out


class TestTrain:
    def test_override_run_writes_artifacts(self, trained_run):
        assert (trained_run / "history.csv").exists()
        assert (trained_run / "curves.svg").exists()
        assert (trained_run / "config.txt").exists()
        assert (trained_run / "model_final.ckpt").exists()
        history = (trained_run / "history.csv").read_text().strip().split("\n")
        assert len(history) == 6  # header + 5 epochs

    def test_config_echo_contents(self, trained_run):
        config = (trained_run / "config.txt").read_text()
        assert "arch=cnn1" in config
        assert "augment=on" in config
        assert "batch_size=8" in config
        assert "epochs1=2" in config and "epochs2=3" in config
        assert "learning_rate=0.001" in config
        assert "seed=1" in config

    def test_config_file_precedence(self, workspace, tmp_path):
        # File beats built-in defaults; explicit flags beat the file.  A
        # previous run's config.txt echo is a valid --config input.
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs1=1\nepochs2=1\nbatch_size=8\naugment=off\nseed=6\n")
        out = tmp_path / "cfg-run"
        code = main(
            [
                "train", "--arch", "cnn1", "--manifest", str(workspace / "manifest.csv"),
                "--out", str(out), "--config", str(cfg), "--epochs2", "2",
            ]
        )
        assert code == 0
        history = (out / "history.csv").read_text().strip().split("\n")
        assert len(history) == 4  # header + 1 (file) + 2 (flag override)
        echoed = (out / "config.txt").read_text()
        assert "epochs1=1" in echoed and "epochs2=2" in echoed
        assert "augment=off" in echoed and "seed=6" in echoed
        # Round trip: the echo itself works as a config file.
        out2 = tmp_path / "cfg-run2"
        code = main(
            [
                "train", "--arch", "cnn1", "--manifest", str(workspace / "manifest.csv"),
                "--out", str(out2), "--config", str(out / "config.txt"),
            ]
        )
        assert code == 0
        assert (out2 / "history.csv").read_bytes() == (out / "history.csv").read_bytes()

    def test_negative_seed_is_usage_error(self, workspace, capsys):
        code = main(
            [
                "train", "--arch", "cnn1", "--manifest", str(workspace / "manifest.csv"),
                "--out", "/tmp/x", "--seed", "-5",
            ]
        )
        assert code == 2

    def test_unknown_arch_exits_2_listing_valid_ids(self, workspace, capsys):
        code = main(
            ["train", "--arch", "cnn7", "--manifest", str(workspace / "manifest.csv"), "--out", "/tmp/x"]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "cnn1" in err and "cnn3" in err and "cnn4" in err

    def test_outputs_land_only_under_out(self, workspace, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "run-out"
        code = main(
            [
                "train", "--arch", "cnn1", "--manifest", str(workspace / "manifest.csv"),
                "--augment", "off", "--seed", "2", "--out", str(out),
                "--epochs1", "1", "--epochs2", "0", "--batch-size", "8",
            ]
        )
        assert code == 0
        assert list(workdir.iterdir()) == []
        assert (out / "history.csv").exists()

    def test_help_lists_flags_with_defaults(self, capsys):
        assert main(["train", "--help"]) == 0
        out = capsys.readouterr().out
        for fragment in (
            "--epochs1", "--epochs2", "--batch-size", "--lr", "--seed", "--augment", "--threads",
            "(default: 10)", "(default: 50)", "(default: 256)", "(default: 0.001)",
        ):
            assert fragment in out


class TestEvaluate:
    def test_metrics_block_and_listing(self, workspace, trained_run, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(
            [
                "evaluate", "--model", str(trained_run / "model_final.ckpt"),
                "--manifest", str(workspace / "manifest.csv"), "--split", "test", "--out", str(out),
            ]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "split=test size=6" in printed
        for key in ("tp=", "fp=", "fn=", "tn=", "accuracy=", "precision=", "recall=", "f1="):
            assert key in printed
        assert (out / "predictions_test.csv").exists()

    def test_arch_mismatch_exits_2(self, workspace, trained_run, capsys):
        code = main(
            [
                "evaluate", "--model", str(trained_run / "model_final.ckpt"),
                "--manifest", str(workspace / "manifest.csv"), "--arch", "cnn3",
            ]
        )
        assert code == 2
        assert "cnn3" in capsys.readouterr().err

    def test_corrupt_checkpoint_exits_3(self, workspace, trained_run, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        data = bytearray((trained_run / "model_final.ckpt").read_bytes())
        data[50] ^= 0xFF
        bad.write_bytes(bytes(data))
        code = main(
            ["evaluate", "--model", str(bad), "--manifest", str(workspace / "manifest.csv")]
        )
        assert code == 3
        assert "checksum" in capsys.readouterr().err


class TestPredict:
    def test_fresh_cnn1_on_zero_probe(self, tmp_path, capsys):
        ckpt = tmp_path / "fresh.ckpt"
        save_checkpoint(build_network("cnn1", seed=3), ckpt)
        probe = tmp_path / "zero.png"
        Image.fromarray(np.zeros((30, 30), dtype=np.uint8), mode="L").save(probe)
        assert main(["predict", "--model", str(ckpt), "--image", str(probe)]) == 0
        out = capsys.readouterr().out.strip()
        label, pair = out.split()
        assert label in ("COVID", "Normal")
        p_covid = float(pair.removeprefix("p_covid="))
        assert 0.0 < p_covid < 1.0  # the pair (p_covid, 1 - p_covid) sums to 1

    def test_missing_image_exits_2(self, tmp_path, capsys):
        ckpt = tmp_path / "fresh.ckpt"
        save_checkpoint(build_network("cnn1", seed=3), ckpt)
        assert main(["predict", "--model", str(ckpt), "--image", str(tmp_path / "nope.png")]) == 2


class TestGradcheck:
    def test_cnn1_passes_and_prints_report(self, capsys):
        code = main(["gradcheck", "--arch", "cnn1", "--seed", "0", "--max-probes", "8"])
        assert code == 0
        out = capsys.readouterr().out
        lines = [l for l in out.strip().split("\n") if not l.startswith("gradcheck")]
        assert len(lines) == 6  # conv k+b, dense1 w+b, dense2 w+b
        for line in lines:
            assert line.endswith("PASS")
        assert "gradcheck cnn1: PASS" in out


class TestReport:
    def test_regenerates_curves(self, trained_run, tmp_path, capsys):
        out = tmp_path / "curves2.svg"
        assert main(["report", "--history", str(trained_run / "history.csv"), "--out", str(out)]) == 0
        assert out.read_text().count("<polyline") == 4


class TestThreads:
    def test_flag_beats_env_beats_default(self, monkeypatch):
        monkeypatch.setenv("XCNN_THREADS", "3")
        assert _resolve_threads(7) == 7
        assert _resolve_threads(None) == 3
        monkeypatch.delenv("XCNN_THREADS")
        assert _resolve_threads(None) == (os.cpu_count() or 1)

    def test_thread_flag_does_not_change_output_bytes(self, workspace, tmp_path):
        outs = []
        for threads, name in ((1, "t1"), (4, "t4")):
            out = tmp_path / name
            code = main(
                [
                    "train", "--arch", "cnn1", "--manifest", str(workspace / "manifest.csv"),
                    "--augment", "on", "--seed", "4", "--out", str(out),
                    "--epochs1", "1", "--epochs2", "1", "--batch-size", "8",
                    "--threads", str(threads),
                ]
            )
            assert code == 0
            outs.append(out)
        files = [sorted(p.relative_to(o) for p in o.rglob("*") if p.is_file()) for o in outs]
        assert files[0] == files[1]
        for rel in files[0]:
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
