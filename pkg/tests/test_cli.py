import numpy as np
import pytest

from affectkit import config as config_mod
from affectkit import plot as plot_mod
from affectkit.cli import main
from affectkit.config import ConfigError, load_config

SMALL_ARCH = ["--set", "arch.scale=0.125", "--set", "arch.input_side=32",
              "--set", "train.seq_len=8", "--set", "train.batch_size=2"]


def _synth(tmp_path, name="corpus", n=4, seed=0):
    out = tmp_path / name
    rc = main(["synth", "--out", str(out), "--utterances", str(n),
               "--side", "32", "--seed", str(seed),
               "--frames-min", "8", "--frames-max", "12"])
    assert rc == 0
    return out / "manifest.csv"


def _train(tmp_path, manifest, name="run", epochs=1, seed=1):
    out = tmp_path / name
    rc = main(["train", "--train", str(manifest), "--val", str(manifest),
               "--out", str(out), "--epochs", str(epochs),
               "--seed", str(seed)] + SMALL_ARCH)
    assert rc == 0
    return out


class TestConfig:
    def test_defaults_complete(self):
        cfg = load_config()
        spec = config_mod.arch_spec(cfg)
        assert spec.backbone == "vgg" and spec.input_side == 96
        tc = config_mod.train_config(cfg)
        assert tc.learning_rate == 0.001 and tc.clip_norm == 5.0

    def test_file_values_override_defaults(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[train]\nepochs = 3\n[arch]\nscale = 0.5\n")
        cfg = load_config(p)
        assert cfg["train"]["epochs"] == "3"
        assert cfg["arch"]["scale"] == "0.5"
        # untouched keys keep their defaults
        assert cfg["train"]["optimizer"] == "adam"

    def test_cli_overrides_beat_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[train]\nepochs = 3\n")
        cfg = load_config(p, {("train", "epochs"): "7"})
        assert cfg["train"]["epochs"] == "7"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[train]\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="momentum"):
            load_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[tuning]\nx = 1\n")
        with pytest.raises(ConfigError, match="tuning"):
            load_config(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "ghost.cfg")

    def test_bad_value_reported_with_key(self):
        cfg = load_config(None, {("train", "learning_rate"): "fast"})
        with pytest.raises(ConfigError, match="learning_rate"):
            config_mod.train_config(cfg)

    def test_effective_config_written(self, tmp_path):
        cfg = load_config()
        path = config_mod.write_effective(cfg, tmp_path)
        text = path.read_text()
        assert "[train]" in text and "learning_rate=0.001" in text


class TestExitCodes:
    def test_usage_error_on_bad_override(self, tmp_path, capsys):
        manifest = _synth(tmp_path)
        rc = main(["train", "--train", str(manifest), "--val", str(manifest),
                   "--out", str(tmp_path / "r"), "--set", "train.momentum=0.9"])
        assert rc == 2
        assert "config error" in capsys.readouterr().err

    def test_usage_error_on_malformed_set(self, tmp_path):
        manifest = _synth(tmp_path)
        rc = main(["train", "--train", str(manifest), "--val", str(manifest),
                   "--out", str(tmp_path / "r"), "--set", "epochs"])
        assert rc == 2

    def test_data_error_on_missing_manifest(self, tmp_path, capsys):
        rc = main(["train", "--train", str(tmp_path / "nope.csv"),
                   "--val", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "r")] + SMALL_ARCH)
        assert rc == 3
        assert "data error" in capsys.readouterr().err

    def test_data_error_on_corrupt_checkpoint(self, tmp_path):
        manifest = _synth(tmp_path)
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        rc = main(["predict", "--checkpoint", str(bad), "--manifest",
                   str(manifest), "--out", str(tmp_path / "t.bin")] + SMALL_ARCH)
        assert rc == 3

    def test_numeric_error_exit_code(self, tmp_path, monkeypatch):
        manifest = _synth(tmp_path)
        from affectkit import trainer as trainer_mod
        from affectkit.tensor import Tensor
        monkeypatch.setattr(trainer_mod, "ccc_loss_joint",
                            lambda *a, **kw: Tensor(float("nan")))
        rc = main(["train", "--train", str(manifest), "--val", str(manifest),
                   "--out", str(tmp_path / "r"), "--epochs", "1"] + SMALL_ARCH)
        assert rc == 4

    def test_help_lists_defaults(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["synth", "--help"])
        assert e.value.code == 0
        out = capsys.readouterr().out
        assert "default 16" in out and "default 32" in out


class TestPipeline:
    def test_synth_deterministic(self, tmp_path):
        m1 = _synth(tmp_path, "c1", seed=5)
        m2 = _synth(tmp_path, "c2", seed=5)
        assert m1.read_bytes() == m2.read_bytes()
        for sub in sorted(p.name for p in m1.parent.iterdir() if p.is_dir()):
            f1 = m1.parent / sub / "frames.bin"
            f2 = m2.parent / sub / "frames.bin"
            assert f1.read_bytes() == f2.read_bytes()

    def test_full_chain(self, tmp_path, capsys):
        manifest = _synth(tmp_path)
        run = _train(tmp_path, manifest)
        assert (run / "best.ckpt").exists()
        assert (run / "config.effective").exists()

        tracks = tmp_path / "tracks.bin"
        rc = main(["predict", "--checkpoint", str(run / "best.ckpt"),
                   "--manifest", str(manifest), "--out", str(tracks)]
                  + SMALL_ARCH)
        assert rc == 0

        preds = tmp_path / "preds.csv"
        rc = main(["postprocess", "--tracks", str(tracks), "--gold",
                   str(manifest), "--out", str(preds)])
        assert rc == 0
        assert preds.read_text().startswith("id,valence,arousal\n")

        capsys.readouterr()
        rc = main(["eval", "--preds", str(preds), "--gold", str(manifest),
                   "--out", str(tmp_path / "report")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "ccc_valence=" in out and "ccc_arousal=" in out
        assert (tmp_path / "report.txt").exists()
        assert (tmp_path / "report.json").exists()

        svg = tmp_path / "report.svg"
        rc = main(["plot", "--log", str(run / "train.log"), "--out", str(svg),
                   "--preds", str(preds), "--gold", str(manifest)])
        assert rc == 0
        assert svg.read_text().startswith("<svg ")

    def test_training_deterministic_end_to_end(self, tmp_path):
        manifest = _synth(tmp_path)
        r1 = _train(tmp_path, manifest, "r1", seed=7)
        r2 = _train(tmp_path, manifest, "r2", seed=7)
        assert (r1 / "last.ckpt").read_bytes() == (r2 / "last.ckpt").read_bytes()
        assert (r1 / "train.log").read_text() == (r2 / "train.log").read_text()

    def test_postprocess_without_gold(self, tmp_path):
        manifest = _synth(tmp_path)
        run = _train(tmp_path, manifest)
        tracks = tmp_path / "tracks.bin"
        main(["predict", "--checkpoint", str(run / "best.ckpt"),
              "--manifest", str(manifest), "--out", str(tracks)] + SMALL_ARCH)
        preds = tmp_path / "preds.csv"
        rc = main(["postprocess", "--tracks", str(tracks), "--out", str(preds),
                   "--window-valence", "5", "--agg", "mean"])
        assert rc == 0
        assert len(preds.read_text().splitlines()) == 5  # header + 4


class TestPlot:
    def test_log_round_trip(self):
        lines = ["step=1 loss=0.900000", "step=2 loss=0.500000",
                 "epoch=1 ccc_v=0.100000 ccc_a=0.200000", ""]
        steps, epochs = plot_mod.parse_log_lines(lines)
        assert steps == [(1, 0.9), (2, 0.5)]
        assert epochs == [(1, 0.1, 0.2)]

    def test_svg_embeds_data_extents(self):
        svg = plot_mod.render_report([(1, 0.9), (2, 0.4)],
                                     [(1, 0.1, 0.3), (2, 0.2, 0.5)])
        assert 'data-xmin="1"' in svg and 'data-xmax="2"' in svg
        assert 'data-ymin="0.4"' in svg and 'data-ymax="0.9"' in svg
        assert svg.count("<polyline") == 3

    def test_svg_deterministic(self):
        args = ([(1, 0.9)], [(1, 0.1, 0.3)],
                {"valence": [(0.1, 0.2)], "arousal": [(0.5, 0.4)]})
        assert plot_mod.render_report(*args) == plot_mod.render_report(*args)

    def test_empty_log_rejected(self):
        with pytest.raises(ValueError):
            plot_mod.render_report([], [])

    def test_cli_plot_empty_log_is_data_error(self, tmp_path):
        log = tmp_path / "train.log"
        log.write_text("\n")
        rc = main(["plot", "--log", str(log), "--out", str(tmp_path / "o.svg")])
        assert rc == 3
