import numpy as np
import pytest

from atcnn.audio import default_synth_spec, write_synth_dataset
from atcnn.checkpoint import load_checkpoint, save_checkpoint
from atcnn.cli import main, parse_config
from atcnn.errors import CheckpointError, ConfigurationError
from atcnn.model import build_model, desk_profile, paper_profile


def _write_config(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = parse_config(_write_config(tmp_path, ""))
        assert cfg.learning_rate == 0.001
        assert cfg.epochs == 100
        assert cfg.profile == "desk"

    def test_negative_learning_rate_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError, match="learning_rate"):
            parse_config(_write_config(tmp_path, "learning_rate = -1\n"))

    def test_profile_selection(self, tmp_path):
        cfg = parse_config(_write_config(tmp_path, "profile = desk\n"))
        assert cfg.profile == "desk"

    def test_unknown_key_names_line(self, tmp_path):
        with pytest.raises(ConfigurationError, match=":2"):
            parse_config(_write_config(tmp_path, "epochs = 5\nwindow = 3\n"))

    def test_unparseable_value(self, tmp_path):
        with pytest.raises(ConfigurationError, match="epochs"):
            parse_config(_write_config(tmp_path, "epochs = ten\n"))

    def test_comments_and_blanks_ignored(self, tmp_path):
        cfg = parse_config(_write_config(tmp_path, "# comment\n\nseed = 4\n"))
        assert cfg.seed == 4


class TestCheckpoint:
    def _random_segments(self, cfg, n, seed=0):
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n, cfg.frames_per_segment, cfg.frame_length))

    def test_round_trip_bitwise_predictions(self, tmp_path):
        cfg = desk_profile()
        model = build_model(cfg, seed=5)
        # make running stats non-trivial so the buffers matter
        model.forward_batch(self._random_segments(cfg, 2, seed=1), train=True)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path, seed=5, epoch=3)
        loaded, meta = load_checkpoint(path)
        assert meta == {"seed": 5, "epoch": 3}
        xs = self._random_segments(cfg, 3, seed=2)
        for x in xs:
            assert np.array_equal(model.forward_segment(x), loaded.forward_segment(x))

    def test_truncated_file_rejected(self, tmp_path):
        model = build_model(desk_profile(), seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:-1])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        model = build_model(desk_profile(), seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        data = path.read_bytes()
        path.write_bytes(b"XXXXXXXX" + data[8:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_profile_mismatch_names_tensor(self, tmp_path):
        model = build_model(desk_profile(), seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(CheckpointError, match="tensor"):
            load_checkpoint(path, config=paper_profile())


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("data")
    cfg = desk_profile()
    spec = default_synth_spec(sample_rate=cfg.sample_rate, counts=(3, 3, 3), seed=0)
    write_synth_dataset(spec, data_dir)
    return data_dir


class TestCommands:
    def test_resources_paper_reproduces_reference_rows(self, capsys):
        assert main(["resources", "--profile", "paper"]) == 0
        out = capsys.readouterr().out
        for macs, params in ((11520, 832), (122880, 8320), (1920, 2048), (12800, 12900)):
            assert any(str(macs) in line and str(params) in line
                       for line in out.splitlines()), (macs, params)
        assert "91.0%" in out and "88.0%" in out

    def test_trace_paper_matches_reference_stages(self, capsys):
        assert main(["trace", "--profile", "paper"]) == 0
        out = capsys.readouterr().out
        for shape in ("800x100x1", "776x98x64", "388x49x64", "364x47x128",
                      "182x23x128", "158x21x256", "79x10x256", "55x8x512",
                      "27x4x512", "3x2x512", "1x1x512", "2176x1", "40x64"):
            assert shape in out, shape

    def test_gradcheck_desk(self, capsys):
        assert main(["gradcheck", "--profile", "desk", "--seed", "1"]) == 0
        assert "max relative gradient error" in capsys.readouterr().out

    def test_synth_writes_dataset(self, tmp_path, capsys):
        out_dir = tmp_path / "synth"
        assert main(["synth", "--out", str(out_dir), "--seed", "3"]) == 0
        assert (out_dir / "manifest.txt").exists()
        assert len(list(out_dir.glob("*.wav"))) == 60

    def test_train_eval_round_trip(self, small_dataset, tmp_path, capsys):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("epochs = 2\nbatch_size = 4\n")
        out_dir = tmp_path / "run1"
        rc = main(["train", "--data", str(small_dataset), "--out", str(out_dir),
                   "--config", str(cfg_path), "--seed", "1"])
        train_out = capsys.readouterr().out
        assert rc == 0
        ckpt = out_dir / "atcnn.ckpt"
        stats = out_dir / "stats.tsv"
        assert ckpt.exists() and stats.exists()
        stat_lines = stats.read_text().strip().splitlines()
        assert stat_lines[0].split("\t") == ["epoch", "loss", "train_acc",
                                             "test_acc", "seconds"]
        assert len(stat_lines) == 3  # header + 2 epochs
        final_test_acc = stat_lines[-1].split("\t")[3]

        rc = main(["eval", "--checkpoint", str(ckpt), "--data", str(small_dataset),
                   "--out", str(out_dir), "--seed", "1", "--histograms"])
        eval_out = capsys.readouterr().out
        assert rc == 0
        assert f"test_accuracy={final_test_acc}" in eval_out
        for artifact in ("metrics.txt", "metrics.kv", "confusion.tsv", "histograms.tsv"):
            assert (out_dir / artifact).exists(), artifact

        # rerun with the same seed: identical artifacts apart from timing
        out_dir2 = tmp_path / "run2"
        assert main(["train", "--data", str(small_dataset), "--out", str(out_dir2),
                     "--config", str(cfg_path), "--seed", "1"]) == 0
        capsys.readouterr()

        def strip_seconds(path):
            return ["\t".join(line.split("\t")[:4]) for line in path.read_text().splitlines()]

        assert strip_seconds(stats) == strip_seconds(out_dir2 / "stats.tsv")
        assert ckpt.read_bytes() == (out_dir2 / "atcnn.ckpt").read_bytes()

    def test_eval_without_checkpoint_fails(self, small_dataset, capsys):
        assert main(["eval", "--data", str(small_dataset)]) == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_unknown_subcommand_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2

    def test_unknown_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["trace", "--wibble"])
        assert exc.value.code == 2

    def test_missing_data_reports_error(self, capsys):
        assert main(["train", "--out", "/tmp/nowhere"]) == 1
        assert "data" in capsys.readouterr().err
