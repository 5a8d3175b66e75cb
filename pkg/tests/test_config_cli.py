import numpy as np
import pytest

import bwnet.cli as cli
from bwnet.config import RunConfig, load_config, parse_config_text, resolved_config_text
from bwnet.errors import ConfigError, NumericsError
from bwnet.layers import MODE_BINARY, forward_network
from bwnet.model_io import load_model

TINY_CONFIG = """
# smoke-test run
seed = 0
net.depth_blocks = 1
net.channels = 4
net.embedding_dim = 16
train.epochs = 2
train.batch_size = 8
data.num_speakers = 3
data.utterances_per_speaker = 8
data.feature_height = 12
data.feature_width = 12
data.sigma_within = 0.2
data.separation = 1.2
data.time_shift_max = 1
"""


def write_tiny_config(tmp_path, text=TINY_CONFIG):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("trained")
    config = write_tiny_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["train", "--config", str(config), "--out", str(out)])
    assert code == 0
    return out


class TestConfigParsing:
    def test_defaults_round_trip(self):
        config = RunConfig()
        assert parse_config_text(resolved_config_text(config)) == config

    def test_partial_config_keeps_defaults(self):
        config = parse_config_text("train.epochs = 5\nnet.channels = 2,4\n")
        assert config.epochs == 5
        assert config.channels == (2, 4)
        assert config.momentum == RunConfig().momentum

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("train.epoch = 5\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("train.epochs = soon\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_comments_and_blank_lines_ignored(self):
        config = parse_config_text("# hi\n\nseed = 3  # trailing\n")
        assert config.seed == 3

    def test_line_without_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("just words\n")


class TestTrainCommand:
    def test_outputs_written(self, trained_run):
        for name in ("config.resolved.cfg", "metrics.log", "checkpoint.bwn",
                     "model.bwn", "utterances.bin", "utterances.idx", "trials.txt"):
            assert (trained_run / name).exists(), name

    def test_metrics_log_one_line_per_epoch(self, trained_run):
        lines = (trained_run / "metrics.log").read_text().strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("epoch=0 lr=0.01 loss=")
        assert "accuracy=" in lines[0]

    def test_resolved_config_is_parseable_and_complete(self, trained_run):
        resolved = load_config(trained_run / "config.resolved.cfg")
        assert resolved.epochs == 2
        assert resolved.out_dir == str(trained_run)

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        config = write_tiny_config(tmp_path, "train.epochz = 2\n")
        assert cli.main(["train", "--config", str(config)]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_zero_epochs_writes_untrained_checkpoint(self, tmp_path):
        config = write_tiny_config(tmp_path, TINY_CONFIG.replace(
            "train.epochs = 2", "train.epochs = 0"))
        out = tmp_path / "out0"
        assert cli.main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "checkpoint.bwn").exists()
        assert (out / "metrics.log").read_text() == ""

    def test_numeric_divergence_exits_3(self, tmp_path, monkeypatch):
        config = write_tiny_config(tmp_path)

        def explode(*args, **kwargs):
            raise NumericsError("training diverged (loss=nan)")

        monkeypatch.setattr(cli, "train_network", explode)
        assert cli.main(["train", "--config", str(config),
                         "--out", str(tmp_path / "boom")]) == 3

    def test_deterministic_reruns_are_byte_identical(self, tmp_path, trained_run):
        config = write_tiny_config(tmp_path)
        out = tmp_path / "again"
        assert cli.main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "model.bwn").read_bytes() == (trained_run / "model.bwn").read_bytes()
        assert (out / "checkpoint.bwn").read_bytes() == \
            (trained_run / "checkpoint.bwn").read_bytes()
        assert (out / "metrics.log").read_text() == \
            (trained_run / "metrics.log").read_text()


class TestEvalCommand:
    def test_eval_prints_report(self, trained_run, capsys):
        code = cli.main(["eval", "--model", str(trained_run / "model.bwn"),
                         "--trials", str(trained_run / "trials.txt"),
                         "--data", str(trained_run / "utterances.bin")])
        assert code == 0
        out = capsys.readouterr().out
        assert "EER" in out and "minDCF" in out
        assert "eer=" in out and "min_dcf=" in out

    def test_untrained_model_scores_near_chance(self, tmp_path, capsys):
        # with data where speakers are buried in jitter, random embeddings
        # sit near the 0.5 EER of chance
        config = write_tiny_config(tmp_path, TINY_CONFIG.replace(
            "train.epochs = 2", "train.epochs = 0").replace(
            "data.sigma_within = 0.2", "data.sigma_within = 5.0").replace(
            "data.utterances_per_speaker = 8", "data.utterances_per_speaker = 30"))
        out = tmp_path / "untrained"
        assert cli.main(["train", "--config", str(config), "--out", str(out)]) == 0
        capsys.readouterr()
        assert cli.main(["eval", "--model", str(out / "model.bwn"),
                         "--trials", str(out / "trials.txt"),
                         "--data", str(out / "utterances.bin")]) == 0
        printed = capsys.readouterr().out
        eer = float([line for line in printed.splitlines()
                     if line.startswith("eer=")][0].split("=")[1])
        assert abs(eer - 0.5) < 0.15

    def test_corrupted_model_exits_4(self, trained_run, tmp_path, capsys):
        bad = tmp_path / "bad.bwn"
        data = bytearray((trained_run / "model.bwn").read_bytes())
        data[len(data) // 2] ^= 0x55
        bad.write_bytes(bytes(data))
        code = cli.main(["eval", "--model", str(bad),
                         "--trials", str(trained_run / "trials.txt"),
                         "--data", str(trained_run / "utterances.bin")])
        assert code == 4


class TestCompressCommand:
    def test_compress_matches_train_packed_output(self, trained_run, tmp_path, capsys):
        out = tmp_path / "packed.bwn"
        code = cli.main(["compress", "--model", str(trained_run / "checkpoint.bwn"),
                         "--out", str(out)])
        assert code == 0
        assert out.read_bytes() == (trained_run / "model.bwn").read_bytes()
        assert "sign-bit ratio" in capsys.readouterr().out

    def test_compress_preserves_binary_forward(self, trained_run, tmp_path):
        out = tmp_path / "packed.bwn"
        assert cli.main(["compress", "--model", str(trained_run / "checkpoint.bwn"),
                         "--out", str(out)]) == 0
        spec_a, params_a = load_model(trained_run / "checkpoint.bwn")
        spec_b, params_b = load_model(out)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 1, 12, 12)).astype(np.float32)
        in_memory = forward_network(spec_a, params_a, x, MODE_BINARY)
        from_file = forward_network(spec_b, params_b, x, MODE_BINARY)
        assert np.array_equal(in_memory.logits, from_file.logits)

    def test_already_packed_input_exits_2(self, trained_run, tmp_path):
        code = cli.main(["compress", "--model", str(trained_run / "model.bwn"),
                         "--out", str(tmp_path / "x.bwn")])
        assert code == 2


class TestInspectCommand:
    def test_inspect_lists_records(self, trained_run, capsys):
        assert cli.main(["inspect", "--model", str(trained_run / "model.bwn")]) == 0
        out = capsys.readouterr().out
        assert "binary_conv2d" in out
        assert "packed" in out
        assert "0x" in out

    def test_truncated_file_exits_4(self, trained_run, tmp_path):
        stub = tmp_path / "trunc.bwn"
        stub.write_bytes((trained_run / "model.bwn").read_bytes()[:40])
        assert cli.main(["inspect", "--model", str(stub)]) == 4


class TestVerifyCommand:
    def test_conv_equivalence_scope_passes(self, capsys):
        assert cli.main(["verify", "conv-equivalence"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("PASS conv-equivalence")
        assert "max relative deviation" in out

    def test_unknown_scope_rejected(self):
        with pytest.raises(SystemExit):
            cli.main(["verify", "nonsense"])
