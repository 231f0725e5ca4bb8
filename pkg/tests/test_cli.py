import struct

from click.testing import CliRunner

from scei.cli import main

CONFIG = """
scheme = scei
dataset = synthetic
synthetic_classes = 6
synthetic_per_class = 400
synthetic_input_dim = 8
nodes = 4
samples_per_node = 120
labels_per_node = 3
hidden = 12,12
rounds = 2
batch_size = 8
local_epochs = 1
learning_rate = 0.05
seed = 3
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG + extra)
    return path


class TestRunCommand:
    def test_run_writes_metrics_and_ledger(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "metrics.csv"
        dump = tmp_path / "ledger.bin"
        result = CliRunner().invoke(
            main,
            ["run", "--config", str(cfg), "--out", str(out), "--ledger-out", str(dump)],
        )
        assert result.exit_code == 0, result.output
        assert "final round mean accuracy" in result.output
        lines = out.read_text().splitlines()
        assert lines[0].startswith("round,node_id,accuracy")
        assert len(lines) == 1 + 2 * 4
        assert dump.stat().st_size > 0

    def test_scheme_and_rounds_overrides(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "metrics.csv"
        result = CliRunner().invoke(
            main,
            ["run", "--config", str(cfg), "--scheme", "local", "--rounds", "3", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert "local: 3 rounds" in result.output
        assert len(out.read_text().splitlines()) == 1 + 3 * 4


class TestVerifyLedgerCommand:
    def test_intact_and_tampered(self, tmp_path):
        cfg = write_config(tmp_path)
        dump = tmp_path / "ledger.bin"
        runner = CliRunner()
        assert runner.invoke(
            main, ["run", "--config", str(cfg), "--ledger-out", str(dump)]
        ).exit_code == 0

        ok = runner.invoke(main, ["verify-ledger", str(dump)])
        assert ok.exit_code == 0
        assert ok.output.startswith("ok:")

        blob = bytearray(dump.read_bytes())
        # flip one byte inside the third record's frame body
        offset = 0
        for _ in range(2):
            (length,) = struct.unpack_from("<I", blob, offset)
            offset += 4 + length
        blob[offset + 10] ^= 0xFF
        dump.write_bytes(bytes(blob))
        bad = runner.invoke(main, ["verify-ledger", str(dump)])
        assert bad.exit_code == 1
        assert "TAMPERED" in bad.output
        assert "index 2" in bad.output


class TestSummarizeCommand:
    def test_summarize_with_threshold(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "metrics.csv"
        runner = CliRunner()
        assert runner.invoke(
            main, ["run", "--config", str(cfg), "--out", str(out)]
        ).exit_code == 0
        result = runner.invoke(main, ["summarize", str(out), "--threshold", "0.0"])
        assert result.exit_code == 0, result.output
        lines = result.output.splitlines()
        assert lines[0] == "round,mean_accuracy,variance"
        assert len(lines) == 1 + 2 + 1
        assert "reached at round 1" in lines[-1]
