import json
from unittest.mock import patch

import pytest

from app.services.experiments import read_results, rerun_record
from app.utils.exceptions import PersistenceError
from scripts.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTestCommand:
    """Test suite for the test command"""

    def test_noiseless_exact_uniform(self, capsys):
        code, out, _ = run(capsys, "test", "--tester", "simple", "--k", "4", "--m", "400",
                           "--noiseless", "--instance", "exact-uniform", "--seed", "1")
        assert code == 0
        payload = json.loads(out)
        assert payload["verdict"] == "uniform"
        assert payload["seed"] == 1
        assert payload["samples_consumed"] == 400

    def test_same_seed_same_output(self, capsys):
        argv = ("test", "--k", "16", "--m", "500", "--instance", "paninski-far", "--seed", "42")
        _, first, _ = run(capsys, *argv)
        _, second, _ = run(capsys, *argv)
        assert first == second

    def test_drawn_seed_is_reported(self, capsys):
        code, out, err = run(capsys, "test", "--k", "8", "--m", "50")
        assert code == 0
        seed_line = next(line for line in err.splitlines() if line.startswith("seed: "))
        assert json.loads(out)["seed"] == int(seed_line.split()[1])

    @patch("scripts.cli.draw_entropy_seed")
    def test_entropy_seed_is_used(self, mock_draw, capsys):
        mock_draw.return_value = 77
        code, out, err = run(capsys, "test", "--k", "8", "--m", "50")
        assert code == 0
        mock_draw.assert_called_once()
        assert "seed: 77" in err
        assert json.loads(out)["seed"] == 77

    def test_repetitions(self, capsys):
        code, out, _ = run(capsys, "test", "--k", "4", "--m", "400", "--noiseless",
                           "--instance", "exact-uniform", "--repetitions", "5", "--seed", "2")
        assert code == 0
        assert json.loads(out)["verdict"] == "uniform"

    def test_output_file(self, capsys, tmp_path):
        target = tmp_path / "verdict.json"
        code, out, _ = run(capsys, "test", "--k", "8", "--m", "50", "--seed", "3", "--output", str(target))
        assert code == 0
        assert json.loads(target.read_text()) == json.loads(out)

    def test_out_of_range_alpha(self, capsys):
        code, _, err = run(capsys, "test", "--k", "4", "--m", "10", "--alpha", "1.5", "--seed", "1")
        assert code == 2
        error = json.loads(err.strip().splitlines()[-1])
        assert error["success"] is False
        assert "alpha" in error["message"]

    def test_missing_samples_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "test", "--k", "4", "--m", "10", "--instance", "file",
                         "--samples-file", str(tmp_path / "missing.txt"), "--seed", "1")
        assert code == 3

    def test_short_samples_file(self, capsys, tmp_path):
        samples = tmp_path / "samples.txt"
        samples.write_text("0 1 2 3\n")
        code, _, _ = run(capsys, "test", "--k", "4", "--m", "10", "--instance", "file", "--noiseless",
                         "--samples-file", str(samples), "--seed", "1")
        assert code == 3

    def test_unknown_flag(self, capsys):
        assert main(["test", "--k", "4", "--m", "10", "--bogus", "1"]) == 2


class TestExperimentCommands:
    """Test suite for power, complexity, curve and partition commands"""

    def test_power_persists_one_record(self, capsys, tmp_path):
        target = tmp_path / "power.jsonl"
        code, out, _ = run(capsys, "power", "--tester", "constant", "--k", "8", "--m", "64",
                           "--trials", "100", "--seed", "1", "--output", str(target))
        assert code == 0
        assert "POWER ESTIMATE" in out
        records = read_results(target)
        assert len(records) == 1
        assert records[0].p_uniform_given_far == 1.0

    def test_power_record_from_samples_file_replays(self, capsys, tmp_path):
        samples = tmp_path / "samples.txt"
        samples.write_text(" ".join(str(i % 8) for i in range(2000)))
        target = tmp_path / "power.jsonl"
        code, _, _ = run(capsys, "power", "--k", "8", "--m", "100", "--trials", "100", "--instance", "file",
                         "--samples-file", str(samples), "--seed", "1", "--output", str(target))
        assert code == 0
        record = read_results(target)[0]
        assert record.config.samples_file == str(samples)
        again = rerun_record(record)
        assert again.p_uniform_given_far == record.p_uniform_given_far

    def test_point_index_is_persisted(self, capsys, tmp_path):
        target = tmp_path / "power.jsonl"
        code, _, _ = run(capsys, "power", "--tester", "constant", "--k", "8", "--m", "64", "--trials", "100",
                         "--instance", "point-mass", "--point-index", "5", "--seed", "1", "--output", str(target))
        assert code == 0
        assert read_results(target)[0].config.point_index == 5

    def test_complexity_from_config_file(self, capsys, tmp_path):
        conf = tmp_path / "complexity.conf"
        conf.write_text("tester=constant\nk=8\ntrials=100\ntarget_separation=0.2\nm_cap=32\n")
        target = tmp_path / "complexity.jsonl"
        code, out, _ = run(capsys, "complexity", "--config", str(conf), "--seed", "4", "--output", str(target))
        assert code == 0
        assert "NotFound" in out
        assert read_results(target)[0].found is False

    def test_unknown_config_key(self, capsys, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("k=8\ncolour=blue\n")
        code, _, err = run(capsys, "complexity", "--config", str(conf), "--seed", "4")
        assert code == 2
        assert "colour" in err

    def test_curve_with_csv(self, capsys, tmp_path):
        csv_path = tmp_path / "curve.csv"
        code, out, _ = run(capsys, "curve", "--tester", "constant", "--k-values", "16,64", "--trials", "100",
                           "--target-separation", "0", "--seed", "5",
                           "--output", str(tmp_path / "curve.jsonl"), "--csv", str(csv_path))
        assert code == 0
        assert "slope" in out
        assert csv_path.read_text().startswith("k,alpha,epsilon,tester,m_star,slope,stderr")

    def test_partition(self, capsys, tmp_path):
        code, out, _ = run(capsys, "partition-exp", "--k", "16", "--n", "4", "--alpha", "0.3",
                           "--trials", "200", "--seed", "6", "--output", str(tmp_path / "p.jsonl"))
        assert code == 0
        assert "PARTITION DISTANCE" in out

    def test_partition_groups_exceed_domain(self, capsys):
        code, _, _ = run(capsys, "partition-exp", "--k", "8", "--n", "16", "--seed", "6")
        assert code == 2

    @patch("scripts.cli.persist_results")
    def test_unwritable_results(self, mock_persist, capsys):
        mock_persist.side_effect = PersistenceError("could not write results to /readonly/p.jsonl")
        code, _, err = run(capsys, "partition-exp", "--k", "16", "--n", "4", "--trials", "100", "--seed", "6")
        assert code == 3
        assert "PERSISTENCE_ERROR" in err


class TestAuditAndBridgeCommands:
    """Test suite for audit and bridge-demo commands"""

    def test_audit_failure_exit_code(self, capsys):
        code, out, _ = run(capsys, "audit", "--mechanism", "randomized-response", "--epsilon", "1",
                           "--claimed-epsilon", "0.5", "--seed", "3")
        assert code == 1
        assert json.loads(out)["verdict"] == "fail"

    def test_audit_pass(self, capsys):
        code, out, _ = run(capsys, "audit", "--mechanism", "randomized-response", "--epsilon", "1",
                           "--claimed-epsilon", "2", "--seed", "3")
        assert code == 0
        assert json.loads(out)["verdict"] == "pass"

    def test_noiseless_audit_refused(self, capsys):
        code, _, _ = run(capsys, "audit", "--mechanism", "simple-pan-state", "--stream-a", "0,1",
                         "--stream-b", "0,2", "--k", "4", "--noiseless", "--seed", "3")
        assert code == 2

    def test_identical_streams(self, capsys):
        code, _, _ = run(capsys, "audit", "--stream-a", "0,1", "--stream-b", "0,1", "--seed", "3")
        assert code == 2

    def test_bridge_demo(self, capsys, tmp_path):
        target = tmp_path / "bridge.json"
        code, out, _ = run(capsys, "bridge-demo", "--protocol", "counter", "--stream", "1,0,1",
                           "--trials", "1000", "--seed", "2", "--output", str(target))
        assert code == 0
        assert "MODEL BRIDGE: counter" in out
        assert json.loads(target.read_text())["output_tv"] == 0.0

    def test_unknown_protocol(self, capsys):
        code, _, _ = run(capsys, "bridge-demo", "--protocol", "nope", "--seed", "2")
        assert code == 2


def test_every_command_has_a_subparser():
    parser = build_parser()
    for command in ("test", "power", "complexity", "curve", "partition-exp", "audit", "bridge-demo"):
        args = parser.parse_args([command])
        assert args.command == command


@pytest.mark.parametrize("flag", ["--seed", "--threads", "--output"])
def test_common_flags_are_optional(flag):
    args = build_parser().parse_args(["partition-exp"])
    assert not hasattr(args, flag.lstrip("-"))
