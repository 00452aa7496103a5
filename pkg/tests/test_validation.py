import pytest

from app.config import settings
from app.utils.exceptions import ConfigError
from app.utils.validation import COMMAND_DEFAULTS, RunConfigValidator


class TestRunConfigValidator:
    """Test suite for RunConfigValidator"""

    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("# curve run\nTESTER=pan\nk_values=64,256,1024\nalpha=0.25\nempty=\n")
        values = RunConfigValidator.parse_config_file(str(path))
        assert values == {"tester": "pan", "k_values": "64,256,1024", "alpha": "0.25"}

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError) as exc_info:
            RunConfigValidator.parse_config_file(str(tmp_path / "absent.conf"))
        assert exc_info.value.exit_code == 2

    def test_merge_precedence(self):
        merged = RunConfigValidator.merge("test", {"alpha": "0.3", "k": "8"}, {"alpha": 0.2, "m": None})
        assert merged["alpha"] == 0.2
        assert merged["k"] == "8"
        assert merged["tester"] == COMMAND_DEFAULTS["test"]["tester"]
        assert "m" not in merged

    def test_validate_coerces_file_strings(self):
        config = RunConfigValidator.validate("test", {"k": "8", "m": "100", "alpha": "0.25", "noiseless": "true"})
        assert config.k == 8
        assert config.alpha == 0.25
        assert config.noiseless is True

    def test_unknown_keys(self):
        with pytest.raises(ConfigError) as exc_info:
            RunConfigValidator.validate("partition-exp", {"k": 64, "n": 8, "tester": "simple"})
        assert exc_info.value.details["unknown"] == ["tester"]

    def test_missing_required_keys(self):
        with pytest.raises(ConfigError, match="m"):
            RunConfigValidator.validate("power", {"k": 64})

    @pytest.mark.parametrize("key, value", [
        ("alpha", 1.5),
        ("alpha", 0.0),
        ("epsilon", -1.0),
        ("k", 1),
        ("m", 0),
    ])
    def test_out_of_range_values(self, key, value):
        values = {"k": 16, "m": 100, key: value}
        with pytest.raises(ConfigError) as exc_info:
            RunConfigValidator.validate("test", values)
        assert exc_info.value.details[0]["key"] == key

    def test_list_coercion(self):
        config = RunConfigValidator.validate("curve", {"k_values": "64, 256,1024"})
        assert config.k_values == [64, 256, 1024]
        with pytest.raises(ConfigError):
            RunConfigValidator.validate("curve", {"k_values": "64,abc"})

    def test_k_values_must_increase(self):
        with pytest.raises(ConfigError):
            RunConfigValidator.validate("curve", {"k_values": "256,64"})

    @pytest.mark.parametrize("command, values", [
        ("test", {"k": 8, "m": 10, "tester": "magic"}),
        ("test", {"k": 8, "m": 10, "instance": "zipf"}),
        ("audit", {"mechanism": "gaussian"}),
        ("bridge-demo", {"protocol": "nope"}),
    ])
    def test_unknown_choices(self, command, values):
        with pytest.raises(ConfigError):
            RunConfigValidator.validate(command, values)

    def test_file_instance_needs_samples(self):
        with pytest.raises(ConfigError):
            RunConfigValidator.validate("test", {"k": 8, "m": 10, "instance": "file"})

    def test_partition_groups_bounded_by_domain(self):
        with pytest.raises(ConfigError):
            RunConfigValidator.validate("partition-exp", {"k": 8, "n": 16})

    def test_hyphenated_keys_normalized(self):
        config = RunConfigValidator.validate("audit", {"claimed-epsilon": 0.5, "stream-a": "0,1", "stream-b": "1,1"})
        assert config.claimed_epsilon == 0.5
        assert config.stream_a == [0, 1]

    def test_default_output(self):
        assert RunConfigValidator.default_output("power").endswith("power.jsonl")
        assert RunConfigValidator.default_output("power").startswith(settings.results_dir)
        assert RunConfigValidator.default_output("test") is None
