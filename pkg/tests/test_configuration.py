import pytest

from keyforge.config.configuration import Configuration
from keyforge.constant import DEFAULT_BENCH_SIZES, DEFAULT_ENTROPY_THRESHOLD, DEFAULT_SEQ_SEARCH_LIMIT
from keyforge.exception import InvalidConfigError
from keyforge.utils.utils import write_yaml


@pytest.fixture
def config_file(tmp_path):
    path = str(tmp_path / "config.yaml")
    write_yaml(path, {"artefact_scan_config": {"entropy_threshold": 5.0, "layout_preference": "orig"},
                      "decrypt_analysis_config": {"seq_search_limit": 8, "verify_mac": "yes"},
                      "fixture_forge_config": {"image_size": "64K", "noise": "zeros"},
                      "scan_benchmark_config": {"sizes": ["4K", 8192], "repetitions": 2},
                      "report_config": {"format": "text"},
                      "pipeline_config": {"run_history_file": "history.csv"}})
    return path


def test_defaults_without_config_file(tmp_path):
    config = Configuration(config_file_path=str(tmp_path / "absent.yaml"), environ={})
    assert config.get_scan_config().entropy_threshold == DEFAULT_ENTROPY_THRESHOLD
    assert config.get_decrypt_config().seq_search_limit == DEFAULT_SEQ_SEARCH_LIMIT
    assert config.get_bench_config().sizes == DEFAULT_BENCH_SIZES
    assert config.get_report_config().output_format == "json"
    assert config.get_run_history_file() == "runs/run_history.csv"


def test_file_values(config_file):
    config = Configuration(config_file_path=config_file, environ={})
    scan = config.get_scan_config()
    assert (scan.entropy_threshold, scan.layout_preference) == (5.0, "orig")
    decrypt = config.get_decrypt_config()
    assert (decrypt.seq_search_limit, decrypt.verify_mac) == (8, True)
    forge = config.get_forge_config()
    assert (forge.image_size, forge.noise) == (65536, "zeros")
    assert config.get_bench_config().sizes == (4096, 8192)
    assert config.get_report_config().output_format == "text"
    assert config.get_run_history_file() == "history.csv"


def test_precedence_file_env_override(config_file):
    environ = {"KEYFORGE_THRESHOLD": "6", "KEYFORGE_SEQ_LIMIT": "16", "KEYFORGE_FORMAT": "json",
               "KEYFORGE_SEED": "42"}
    config = Configuration(config_file_path=config_file, environ=environ)
    assert config.get_scan_config().entropy_threshold == 6.0
    assert config.get_scan_config({"entropy_threshold": 7.0}).entropy_threshold == 7.0
    assert config.get_scan_config({"entropy_threshold": None}).entropy_threshold == 6.0
    assert config.get_decrypt_config().seq_search_limit == 16
    assert config.get_report_config().output_format == "json"
    assert config.get_forge_config().seed == 42
    assert config.get_forge_config({"seed": 1}).seed == 1


@pytest.mark.parametrize("environ", [
    {"KEYFORGE_THRESHOLD": "high"},
    {"KEYFORGE_THRESHOLD": "0"},
    {"KEYFORGE_LAYOUT": "salsa"},
    {"KEYFORGE_SWEEP_STRIDE": "0"},
])
def test_invalid_scan_environment(environ, tmp_path):
    config = Configuration(config_file_path=str(tmp_path / "absent.yaml"), environ=environ)
    with pytest.raises(InvalidConfigError):
        config.get_scan_config()


def test_invalid_values(tmp_path):
    config = Configuration(config_file_path=str(tmp_path / "absent.yaml"), environ={"KEYFORGE_VERIFY_MAC": "maybe"})
    with pytest.raises(InvalidConfigError):
        config.get_decrypt_config()
    with pytest.raises(InvalidConfigError):
        config.get_forge_config({"image_size": "lots"})
    with pytest.raises(InvalidConfigError):
        config.get_bench_config({"repetitions": 0})
    with pytest.raises(InvalidConfigError):
        config.get_report_config({"format": "xml"})


def test_config_file_must_be_a_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(InvalidConfigError):
        Configuration(config_file_path=str(path), environ={})
