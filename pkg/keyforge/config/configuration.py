import os
import sys

from typing import Callable, Mapping, Optional
from keyforge.constant import *
from keyforge.logger import logging
from keyforge.entity.config_entity import BenchConfig, DecryptConfig, ForgeConfig, ReportConfig, ScanConfig
from keyforge.exception import InvalidConfigError, KeyforgeException
from keyforge.utils.utils import parse_bool, parse_size, read_yaml


class Configuration:
    """
    Resolves component configs from, lowest to highest precedence: built-in defaults,
    the yaml config file, KEYFORGE_* environment variables and explicit overrides
    (command-line flags). Override values of None are ignored.
    """

    def __init__(self,
                 config_file_path: str = CONFIG_FILE_PATH,
                 current_time_stamp: str = CURRENT_TIME_STAMP,
                 environ: Optional[Mapping[str, str]] = None):
        try:
            self.config_file_path = config_file_path
            self.current_time_stamp = current_time_stamp
            self.environ = os.environ if environ is None else environ
            if config_file_path and os.path.exists(config_file_path):
                self.config_info = read_yaml(config_file_path)
            else:
                logging.info(f"Config file [{config_file_path}] not found, using built-in defaults")
                self.config_info = {}
            if not isinstance(self.config_info, dict):
                raise InvalidConfigError(f"config file {config_file_path} must hold a mapping")
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def _section(self, key: str) -> dict:
        section = self.config_info.get(key) or {}
        if not isinstance(section, dict):
            raise InvalidConfigError(f"config section {key} must be a mapping")
        return dict(section)

    def _env(self, name: str, cast: Callable):
        raw = self.environ.get(ENV_PREFIX + name)
        if raw is None or raw == "":
            return None
        try:
            return cast(raw)
        except (TypeError, ValueError) as e:
            raise InvalidConfigError(f"{ENV_PREFIX}{name}={raw!r} is not valid: {e}") from e

    @staticmethod
    def _merge(values: dict, *layers: Optional[dict]) -> dict:
        for layer in layers:
            for key, value in (layer or {}).items():
                if value is not None:
                    values[key] = value
        return values

    def get_scan_config(self, overrides: Optional[dict] = None) -> ScanConfig:
        try:
            scan_info = self._section(ARTEFACT_SCAN_CONFIG_KEY)
            env = {ENTROPY_THRESHOLD_KEY: self._env(ENV_THRESHOLD, float),
                   SWEEP_WINDOW_KEY: self._env(ENV_SWEEP_WINDOW, int),
                   SWEEP_STRIDE_KEY: self._env(ENV_SWEEP_STRIDE, int),
                   LAYOUT_PREFERENCE_KEY: self._env(ENV_LAYOUT, str),
                   PARALLEL_KEY: self._env(ENV_PARALLEL, int)}
            values = self._merge({}, scan_info, env, overrides)
            scan_config = ScanConfig(
                entropy_threshold=values.get(ENTROPY_THRESHOLD_KEY, DEFAULT_ENTROPY_THRESHOLD),
                sweep_window=values.get(SWEEP_WINDOW_KEY, DEFAULT_SWEEP_WINDOW),
                sweep_stride=values.get(SWEEP_STRIDE_KEY, DEFAULT_SWEEP_STRIDE),
                layout_preference=values.get(LAYOUT_PREFERENCE_KEY, "auto"),
                parallel=values.get(PARALLEL_KEY, 1))
            logging.info(f"Artefact scan config: {scan_config}")
            return scan_config
        except KeyforgeException:
            raise
        except Exception as e:
            raise InvalidConfigError(f"invalid artefact scan config: {e}") from e

    def get_decrypt_config(self, overrides: Optional[dict] = None) -> DecryptConfig:
        try:
            decrypt_info = self._section(DECRYPT_ANALYSIS_CONFIG_KEY)
            env = {SEQ_SEARCH_LIMIT_KEY: self._env(ENV_SEQ_LIMIT, int),
                   VERIFY_MAC_KEY: self._env(ENV_VERIFY_MAC, parse_bool),
                   PARALLEL_KEY: self._env(ENV_PARALLEL, int)}
            values = self._merge({}, decrypt_info, env, overrides)
            decrypt_config = DecryptConfig(
                seq_search_limit=values.get(SEQ_SEARCH_LIMIT_KEY, DEFAULT_SEQ_SEARCH_LIMIT),
                printable_threshold=values.get(PRINTABLE_THRESHOLD_KEY, DEFAULT_PRINTABLE_THRESHOLD),
                verify_mac=parse_bool(values.get(VERIFY_MAC_KEY, False)),
                byte_order_fallback=parse_bool(values.get(BYTE_ORDER_FALLBACK_KEY, True)),
                parallel=values.get(PARALLEL_KEY, 1))
            logging.info(f"Decrypt analysis config: {decrypt_config}")
            return decrypt_config
        except KeyforgeException:
            raise
        except Exception as e:
            raise InvalidConfigError(f"invalid decrypt analysis config: {e}") from e

    def get_forge_config(self, overrides: Optional[dict] = None) -> ForgeConfig:
        try:
            forge_info = self._section(FIXTURE_FORGE_CONFIG_KEY)
            env = {FORGE_SEED_KEY: self._env(ENV_SEED, int)}
            values = self._merge({}, forge_info, env, overrides)
            forge_config = ForgeConfig(
                protocol=values.get(FORGE_PROTOCOL_KEY, DEFAULT_FORGE_PROTOCOL),
                image_size=parse_size(values.get(FORGE_IMAGE_SIZE_KEY, DEFAULT_FORGE_IMAGE_SIZE)),
                noise=values.get(FORGE_NOISE_KEY, DEFAULT_FORGE_NOISE),
                file_size=parse_size(values.get(FORGE_FILE_SIZE_KEY, DEFAULT_FORGE_FILE_SIZE)),
                strip_constant=parse_bool(values.get(FORGE_STRIP_CONSTANT_KEY, False)),
                overwrite=values.get(FORGE_OVERWRITE_KEY, "none"),
                tls_ordinal=values.get(FORGE_TLS_ORDINAL_KEY, 0),
                capture_format=values.get(FORGE_CAPTURE_FORMAT_KEY, "pcap"),
                placements=values.get(FORGE_PLACEMENTS_KEY, ()),
                seed=values.get(FORGE_SEED_KEY, DEFAULT_SEED),
                output_dir=values.get(FORGE_OUTPUT_DIR_KEY, DEFAULT_FORGE_OUTPUT_DIR))
            logging.info(f"Fixture forge config: {forge_config}")
            return forge_config
        except KeyforgeException:
            raise
        except Exception as e:
            raise InvalidConfigError(f"invalid fixture forge config: {e}") from e

    def get_bench_config(self, overrides: Optional[dict] = None) -> BenchConfig:
        try:
            bench_info = self._section(SCAN_BENCHMARK_CONFIG_KEY)
            env = {FORGE_SEED_KEY: self._env(ENV_SEED, int)}
            values = self._merge({}, bench_info, env, overrides)
            bench_config = BenchConfig(
                sizes=[parse_size(size) for size in values.get(BENCH_SIZES_KEY, DEFAULT_BENCH_SIZES)],
                repetitions=values.get(BENCH_REPETITIONS_KEY, DEFAULT_BENCH_REPETITIONS),
                sweep=parse_bool(values.get(BENCH_SWEEP_KEY, False)),
                seed=values.get(FORGE_SEED_KEY, DEFAULT_SEED))
            logging.info(f"Scan benchmark config: {bench_config}")
            return bench_config
        except KeyforgeException:
            raise
        except Exception as e:
            raise InvalidConfigError(f"invalid scan benchmark config: {e}") from e

    def get_report_config(self, overrides: Optional[dict] = None) -> ReportConfig:
        report_info = self._section(REPORT_CONFIG_KEY)
        env = {REPORT_FORMAT_KEY: self._env(ENV_FORMAT, str)}
        values = self._merge({}, report_info, env, overrides)
        output_format = values.get(REPORT_FORMAT_KEY, "json")
        if output_format not in REPORT_FORMATS:
            raise InvalidConfigError(f"unknown report format: {output_format}")
        report_config = ReportConfig(output_format=output_format, output_path=values.get("output_path"))
        logging.info(f"Report config: {report_config}")
        return report_config

    def get_run_history_file(self) -> Optional[str]:
        pipeline_info = self._section(PIPELINE_CONFIG_KEY)
        return pipeline_info.get(RUN_HISTORY_FILE_KEY, DEFAULT_RUN_HISTORY_FILE) or None
