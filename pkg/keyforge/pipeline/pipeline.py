import os
import sys
import uuid

import pandas as pd

from datetime import datetime
from typing import Callable, List, Optional, Sequence, Tuple
from keyforge.logger import logging
from keyforge.exception import InvalidInputError, KeyforgeException
from keyforge.config.configuration import Configuration
from keyforge.component.artefact_scan import ArtefactScan
from keyforge.component.stream_ingest import StreamIngest
from keyforge.component.fixture_forge import forge_ssh_fixture, forge_tls_fixture
from keyforge.component.scan_benchmark import ScanBenchmark
from keyforge.component.decrypt_analysis import DecryptAnalysis
from keyforge.entity.config_entity import BenchConfig, DecryptConfig, ForgeConfig, ScanConfig
from keyforge.entity.artifact_entity import BenchArtifact, DecryptArtifact, ForgeArtifact, KeyCandidate, Protocol, \
    RunRecord, ScanArtifact
from keyforge.utils.report import read_candidates_jsonl


class Pipeline:
    """Wires the components for each subcommand and keeps a run record per invocation."""

    def __init__(self, config: Configuration) -> None:
        try:
            self.config = config
            self.run_history_file = config.get_run_history_file()
            self.run_record: Optional[RunRecord] = None
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def start_artefact_scan(self, paths: Sequence[str], scan_config: ScanConfig) -> ScanArtifact:
        artefact_scan = ArtefactScan(scan_config=scan_config)
        return artefact_scan.initiate_artefact_scan(paths)

    def gather_candidates(self,
                          candidates_path: Optional[str],
                          extract_paths: Sequence[str],
                          scan_config: ScanConfig) -> List[KeyCandidate]:
        if candidates_path:
            try:
                candidates = read_candidates_jsonl(candidates_path)
            except OSError as e:
                raise InvalidInputError(f"unreadable candidate file {candidates_path}: {e}") from e
            logging.info(f"Read {len(candidates)} candidate(s) from [{candidates_path}]")
            return candidates
        if not extract_paths:
            raise InvalidInputError("decrypt needs a candidate file or at least one memory extract")
        scan_artifact = self.start_artefact_scan(extract_paths, scan_config)
        return [candidate for result in scan_artifact.results for candidate in result.candidates]

    def start_decrypt_analysis(self,
                               capture_path: str,
                               candidates: Sequence[KeyCandidate],
                               decrypt_config: DecryptConfig,
                               port: Optional[int] = None) -> Tuple[DecryptArtifact, List[str]]:
        stream_ingest = StreamIngest(port_filter=port)
        framed_sessions, diagnostics = stream_ingest.initiate_stream_ingest(capture_path)
        decrypt_analysis = DecryptAnalysis(decrypt_config=decrypt_config)
        decrypt_artifact = decrypt_analysis.initiate_decrypt_analysis(candidates, framed_sessions, capture_path)
        notes = [f"[{framed.session.session_id}] {note}" for framed in framed_sessions
                 for note in list(framed.session.warnings) + list(framed.notes)]
        return decrypt_artifact, diagnostics + notes

    def start_fixture_forge(self, forge_config: ForgeConfig) -> ForgeArtifact:
        if forge_config.protocol == Protocol.SSH.value:
            return forge_ssh_fixture(forge_config)
        return forge_tls_fixture(forge_config)

    def start_scan_benchmark(self, bench_config: BenchConfig, scan_config: ScanConfig) -> BenchArtifact:
        return ScanBenchmark(bench_config=bench_config, scan_config=scan_config).initiate_scan_benchmark()

    def run(self, command: str, action: Callable):
        """
        Execute `action()` under a fresh run record.
        :return: the action's result and the finished RunRecord
        """
        run_id = str(uuid.uuid4())
        start_time = datetime.now()
        self.run_record = RunRecord(run_id=run_id, command=command, start_time=start_time, stop_time=None,
                                    execution_time=None, running_status=True,
                                    message=f"{command} has been started.")
        logging.info(f"Pipeline run: {self.run_record}")
        try:
            result = action()
            message = f"{command} has been completed."
        except KeyforgeException as e:
            self._finish(f"{command} failed: {e.args[0] if e.args else e}")
            raise
        except Exception as e:
            self._finish(f"{command} failed: {e}")
            raise KeyforgeException(e, sys) from e
        return result, self._finish(message)

    def _finish(self, message: str) -> RunRecord:
        stop_time = datetime.now()
        self.run_record = self.run_record._replace(stop_time=stop_time,
                                                   execution_time=stop_time - self.run_record.start_time,
                                                   running_status=False,
                                                   message=message)
        logging.info(f"Pipeline run: {self.run_record}")
        self.save_run_record()
        return self.run_record

    def save_run_record(self):
        try:
            if self.run_record is None or not self.run_history_file:
                return
            run_dict = {key: [value] for key, value in self.run_record._asdict().items()}
            run_dict["created_time_stamp"] = [datetime.now()]
            run_report = pd.DataFrame(run_dict)
            os.makedirs(os.path.dirname(os.path.abspath(self.run_history_file)), exist_ok=True)
            if os.path.exists(self.run_history_file):
                run_report.to_csv(self.run_history_file, index=False, header=False, mode="a")
            else:
                run_report.to_csv(self.run_history_file, index=False, header=True, mode="w")
        except OSError as e:
            logging.warning(f"Could not save run record to [{self.run_history_file}]: {e}")

    def get_run_history(self, limit: int = 5) -> pd.DataFrame:
        if self.run_history_file and os.path.exists(self.run_history_file):
            return pd.read_csv(self.run_history_file)[-int(limit):]
        return pd.DataFrame()
