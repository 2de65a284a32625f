"""
Report dictionaries for every subcommand and their JSON / text renderings.

Both renderings are produced from the same dictionary, so a text report never
carries a fact the JSON report lacks (or the other way round).
"""
import sys
import json

from typing import Iterable, List, Optional
from keyforge.constant import *
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.artifact_entity import BenchArtifact, DecryptArtifact, DecryptReport, ForgeArtifact, \
    KeyCandidate, RunRecord, ScanArtifact
from keyforge.exception import InvalidInputError
from keyforge.utils.utils import lossy_text


def interpretation_to_dict(params: KeystreamParams) -> dict:
    return {"layout": Layout(params.layout).value,
            "counter": int(params.counter),
            "nonce": bytes(params.nonce).hex()}


def candidate_to_dict(candidate: KeyCandidate) -> dict:
    return {"source_id": candidate.source_id,
            "offset": candidate.offset,
            "key": candidate.key.hex(),
            "tail": candidate.tail.hex(),
            "entropy_bits": round(float(candidate.entropy_bits), 6),
            "interpretations": [interpretation_to_dict(params) for params in candidate.interpretations]}


def candidate_from_dict(data: dict) -> KeyCandidate:
    try:
        key = bytes.fromhex(data["key"])
        interpretations = [KeystreamParams(key=key,
                                           layout=Layout(item["layout"]),
                                           counter=int(item["counter"]),
                                           nonce=bytes.fromhex(item["nonce"]))
                           for item in data.get("interpretations", [])]
        return KeyCandidate(key=key,
                            tail=bytes.fromhex(data["tail"]),
                            offset=int(data["offset"]),
                            entropy_bits=float(data["entropy_bits"]),
                            interpretations=interpretations,
                            source_id=data.get("source_id"))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"malformed candidate record: {e}") from e


def write_candidates_jsonl(path: str, candidates: Iterable[KeyCandidate]) -> int:
    count = 0
    with open(path, "w") as candidate_file:
        for candidate in candidates:
            candidate_file.write(json.dumps(candidate_to_dict(candidate)) + "\n")
            count += 1
    return count


def read_candidates_jsonl(path: str) -> List[KeyCandidate]:
    candidates = []
    with open(path) as candidate_file:
        for line in candidate_file:
            if line.strip():
                try:
                    candidates.append(candidate_from_dict(json.loads(line)))
                except json.JSONDecodeError as e:
                    raise InvalidInputError(f"malformed candidate line in {path}: {e}") from e
    return candidates


def run_to_dict(run: RunRecord) -> dict:
    return {"run_id": run.run_id,
            "command": run.command,
            "start_time": run.start_time.isoformat() if run.start_time else None,
            "stop_time": run.stop_time.isoformat() if run.stop_time else None,
            "execution_time": run.execution_time.total_seconds() if run.execution_time else None,
            "running_status": run.running_status,
            "message": run.message}


def scan_report(artifact: ScanArtifact, run: RunRecord, config: dict) -> dict:
    return {"command": "scan",
            "run": run_to_dict(run),
            "config": config,
            "candidate_count": artifact.candidate_count,
            "error_count": artifact.error_count,
            "timing": artifact.timing,
            "results": [{"path": result.path,
                         "source_id": result.source_id,
                         "size": result.size,
                         "duration": result.duration,
                         "error": result.error,
                         "candidates": [candidate_to_dict(c) for c in result.candidates]}
                        for result in artifact.results]}


def _decrypt_report_to_dict(report: DecryptReport) -> dict:
    pairing = None
    if report.pairing is not None:
        pairing = {"header_offset": report.pairing.header_candidate.offset,
                   "main_offset": report.pairing.main_candidate.offset,
                   "header_key": report.pairing.header_candidate.key.hex(),
                   "main_key": report.pairing.main_candidate.key.hex()}
    candidate = None
    if report.candidate is not None:
        candidate = {"offset": report.candidate.offset, "key": report.candidate.key.hex()}
    return {"session_id": report.session_id,
            "protocol": report.protocol.value if hasattr(report.protocol, "value") else report.protocol,
            "direction": report.direction.value,
            "verdict": report.verdict.value,
            "coverage": round(float(report.coverage), 6),
            "pairing": pairing,
            "candidate": candidate,
            "packets": [{"seq_no": packet.seq_no,
                         "length": len(packet.plaintext),
                         "plaintext": lossy_text(packet.plaintext),
                         "plaintext_hex": packet.plaintext.hex(),
                         "notes": packet.notes}
                        for packet in report.packets],
            "details": report.details}


def decrypt_report(artifact: DecryptArtifact, run: RunRecord, config: dict,
                   diagnostics: Optional[List[str]] = None) -> dict:
    return {"command": "decrypt",
            "run": run_to_dict(run),
            "config": config,
            "capture": artifact.capture_path,
            "candidate_count": artifact.candidate_count,
            "valid_count": artifact.valid_count,
            "diagnostics": list(diagnostics or []),
            "reports": [_decrypt_report_to_dict(report) for report in artifact.reports]}


def forge_report(artifact: ForgeArtifact, run: RunRecord) -> dict:
    manifest = artifact.manifest
    return {"command": "forge",
            "run": run_to_dict(run),
            "protocol": manifest.protocol,
            "seed": manifest.seed,
            "output_dir": artifact.output_dir,
            "image": artifact.image_path,
            "capture": artifact.capture_path,
            "manifest": artifact.manifest_path,
            "noise": manifest.noise,
            "countermeasures": manifest.countermeasures,
            "structures": [{"label": s["label"], "offset": s["offset"], "layout": s["layout"],
                            "strip_constant": s["strip_constant"], "overwritten": s["overwritten"]}
                           for s in manifest.structures]}


def bench_report(artifact: BenchArtifact, run: RunRecord, config: dict) -> dict:
    rows = json.loads(artifact.table.to_json(orient="records")) if len(artifact.table) else []
    return {"command": "bench",
            "run": run_to_dict(run),
            "config": config,
            "rows": rows}


def _text_lines(value, indent: int = 0) -> List[str]:
    pad = "  " * indent
    if isinstance(value, dict):
        lines = []
        for key, item in value.items():
            if isinstance(item, (dict, list)) and item:
                lines.append(f"{pad}{key}:")
                lines.extend(_text_lines(item, indent + 1))
            else:
                lines.append(f"{pad}{key}: {_scalar(item)}")
        return lines
    if isinstance(value, list):
        lines = []
        for index, item in enumerate(value):
            if isinstance(item, (dict, list)):
                lines.append(f"{pad}- [{index}]")
                lines.extend(_text_lines(item, indent + 1))
            else:
                lines.append(f"{pad}- {_scalar(item)}")
        return lines
    return [f"{pad}{_scalar(value)}"]


def _scalar(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, list):
        return "[]"
    if isinstance(value, dict):
        return "{}"
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, str) and not value.isprintable():
        return json.dumps(value)
    return str(value)


def render_text(report: dict) -> str:
    title = f"keyforge {report.get('command', '')} report"
    return "\n".join([title, "=" * len(title)] + _text_lines(report)) + "\n"


def render_report(report: dict, output_format: str = "json") -> str:
    if output_format == "text":
        return render_text(report)
    return json.dumps(report, indent=2) + "\n"


def write_report(report: dict, output_format: str = "json", output_path: Optional[str] = None) -> str:
    rendered = render_report(report, output_format)
    if output_path:
        with open(output_path, "w") as report_file:
            report_file.write(rendered)
    else:
        sys.stdout.write(rendered)
    return rendered
