import sys
import argparse

from typing import List, Optional
from keyforge.constant import *
from keyforge.logger import logging, set_verbosity
from keyforge.exception import KeyforgeException
from keyforge.config.configuration import Configuration
from keyforge.entity.artifact_entity import Verdict
from keyforge.pipeline.pipeline import Pipeline
from keyforge.utils.report import bench_report, decrypt_report, forge_report, scan_report, write_candidates_jsonl, \
    write_report
from keyforge.utils.utils import parse_size, read_yaml


def _report_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--format", choices=REPORT_FORMATS, default=None, help="report format (default json)")
    parent.add_argument("--out", default=None, help="write the report here instead of stdout")
    return parent


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", default=None, help="yaml config file")
    parent.add_argument("--seed", type=int, default=None)
    parent.add_argument("--parallel", type=int, default=None, help="worker threads")
    parent.add_argument("-v", "--verbose", action="count", default=0, help="log to stderr, repeat for debug")
    return parent


def _scan_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--threshold", type=float, default=None, help="key entropy threshold in bits/byte")
    parent.add_argument("--layout", choices=LAYOUT_PREFERENCES, default=None)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="keyforge",
                                     description="Recover ChaCha20 keys from memory extracts and decrypt "
                                                 "SSH/TLS sessions with them.")
    commands = parser.add_subparsers(dest="command", required=True)
    common, report, scan = _common_options(), _report_options(), _scan_options()

    scan_parser = commands.add_parser("scan", parents=[common, report, scan], help="scan memory extracts")
    scan_parser.add_argument("extracts", nargs="*", help="extract files or folders")
    scan_parser.add_argument("--sweep-window", type=int, default=None)
    scan_parser.add_argument("--sweep-stride", type=int, default=None)
    scan_parser.add_argument("--candidates-out", default=None, help="write candidates as JSON Lines")

    decrypt_parser = commands.add_parser("decrypt", parents=[common, report, scan], help="decrypt a capture")
    decrypt_parser.add_argument("capture", help="pcap file or paired-stream directory")
    source = decrypt_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--candidates", default=None, help="JSON Lines candidate file")
    source.add_argument("--extract", nargs="+", default=None, help="memory extracts to scan first")
    decrypt_parser.add_argument("--seq-limit", type=int, default=None)
    decrypt_parser.add_argument("--verify-mac", action="store_true", default=None)
    decrypt_parser.add_argument("--port", type=int, default=None, help="keep only this TCP port")

    forge_parser = commands.add_parser("forge", parents=[common], help="generate a fixture")
    forge_parser.add_argument("--spec", default=None, help="yaml fixture spec")
    forge_parser.add_argument("--protocol", choices=("ssh", "tls"), default=None)
    forge_parser.add_argument("--size", default=None, help="image size, e.g. 1M")
    forge_parser.add_argument("--noise", choices=NOISE_PROFILES, default=None)
    forge_parser.add_argument("--file-size", default=None, help="scp payload size, e.g. 150 or 1M")
    forge_parser.add_argument("--strip-constant", action="store_true", default=None)
    forge_parser.add_argument("--overwrite", choices=OVERWRITE_TARGETS, default=None)
    forge_parser.add_argument("--tls-ordinal", type=int, default=None)
    forge_parser.add_argument("--capture-format", choices=CAPTURE_FORMATS, default=None)
    forge_parser.add_argument("--out", default=None, help="fixture directory")
    forge_parser.add_argument("--format", choices=REPORT_FORMATS, default=None)
    forge_parser.add_argument("--report", default=None, help="write the report here instead of stdout")

    bench_parser = commands.add_parser("bench", parents=[common, report, scan], help="time scans")
    bench_parser.add_argument("--sizes", nargs="*", default=None, help="extract sizes, e.g. 1M 16M")
    bench_parser.add_argument("--repetitions", type=int, default=None)
    bench_parser.add_argument("--sweep", action="store_true", default=None,
                              help="also time the entropy sweep")
    return parser


def _scan_overrides(args) -> dict:
    return {ENTROPY_THRESHOLD_KEY: args.threshold,
            LAYOUT_PREFERENCE_KEY: args.layout,
            SWEEP_WINDOW_KEY: getattr(args, "sweep_window", None),
            SWEEP_STRIDE_KEY: getattr(args, "sweep_stride", None),
            PARALLEL_KEY: args.parallel}


def cmd_scan(args, config: Configuration, pipeline: Pipeline) -> int:
    scan_config = config.get_scan_config(_scan_overrides(args))
    report_config = config.get_report_config({REPORT_FORMAT_KEY: args.format, "output_path": args.out})
    artifact, run = pipeline.run("scan", lambda: pipeline.start_artefact_scan(args.extracts, scan_config))
    if args.candidates_out:
        write_candidates_jsonl(args.candidates_out,
                               [candidate for result in artifact.results for candidate in result.candidates])
    write_report(scan_report(artifact, run, scan_config._asdict()), report_config.output_format,
                 report_config.output_path)
    if artifact.candidate_count:
        return EXIT_SUCCESS
    if artifact.results and artifact.error_count == len(artifact.results):
        return EXIT_ERROR
    return EXIT_NOTHING_FOUND


def cmd_decrypt(args, config: Configuration, pipeline: Pipeline) -> int:
    scan_config = config.get_scan_config(_scan_overrides(args))
    decrypt_config = config.get_decrypt_config({SEQ_SEARCH_LIMIT_KEY: args.seq_limit,
                                                VERIFY_MAC_KEY: args.verify_mac,
                                                PARALLEL_KEY: args.parallel})
    report_config = config.get_report_config({REPORT_FORMAT_KEY: args.format, "output_path": args.out})

    def decrypt():
        candidates = pipeline.gather_candidates(args.candidates, args.extract or [], scan_config)
        return pipeline.start_decrypt_analysis(args.capture, candidates, decrypt_config, args.port)

    (artifact, diagnostics), run = pipeline.run("decrypt", decrypt)
    write_report(decrypt_report(artifact, run, decrypt_config._asdict(), diagnostics),
                 report_config.output_format, report_config.output_path)
    return EXIT_SUCCESS if any(r.verdict is Verdict.VALID for r in artifact.reports) else EXIT_NOTHING_FOUND


def cmd_forge(args, config: Configuration, pipeline: Pipeline) -> int:
    overrides = read_yaml(args.spec) if args.spec else {}
    overrides.update({key: value for key, value in {FORGE_PROTOCOL_KEY: args.protocol,
                                                    FORGE_IMAGE_SIZE_KEY: args.size,
                                                    FORGE_NOISE_KEY: args.noise,
                                                    FORGE_FILE_SIZE_KEY: args.file_size,
                                                    FORGE_STRIP_CONSTANT_KEY: args.strip_constant,
                                                    FORGE_OVERWRITE_KEY: args.overwrite,
                                                    FORGE_TLS_ORDINAL_KEY: args.tls_ordinal,
                                                    FORGE_CAPTURE_FORMAT_KEY: args.capture_format,
                                                    FORGE_SEED_KEY: args.seed,
                                                    FORGE_OUTPUT_DIR_KEY: args.out}.items()
                      if value is not None})
    forge_config = config.get_forge_config(overrides)
    report_config = config.get_report_config({REPORT_FORMAT_KEY: args.format, "output_path": args.report})
    artifact, run = pipeline.run("forge", lambda: pipeline.start_fixture_forge(forge_config))
    write_report(forge_report(artifact, run), report_config.output_format, report_config.output_path)
    return EXIT_SUCCESS


def cmd_bench(args, config: Configuration, pipeline: Pipeline) -> int:
    scan_config = config.get_scan_config(_scan_overrides(args))
    bench_config = config.get_bench_config({BENCH_SIZES_KEY: [parse_size(s) for s in args.sizes]
                                            if args.sizes is not None else None,
                                            BENCH_REPETITIONS_KEY: args.repetitions,
                                            BENCH_SWEEP_KEY: args.sweep,
                                            FORGE_SEED_KEY: args.seed})
    report_config = config.get_report_config({REPORT_FORMAT_KEY: args.format, "output_path": args.out})
    artifact, run = pipeline.run("bench", lambda: pipeline.start_scan_benchmark(bench_config, scan_config))
    write_report(bench_report(artifact, run, bench_config._asdict()), report_config.output_format,
                 report_config.output_path)
    return EXIT_SUCCESS


COMMANDS = {"scan": cmd_scan, "decrypt": cmd_decrypt, "forge": cmd_forge, "bench": cmd_bench}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_verbosity(args.verbose)
    try:
        config = Configuration(config_file_path=args.config or CONFIG_FILE_PATH)
        pipeline = Pipeline(config)
        return COMMANDS[args.command](args, config, pipeline)
    except KeyforgeException as e:
        message = e.args[0] if e.args else str(e)
        logging.error(str(e))
        sys.stderr.write(f"keyforge {args.command}: {type(e).__name__}: {message}\n")
        return EXIT_ERROR
    except OSError as e:
        logging.error(str(e))
        sys.stderr.write(f"keyforge {args.command}: {e}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
