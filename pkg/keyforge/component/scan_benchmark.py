import sys
import time

import numpy as np
import pandas as pd

from keyforge.constant import *
from keyforge.logger import logging
from keyforge.entity.config_entity import BenchConfig, ScanConfig
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.artifact_entity import BenchArtifact, MemoryExtract, Placement
from keyforge.component.artefact_scan import entropy_sweep, scan_extract, sweep_hits_key, timing_statistics
from keyforge.component.fixture_forge import draw_key, gen_memory_image
from keyforge.exception import KeyforgeException

BENCH_NOISE = "mixed"
BENCH_STRUCTURES = 4


def bench_extract(size: int, seed) -> tuple:
    """Mixed-noise image of `size` bytes with up to four OpenSSH-style structures."""
    rng = np.random.default_rng(seed)
    count = min(BENCH_STRUCTURES, size // (2 * STRUCTURE_SIZE))
    placements = [Placement(params=KeystreamParams(draw_key(rng), Layout.ORIG_8_8, 1, rng.bytes(ORIG_NONCE_SIZE)),
                            kind="heap", label=f"bench_{index}")
                  for index in range(count)]
    image, manifest = gen_memory_image(placements, BENCH_NOISE, size, int(rng.integers(0, 2 ** 32)))
    return MemoryExtract(data=image, source_id=f"bench_{size}", captured_at=None), manifest["structures"]


def _timed(function, *args) -> tuple:
    start = time.perf_counter()
    result = function(*args)
    return time.perf_counter() - start, result


def _row_statistics(prefix: str, durations, size: int) -> dict:
    stats = timing_statistics(durations)
    mean = stats["mean"] or 0.0
    return {f"{prefix}_mean": stats["mean"],
            f"{prefix}_max": stats["maximum"],
            f"{prefix}_min": stats["minimum"],
            f"{prefix}_stddev": stats["stddev"],
            f"{prefix}_mib_per_s": size / MEBIBYTE / mean if mean > 0 else None}


class ScanBenchmark:
    """Times constant-anchored scans (and optionally the entropy sweep) over generated extracts."""

    def __init__(self, bench_config: BenchConfig, scan_config: ScanConfig = ScanConfig()):
        try:
            logging.info(f"{'='*20} Scan benchmark log started. {'='*20}")
            self.bench_config = bench_config
            self.scan_config = scan_config
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def bench_size(self, size: int, seed) -> dict:
        extract, structures = bench_extract(size, seed)
        scan_durations, sweep_durations = [], []
        candidates, regions = [], []
        for _ in range(self.bench_config.repetitions):
            duration, candidates = _timed(scan_extract, extract, self.scan_config)
            scan_durations.append(duration)
            if self.bench_config.sweep:
                duration, regions = _timed(entropy_sweep, extract, self.scan_config)
                sweep_durations.append(duration)
        row = {"size_bytes": size,
               "size_mib": size / MEBIBYTE,
               "repetitions": self.bench_config.repetitions,
               "planted": len(structures),
               "candidates": len(candidates)}
        row.update(_row_statistics("scan", scan_durations, size))
        if self.bench_config.sweep:
            row.update(_row_statistics("sweep", sweep_durations, size))
            covered = sum(sweep_hits_key(regions, s["offset"] + STRUCTURE_KEY_OFFSET) for s in structures)
            row["sweep_regions"] = len(regions)
            row["sweep_coverage"] = covered / len(structures) if structures else None
            row["sweep_slowdown"] = (row["sweep_mean"] / row["scan_mean"]
                                     if row["scan_mean"] and row["sweep_mean"] else None)
        logging.info(f"Benchmark row: {row}")
        return row

    def initiate_scan_benchmark(self) -> BenchArtifact:
        try:
            sizes = [int(size) for size in self.bench_config.sizes if int(size) > 0]
            logging.info(f"Benchmarking sizes {sizes} with {self.bench_config}")
            seeds = np.random.SeedSequence(int(self.bench_config.seed)).spawn(max(len(sizes), 1))
            table = pd.DataFrame([self.bench_size(size, seed) for size, seed in zip(sizes, seeds)])
            bench_artifact = BenchArtifact(table=table, message=f"{len(table)} benchmark row(s)")
            logging.info(f"Scan benchmark artifact: {bench_artifact.message}")
            return bench_artifact
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def __del__(self):
        logging.info(f"{'='*20} Scan benchmark log completed. {'='*20}")
