import os
import sys
import time
import struct

import numpy as np
import pandas as pd

from datetime import datetime
from typing import Iterable, List, Optional
from concurrent.futures import ThreadPoolExecutor
from numpy.lib.stride_tricks import sliding_window_view
from keyforge.constant import *
from keyforge.logger import logging
from keyforge.entity.config_entity import ScanConfig
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.artifact_entity import KeyCandidate, MemoryExtract, ScanArtifact, ScanResult, SweepRegion
from keyforge.exception import InvalidInputError, KeyforgeException, ScanRangeError


def shannon_entropy(block: bytes) -> float:
    """
    Shannon entropy of the byte distribution, in bits per byte.
    :param block: non-empty bytes
    :return: value in [0, 8]
    """
    if len(block) == 0:
        raise InvalidInputError("entropy of an empty block is undefined")
    counts = np.bincount(np.frombuffer(bytes(block), dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(block)
    entropy = float(-(p * np.log2(p)).sum())
    return entropy if entropy > 0.0 else 0.0


def load_extract(path: str) -> MemoryExtract:
    with open(path, "rb") as extract_file:
        data = extract_file.read()
    if not data:
        raise InvalidInputError(f"memory extract is empty: {path}")
    captured_at = datetime.fromtimestamp(os.path.getmtime(path)).isoformat(timespec="seconds")
    return MemoryExtract(data=data, source_id=os.path.basename(path), captured_at=captured_at)


def tail_interpretations(key: bytes, tail: bytes, layout_preference: str = "auto") -> List[KeystreamParams]:
    interpretations = []
    if layout_preference in ("auto", "ietf"):
        interpretations.append(KeystreamParams(key=key,
                                               layout=Layout.IETF_4_12,
                                               counter=struct.unpack("<I", tail[:4])[0],
                                               nonce=tail[4:16]))
    if layout_preference in ("auto", "orig"):
        interpretations.append(KeystreamParams(key=key,
                                               layout=Layout.ORIG_8_8,
                                               counter=struct.unpack("<Q", tail[:8])[0],
                                               nonce=tail[8:16]))
    return interpretations


def extract_candidate(extract: MemoryExtract,
                      offset: int,
                      layout_preference: str = "auto") -> KeyCandidate:
    """
    Slice a base structure at `offset`: key at +16..+48, counter/nonce tail at +48..+64.
    Works at any in-bounds offset so entropy-sweep hits can be turned into candidates too.
    """
    if offset < 0 or offset + STRUCTURE_HEADER_SIZE > len(extract.data):
        raise ScanRangeError(
            f"structure at offset {offset} exceeds extract {extract.source_id} "
            f"of {len(extract.data)} bytes"
        )
    key = bytes(extract.data[offset + STRUCTURE_KEY_OFFSET:offset + STRUCTURE_TAIL_OFFSET])
    tail = bytes(extract.data[offset + STRUCTURE_TAIL_OFFSET:offset + STRUCTURE_HEADER_SIZE])
    return KeyCandidate(key=key,
                        tail=tail,
                        offset=offset,
                        entropy_bits=shannon_entropy(key),
                        interpretations=tail_interpretations(key, tail, layout_preference),
                        source_id=extract.source_id)


def scan_extract(extract: MemoryExtract, config: ScanConfig = ScanConfig()) -> List[KeyCandidate]:
    data = extract.data
    candidates = []
    cursor = 0
    while True:
        hit = data.find(CONSTANT_STRING, cursor)
        if hit < 0:
            break
        if hit + STRUCTURE_HEADER_SIZE > len(data):
            logging.debug(f"[{extract.source_id}] constant at {hit} truncated by end of extract")
            cursor = hit + SCAN_ADVANCE_ON_REJECT
            continue
        entropy = shannon_entropy(data[hit + STRUCTURE_KEY_OFFSET:hit + STRUCTURE_TAIL_OFFSET])
        if entropy > config.entropy_threshold:
            candidates.append(extract_candidate(extract, hit, config.layout_preference))
            cursor = hit + SCAN_ADVANCE_ON_HIT
        else:
            logging.debug(f"[{extract.source_id}] constant at {hit} rejected, key entropy {entropy:.3f}")
            cursor = hit + SCAN_ADVANCE_ON_REJECT
    return candidates


def _window_entropies(windows: np.ndarray, window: int) -> np.ndarray:
    # entropy term per possible count value, so each window is a table lookup and a row sum
    counts_range = np.arange(window + 1) / window
    with np.errstate(divide="ignore", invalid="ignore"):
        term_table = np.where(counts_range > 0, counts_range * np.log2(counts_range), 0.0)
    entropies = np.empty(windows.shape[0], dtype=np.float64)
    for start in range(0, windows.shape[0], SWEEP_CHUNK_WINDOWS):
        chunk = windows[start:start + SWEEP_CHUNK_WINDOWS]
        rows = chunk.shape[0]
        index = (np.arange(rows, dtype=np.int64)[:, None] * 256 + chunk).ravel()
        counts = np.bincount(index, minlength=rows * 256).reshape(rows, 256)
        entropies[start:start + rows] = -term_table[counts].sum(axis=1)
    return entropies


def entropy_sweep(extract: MemoryExtract, config: ScanConfig = ScanConfig()) -> List[SweepRegion]:
    """
    Constant-free fallback: score every `sweep_window` bytes at `sweep_stride` steps and
    merge the windows above threshold into maximal contiguous regions.
    Recall-oriented; random or compressed data lights up wholesale.
    """
    data = np.frombuffer(extract.data, dtype=np.uint8)
    window, stride = config.sweep_window, config.sweep_stride
    ceiling = float(np.log2(min(window, 256)))
    if ceiling <= config.entropy_threshold:
        logging.warning(f"[{extract.source_id}] a {window}-byte window tops out at {ceiling:.2f} bits, "
                        f"not above threshold {config.entropy_threshold}; sweep skipped")
        return []
    if len(data) < window:
        return []
    windows = sliding_window_view(data, window)[::stride]
    starts = np.arange(windows.shape[0], dtype=np.int64) * stride
    entropies = _window_entropies(windows, window)

    high = entropies > config.entropy_threshold
    high_starts = starts[high]
    if high_starts.size == 0:
        return []
    high_ends = high_starts + window
    high_entropies = entropies[high]
    breaks = np.flatnonzero(high_starts[1:] > high_ends[:-1]) + 1
    first = np.concatenate(([0], breaks))
    last = np.concatenate((breaks - 1, [high_starts.size - 1]))
    peaks = np.maximum.reduceat(high_entropies, first)
    return [SweepRegion(offset=int(high_starts[f]),
                        length=int(high_ends[l] - high_starts[f]),
                        entropy_bits=float(peak))
            for f, l, peak in zip(first, last, peaks)]


def sweep_hits_key(regions: Iterable[SweepRegion], key_offset: int) -> bool:
    return any(region.offset <= key_offset < region.offset + region.length for region in regions)


def timing_statistics(durations: List[float]) -> dict:
    """Maximum/minimum/mean/standard deviation of scan durations in seconds."""
    series = pd.Series(durations, dtype="float64")
    if series.empty:
        return {"count": 0, "maximum": None, "minimum": None, "mean": None, "stddev": None}
    stats = series.agg(["max", "min", "mean", "std"]).fillna(0.0)
    return {"count": int(series.size),
            "maximum": float(stats["max"]),
            "minimum": float(stats["min"]),
            "mean": float(stats["mean"]),
            "stddev": float(stats["std"])}


def expand_extract_paths(paths: Iterable[str]) -> List[str]:
    expanded = []
    for path in paths:
        if os.path.isdir(path):
            for dir_path, _, file_names in sorted(os.walk(path)):
                expanded.extend(os.path.join(dir_path, name) for name in sorted(file_names))
        else:
            expanded.append(path)
    return expanded


class ArtefactScan:
    """Scans memory extract files for ChaCha20 base structures and times each scan."""

    def __init__(self, scan_config: ScanConfig):
        try:
            logging.info(f"{'='*20} Artefact scan log started. {'='*20}")
            self.scan_config = scan_config
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def scan_path(self, path: str) -> ScanResult:
        try:
            extract = load_extract(path)
            start = time.perf_counter()
            candidates = scan_extract(extract, self.scan_config)
            duration = time.perf_counter() - start
            logging.info(f"[{path}] {len(candidates)} candidate(s) in {duration:.6f}s")
            return ScanResult(path=path, source_id=extract.source_id, size=len(extract.data),
                              duration=duration, candidates=candidates, error=None)
        except (OSError, KeyforgeException) as e:
            logging.info(f"[{path}] scan failed: {e.args[0] if e.args else e}")
            size = os.path.getsize(path) if os.path.isfile(path) else None
            return ScanResult(path=path, source_id=os.path.basename(path), size=size,
                              duration=None, candidates=[], error=str(e.args[0] if e.args else e))

    def initiate_artefact_scan(self, paths: Iterable[str]) -> ScanArtifact:
        try:
            extract_paths = expand_extract_paths(paths)
            logging.info(f"Scanning {len(extract_paths)} extract(s) with {self.scan_config}")
            if self.scan_config.parallel > 1 and len(extract_paths) > 1:
                with ThreadPoolExecutor(max_workers=self.scan_config.parallel) as pool:
                    results = list(pool.map(self.scan_path, extract_paths))
            else:
                results = [self.scan_path(path) for path in extract_paths]

            durations = [result.duration for result in results if result.error is None]
            candidate_count = sum(len(result.candidates) for result in results)
            error_count = sum(result.error is not None for result in results)
            scan_artifact = ScanArtifact(results=results,
                                         timing=timing_statistics(durations),
                                         candidate_count=candidate_count,
                                         error_count=error_count,
                                         message=f"{candidate_count} candidate(s) in "
                                                 f"{len(results) - error_count} extract(s), "
                                                 f"{error_count} error(s)")
            logging.info(f"Artefact scan artifact: {scan_artifact.message}, timing {scan_artifact.timing}")
            return scan_artifact
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def __del__(self):
        logging.info(f"{'='*20} Artefact scan log completed. {'='*20}")
