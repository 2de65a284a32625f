import math
import logging
import os
import struct
from collections import Counter

import numpy as np
import pytest

from keyforge.constant import CONSTANT_STRING, STRUCTURE_KEY_OFFSET, STRUCTURE_SIZE
from keyforge.entity.artifact_entity import MemoryExtract, Placement
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.config_entity import ScanConfig
from keyforge.component.artefact_scan import ArtefactScan, entropy_sweep, extract_candidate, load_extract, \
    scan_extract, shannon_entropy, sweep_hits_key, tail_interpretations, timing_statistics
from keyforge.component.fixture_forge import draw_key, gen_memory_image
from keyforge.exception import InvalidInputError, InvalidConfigError, ScanRangeError


def counter_entropy(block: bytes) -> float:
    total = len(block)
    return -sum(n / total * math.log2(n / total) for n in Counter(block).values())


def orig_params(rng, counter=1, nonce=None):
    return KeystreamParams(draw_key(rng), Layout.ORIG_8_8, counter, nonce or struct.pack(">Q", 3))


def extract(data: bytes, name: str = "extract.bin") -> MemoryExtract:
    return MemoryExtract(data=data, source_id=name, captured_at=None)


def test_entropy_reference_values():
    assert shannon_entropy(bytes(32)) == 0.0
    assert shannon_entropy(bytes(range(32))) == pytest.approx(5.0)
    assert shannon_entropy(CONSTANT_STRING) == pytest.approx(3.75)


def test_entropy_matches_counter_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        block = rng.integers(0, 256, int(rng.integers(1, 80)), dtype=np.uint8).tobytes()
        assert shannon_entropy(block) == pytest.approx(counter_entropy(block), abs=1e-9)


def test_entropy_of_empty_block_is_rejected():
    with pytest.raises(InvalidInputError):
        shannon_entropy(b"")


def test_scan_recovers_every_planted_structure():
    rng = np.random.default_rng(1)
    params = [orig_params(rng, counter=i + 1) for i in range(4)]
    offsets = [4096, 65536, 200000, 1000000]
    image, manifest = gen_memory_image([Placement(p, offset=o) for p, o in zip(params, offsets)],
                                       "mixed", 1 << 20, seed=2)
    candidates = scan_extract(extract(image))
    assert [c.offset for c in candidates] == offsets
    assert [c.key for c in candidates] == [p.key for p in params]
    for candidate, p in zip(candidates, params):
        orig = [i for i in candidate.interpretations if i.layout is Layout.ORIG_8_8][0]
        assert (orig.counter, orig.nonce) == (p.counter, p.nonce)
        assert candidate.entropy_bits > 4.5
    assert [s["offset"] for s in manifest["structures"]] == offsets


def test_low_entropy_key_is_rejected():
    params = KeystreamParams(bytes(32), Layout.ORIG_8_8, 0, bytes(8))
    image, _ = gen_memory_image([Placement(params, offset=256)], "zeros", 4096, seed=0)
    assert scan_extract(extract(image)) == []


def test_constant_near_end_is_skipped():
    data = bytes(1000) + CONSTANT_STRING + os.urandom(20)
    assert scan_extract(extract(data)) == []


def test_threshold_is_strict():
    data = bytes(64) + CONSTANT_STRING + bytes(range(32)) + bytes(16) + bytes(64)
    assert len(scan_extract(extract(data), ScanConfig(entropy_threshold=4.99))) == 1
    assert scan_extract(extract(data), ScanConfig(entropy_threshold=5.0)) == []


def test_tail_interpretations():
    tail = struct.pack("<Q", 1) + struct.pack(">Q", 3)
    key = bytes(range(32))
    ietf, orig = tail_interpretations(key, tail)
    assert (ietf.layout, ietf.counter, ietf.nonce) == (Layout.IETF_4_12, 1, tail[4:16])
    assert (orig.layout, orig.counter, orig.nonce) == (Layout.ORIG_8_8, 1, struct.pack(">Q", 3))
    assert [i.layout for i in tail_interpretations(key, tail, "ietf")] == [Layout.IETF_4_12]


def test_extract_candidate_bounds():
    data = extract(bytes(100))
    with pytest.raises(ScanRangeError):
        extract_candidate(data, 40)
    assert extract_candidate(data, 36).offset == 36


def test_strip_constant_needs_entropy_sweep():
    rng = np.random.default_rng(9)
    offsets = [1024, 8192, 30000, 50000]
    placements = [Placement(orig_params(rng), offset=o, strip_constant=True) for o in offsets]
    image, _ = gen_memory_image(placements, "zeros", 65536, seed=3)
    data = extract(image)
    assert scan_extract(data) == []
    regions = entropy_sweep(data)
    for offset in offsets:
        assert sweep_hits_key(regions, offset + STRUCTURE_KEY_OFFSET)
    covered = sum(region.length for region in regions)
    assert covered <= len(offsets) * (STRUCTURE_SIZE + 64)


def test_entropy_sweep_on_uniform_data():
    assert entropy_sweep(extract(bytes(65536))) == []
    random_data = np.random.default_rng(4).integers(0, 256, 65536, dtype=np.uint8).tobytes()
    regions = entropy_sweep(extract(random_data))
    assert sum(region.length for region in regions) >= 0.9 * len(random_data)
    assert entropy_sweep(extract(bytes(10))) == []


def test_sweep_window_below_minimum_is_rejected():
    with pytest.raises(InvalidConfigError):
        ScanConfig(sweep_window=8)


def test_sweep_skipped_when_window_cannot_clear_threshold(caplog):
    random_data = np.random.default_rng(5).integers(0, 256, 4096, dtype=np.uint8).tobytes()
    with caplog.at_level(logging.WARNING):
        assert entropy_sweep(extract(random_data), ScanConfig(sweep_window=16)) == []
        assert entropy_sweep(extract(random_data), ScanConfig(entropy_threshold=5.0)) == []
    assert sum("sweep skipped" in record.getMessage() for record in caplog.records) == 2
    assert entropy_sweep(extract(random_data), ScanConfig(sweep_window=64, entropy_threshold=5.0))


def test_timing_statistics():
    assert timing_statistics([])["count"] == 0
    single = timing_statistics([0.5])
    assert (single["maximum"], single["minimum"], single["stddev"]) == (0.5, 0.5, 0.0)
    stats = timing_statistics([1.0, 2.0, 3.0])
    assert stats["mean"] == pytest.approx(2.0)
    assert stats["stddev"] == pytest.approx(1.0)


def test_artefact_scan_over_directory(tmp_path):
    rng = np.random.default_rng(12)
    dump_dir = tmp_path / "dumps"
    dump_dir.mkdir()
    for index in range(5):
        image, _ = gen_memory_image([Placement(orig_params(rng), offset=512)], "random", 8192, seed=index)
        (dump_dir / f"dump_{index}.bin").write_bytes(image)
    (dump_dir / "empty.bin").write_bytes(b"")

    artifact = ArtefactScan(ScanConfig()).initiate_artefact_scan([str(dump_dir)])
    assert len(artifact.results) == 6
    assert artifact.error_count == 1
    assert artifact.candidate_count == 5
    assert artifact.timing["count"] == 5
    failed = [result for result in artifact.results if result.error is not None]
    assert failed[0].source_id == "empty.bin"


def test_parallel_scan_matches_sequential(tmp_path):
    rng = np.random.default_rng(13)
    paths = []
    for index in range(4):
        image, _ = gen_memory_image([Placement(orig_params(rng), offset=1024)], "mixed", 32768, seed=index)
        path = tmp_path / f"dump_{index}.bin"
        path.write_bytes(image)
        paths.append(str(path))
    sequential = ArtefactScan(ScanConfig()).initiate_artefact_scan(paths)
    parallel = ArtefactScan(ScanConfig(parallel=4)).initiate_artefact_scan(paths)
    assert [r.candidates for r in sequential.results] == [r.candidates for r in parallel.results]


def test_load_extract(tmp_path):
    path = tmp_path / "image.bin"
    path.write_bytes(b"\x01" * 10)
    loaded = load_extract(str(path))
    assert loaded.source_id == "image.bin"
    assert loaded.data == b"\x01" * 10
    with pytest.raises(FileNotFoundError):
        load_extract(str(tmp_path / "missing.bin"))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_detection_rate_over_random_images(seed):
    rng = np.random.default_rng(seed)
    size = (1 << 20) * (1, 2, 4, 8)[seed % 4]
    noise = ("zeros", "text", "random", "mixed")[seed % 4]
    count = int(rng.integers(1, 9))
    placements = [Placement(orig_params(rng), kind=("heap", "stack")[i % 2]) for i in range(count)]
    image, manifest = gen_memory_image(placements, noise, size, seed=seed)
    found = {c.offset for c in scan_extract(extract(image))}
    assert found == {s["offset"] for s in manifest["structures"]}
