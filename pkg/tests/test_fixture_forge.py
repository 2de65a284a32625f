import json
import os

import numpy as np
import pytest

from keyforge.constant import CONSTANT_STRING, STRUCTURE_SIZE
from keyforge.entity.artifact_entity import Direction, Placement
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.config_entity import ForgeConfig
from keyforge.component.artefact_scan import shannon_entropy
from keyforge.component.chacha_core import init_state, keystream_block, serialize_state
from keyforge.component.fixture_forge import FixtureForge, draw_key, forge_ssh_fixture, forge_tls_fixture, \
    gen_memory_image, gen_ssh_session, gen_tls_session, make_noise, structure_bytes
from keyforge.exception import FixtureGenerationError, InvalidConfigError


def orig(rng, counter=0):
    return KeystreamParams(draw_key(rng), Layout.ORIG_8_8, counter, bytes(8))


def read(path):
    with open(path, "rb") as handle:
        return handle.read()


def test_structure_bytes_layout():
    params = KeystreamParams(bytes(range(32)), Layout.IETF_4_12, 1, bytes(range(12)))
    structure = structure_bytes(params)
    assert len(structure) == STRUCTURE_SIZE == 132
    assert structure[:64] == serialize_state(init_state(params))
    assert structure[:16] == CONSTANT_STRING
    assert structure[64:128] == keystream_block(init_state(params))
    assert structure[128:] == bytes(4)
    stripped = structure_bytes(params, strip_constant=True, rng=np.random.default_rng(0))
    assert stripped[:16] != CONSTANT_STRING
    assert stripped[16:] == structure[16:]


def test_draw_key_clears_threshold():
    rng = np.random.default_rng(0)
    assert all(shannon_entropy(draw_key(rng)) > 4.5 for _ in range(100))


@pytest.mark.parametrize("profile", ["zeros", "text", "random", "mixed"])
def test_noise_profiles(profile):
    noise = make_noise(profile, 65536, np.random.default_rng(1))
    assert noise.dtype == np.uint8 and noise.size == 65536
    entropy = shannon_entropy(noise.tobytes())
    assert {"zeros": entropy == 0.0,
            "text": 3.5 < entropy < 5.5,
            "random": entropy > 7.9,
            "mixed": 0.0 < entropy < 8.0}[profile]


def test_unknown_noise_profile():
    with pytest.raises(FixtureGenerationError):
        make_noise("static", 16, np.random.default_rng(0))


def test_memory_image_is_deterministic():
    rng = np.random.default_rng(3)
    placements = [Placement(orig(rng)), Placement(orig(rng), kind="stack"), Placement(orig(rng), offset=0)]
    first = gen_memory_image(placements, "mixed", 1 << 18, seed=5)
    second = gen_memory_image(placements, "mixed", 1 << 18, seed=5)
    assert first == second
    offsets = [s["offset"] for s in first[1]["structures"]]
    assert offsets[2] == 0
    assert offsets[0] % 16 == 0 and offsets[0] < 0.75 * (1 << 18)
    assert offsets[1] % 8 == 0 and offsets[1] >= 0.75 * (1 << 18)


def test_overwritten_structure_leaves_no_trace():
    rng = np.random.default_rng(4)
    params = orig(rng)
    image, manifest = gen_memory_image([Placement(params, offset=64, overwritten=True)], "zeros", 4096, seed=0)
    assert image == bytes(4096)
    assert manifest["structures"][0]["overwritten"] is True


@pytest.mark.parametrize("placements, size", [
    ([(0, None), (100, None)], 4096),
    ([(4000, None)], 4096),
    ([(None, None)], 0),
    ([(None, None)], 100),
])
def test_placement_errors(placements, size):
    rng = np.random.default_rng(6)
    with pytest.raises(FixtureGenerationError):
        gen_memory_image([Placement(orig(rng), offset=offset) for offset, _ in placements], "zeros", size)


def test_empty_image_without_placements():
    image, manifest = gen_memory_image([], "zeros", 0)
    assert image == b"" and manifest["structures"] == []


def test_ssh_session_errors():
    rng = np.random.default_rng(7)
    keys = [orig(rng) for _ in range(4)]
    with pytest.raises(FixtureGenerationError):
        gen_ssh_session(keys, [])
    with pytest.raises(FixtureGenerationError):
        gen_ssh_session(keys[:3], [(Direction.C2S, b"\x05")])
    with pytest.raises(FixtureGenerationError):
        gen_ssh_session([keys[0]] * 4, [(Direction.C2S, b"\x05")])
    ietf = [KeystreamParams(k.key, Layout.IETF_4_12, 0, bytes(12)) for k in keys]
    with pytest.raises(FixtureGenerationError):
        gen_ssh_session(ietf, [(Direction.C2S, b"\x05")])


def test_tls_session_errors():
    rng = np.random.default_rng(8)
    with pytest.raises(FixtureGenerationError):
        gen_tls_session(orig(rng), bytes(12), [])
    key = KeystreamParams(draw_key(rng), Layout.IETF_4_12, 1, bytes(12))
    with pytest.raises(FixtureGenerationError):
        gen_tls_session(key, bytes(8), [])


def test_forge_config_validation():
    with pytest.raises(InvalidConfigError):
        ForgeConfig(protocol="quic")
    with pytest.raises(InvalidConfigError):
        ForgeConfig(overwrite="both")
    with pytest.raises(InvalidConfigError):
        ForgeConfig(image_size=-1)


def test_forge_is_deterministic(tmp_path):
    artifacts = [FixtureForge(ForgeConfig(protocol="ssh", image_size=1 << 18, seed=3,
                                          output_dir=str(tmp_path / name))).initiate_fixture_forge()
                 for name in ("a", "b")]
    assert read(artifacts[0].image_path) == read(artifacts[1].image_path)
    assert read(artifacts[0].capture_path) == read(artifacts[1].capture_path)
    assert artifacts[0].manifest.structures == artifacts[1].manifest.structures
    other = FixtureForge(ForgeConfig(protocol="ssh", image_size=1 << 18, seed=4,
                                     output_dir=str(tmp_path / "c"))).initiate_fixture_forge()
    assert read(other.image_path) != read(artifacts[0].image_path)


def test_ssh_manifest(ssh_fixture):
    manifest = ssh_fixture.manifest
    assert manifest.protocol == "ssh"
    assert sorted(s["label"] for s in manifest.structures) == ["c2s_header", "c2s_main", "s2c_header", "s2c_main"]
    assert all(s["kind"] == "heap" and s["layout"] == "orig" for s in manifest.structures)
    assert manifest.details["first_encrypted_seq"] == {"c2s": 3, "s2c": 3}
    assert manifest.details["file_size"] == 150
    assert len({s["key"] for s in manifest.structures}) == 4
    with open(ssh_fixture.artifact.manifest_path) as handle:
        assert json.load(handle)["seed"] == 7


def test_ssh_contexts_point_past_last_packet():
    rng = np.random.default_rng(9)
    keys = [orig(rng) for _ in range(4)]
    script = [(Direction.C2S, b"\x15"), (Direction.S2C, b"\x15"), (Direction.C2S, b"\x5e" + bytes(59))]
    forged, manifest = gen_ssh_session(keys, script, seed=1)
    direction, header = forged.contexts["c2s_header"]
    _, main = forged.contexts["c2s_main"]
    assert direction is Direction.C2S
    assert header.nonce == main.nonce == (1).to_bytes(8, "big")
    assert header.counter == 1
    assert main.counter == 3
    _, s2c_main = forged.contexts["s2c_main"]
    assert (s2c_main.counter, s2c_main.nonce) == (0, (1).to_bytes(8, "big"))
    assert manifest["first_encrypted_seq"] == {"c2s": 1, "s2c": 1}


def test_tls_manifest(tls_fixture):
    manifest = tls_fixture.manifest
    assert manifest.protocol == "tls"
    assert sorted(s["label"] for s in manifest.structures) == ["c2s_write", "s2c_write"]
    assert all(s["kind"] == "stack" and s["layout"] == "ietf" for s in manifest.structures)
    assert manifest.details["record_counts"] == {"c2s": 3, "s2c": 3}
    assert manifest.details["planted_ordinal"] == 0


def test_raw_capture_format(ssh_raw_fixture):
    capture = ssh_raw_fixture.artifact.capture_path
    assert os.path.isdir(capture)
    assert sorted(os.listdir(capture)) == ["c2s.bin", "s2c.bin", "session.json"]


def test_strip_constant_fixture(forge_fixture):
    fixture = forge_fixture("tls_stripped", protocol="tls", image_size=1 << 18, noise="zeros", seed=5,
                            strip_constant=True)
    assert fixture.candidates == []
    assert all(s["strip_constant"] for s in fixture.manifest.structures)


def test_placement_overrides_and_decoys(forge_fixture):
    fixture = forge_fixture("ssh_decoys", protocol="ssh", image_size=1 << 18, noise="zeros", seed=6,
                            placements=({"offset": 1024}, {}, {}, {}, {"label": "decoy", "offset": 4096}))
    structures = {s["label"]: s for s in fixture.manifest.structures}
    assert structures["c2s_header"]["offset"] == 1024
    assert structures["decoy"]["offset"] == 4096
    assert {1024, 4096} <= {c.offset for c in fixture.candidates}
    assert len(fixture.candidates) == 5


def test_overlapping_override_is_rejected(tmp_path):
    config = ForgeConfig(protocol="tls", image_size=1 << 16, seed=1, output_dir=str(tmp_path / "overlap"),
                         placements=({"offset": 0}, {"offset": 64}))
    with pytest.raises(FixtureGenerationError):
        FixtureForge(config).initiate_fixture_forge()


def test_protocol_entry_points(tmp_path):
    config = ForgeConfig(protocol="ssh", image_size=1 << 16, noise="zeros", seed=2, output_dir=str(tmp_path / "tls"))
    artifact = forge_tls_fixture(config)
    assert artifact.manifest.protocol == "tls"
    artifact = forge_ssh_fixture(config._replace(output_dir=str(tmp_path / "ssh")))
    assert artifact.manifest.protocol == "ssh"
    assert len(artifact.manifest.structures) == 4
