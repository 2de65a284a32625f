import os
import sys
import socket
import struct

import dpkt
import numpy as np

from typing import Dict, List, Optional, Sequence, Tuple
from keyforge.constant import *
from keyforge.logger import logging
from keyforge.entity.config_entity import ForgeConfig
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.artifact_entity import CapturedSession, Direction, FixtureManifest, ForgeArtifact, \
    ForgedSession, Placement, Protocol
from keyforge.component.chacha_core import aead_encrypt, init_state, keystream_block, poly1305_key_gen, \
    poly1305_mac, serialize_state, validate_params, xor_cipher
from keyforge.component.artefact_scan import shannon_entropy
from keyforge.component.stream_ingest import write_paired_streams
from keyforge.utils.utils import read_json, write_json
from keyforge.exception import FixtureGenerationError, KeyforgeException

LICENSE_TEXT = (
    b"Permission is hereby granted, free of charge, to any person obtaining a copy of this software "
    b"and associated documentation files (the \"Software\"), to deal in the Software without "
    b"restriction, including without limitation the rights to use, copy, modify, merge, publish, "
    b"distribute, sublicense, and/or sell copies of the Software, and to permit persons to whom the "
    b"Software is furnished to do so, subject to the following conditions:\n\nThe above copyright "
    b"notice and this permission notice shall be included in all copies or substantial portions of "
    b"the Software.\n\nTHE SOFTWARE IS PROVIDED \"AS IS\", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR "
    b"IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A "
    b"PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE "
    b"LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR "
    b"OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS "
    b"IN THE SOFTWARE.\n"
)

SSH_CLIENT_BANNER = b"SSH-2.0-OpenSSH_9.6\r\n"
SSH_SERVER_BANNER = b"SSH-2.0-OpenSSH_9.6p1 Ubuntu-3ubuntu13\r\n"
SSH_CIPHER_NAME = b"chacha20-poly1305@openssh.com"
SCP_CHUNK_SIZE = 32768
TLS_MAX_FRAGMENT = 16384
TLS_SUITE_CHACHA20_POLY1305 = 0xCCA8
STACK_REGION_FRACTION = 0.75
PLACEMENT_ATTEMPTS = 10000
PCAP_BASE_TIMESTAMP = 1700000000.0
PCAP_TIMESTAMP_STEP = 0.0005
CLIENT_MAC = b"\x02\x00\x00\x00\x00\x02"
SERVER_MAC = b"\x02\x00\x00\x00\x00\x01"
CLIENT_ADDRESS = "10.0.0.2"
SERVER_ADDRESS = "10.0.0.1"


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _random_bytes(rng: np.random.Generator, size: int) -> bytes:
    return rng.integers(0, 256, size, dtype=np.uint8).tobytes()


def draw_key(rng: np.random.Generator, entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD) -> bytes:
    """Random 32-byte key whose byte entropy clears the scan threshold."""
    while True:
        key = _random_bytes(rng, KEY_SIZE)
        if shannon_entropy(key) > entropy_threshold:
            return key


def make_noise(profile: str, size: int, rng: np.random.Generator) -> np.ndarray:
    if profile not in NOISE_PROFILES:
        raise FixtureGenerationError(f"unknown noise profile {profile!r}, expected one of {NOISE_PROFILES}")
    if profile == "zeros":
        return np.zeros(size, dtype=np.uint8)
    if profile == "random":
        return rng.integers(0, 256, size, dtype=np.uint8)
    if profile == "text":
        text = np.frombuffer(LICENSE_TEXT, dtype=np.uint8)
        start = int(rng.integers(0, len(text)))
        return np.resize(np.roll(text, -start), size)
    noise = np.empty(size, dtype=np.uint8)
    for start in range(0, size, MIXED_NOISE_BLOCK):
        block = min(MIXED_NOISE_BLOCK, size - start)
        noise[start:start + block] = make_noise(("zeros", "text", "random")[int(rng.integers(0, 3))], block, rng)
    return noise


def structure_bytes(params: KeystreamParams,
                    strip_constant: bool = False,
                    rng: Optional[np.random.Generator] = None) -> bytes:
    """constant | key | counter+nonce | cached keystream block | zero index"""
    state = init_state(params)
    header = serialize_state(state)
    if strip_constant:
        header = _random_bytes(rng if rng is not None else _rng(None), len(CONSTANT_STRING)) + \
                 header[len(CONSTANT_STRING):]
    return header + keystream_block(state) + b"\x00" * STRUCTURE_INDEX_SIZE


def _placement_window(kind: str, size: int) -> Tuple[int, int, int]:
    boundary = int(size * STACK_REGION_FRACTION)
    if kind == "heap":
        return 0, boundary - STRUCTURE_SIZE, 16
    if kind == "stack":
        return boundary, size - STRUCTURE_SIZE, 8
    raise FixtureGenerationError(f"unknown placement kind {kind!r}, expected heap or stack")


def _overlaps(offset: int, taken: List[Tuple[int, int]]) -> bool:
    return any(offset < end and start < offset + STRUCTURE_SIZE for start, end in taken)


def resolve_offsets(placements: Sequence[Placement], size: int, rng: np.random.Generator) -> List[int]:
    """Explicit offsets are checked first; the rest are drawn inside their kind's region."""
    if placements and size < STRUCTURE_SIZE:
        raise FixtureGenerationError(f"image of {size} bytes cannot hold a {STRUCTURE_SIZE}-byte structure")
    offsets: List[Optional[int]] = [None] * len(placements)
    taken = []
    for index, placement in enumerate(placements):
        if placement.offset is None:
            continue
        offset = int(placement.offset)
        if offset < 0 or offset + STRUCTURE_SIZE > size:
            raise FixtureGenerationError(f"placement {index} at offset {offset} does not fit {size} bytes")
        if _overlaps(offset, taken):
            raise FixtureGenerationError(f"placement {index} at offset {offset} overlaps another structure")
        taken.append((offset, offset + STRUCTURE_SIZE))
        offsets[index] = offset
    for index, placement in enumerate(placements):
        if offsets[index] is not None:
            continue
        low, high, alignment = _placement_window(placement.kind, size)
        if high < low:
            raise FixtureGenerationError(f"no room for a {placement.kind} structure in {size} bytes")
        slots = (high - low) // alignment + 1
        for _ in range(PLACEMENT_ATTEMPTS):
            offset = low + int(rng.integers(0, slots)) * alignment
            if not _overlaps(offset, taken):
                break
        else:
            raise FixtureGenerationError(f"could not place structure {index} without overlap")
        taken.append((offset, offset + STRUCTURE_SIZE))
        offsets[index] = offset
    return offsets


def params_to_dict(params: KeystreamParams) -> dict:
    return {"layout": Layout(params.layout).value,
            "key": bytes(params.key).hex(),
            "counter": int(params.counter),
            "nonce": bytes(params.nonce).hex()}


def gen_memory_image(placements: Sequence[Placement],
                     noise: str,
                     size: int,
                     seed=None) -> Tuple[bytes, dict]:
    """
    Build a memory image: noise background with base structures written at the placements.
    :return: image bytes and a manifest dict listing every structure written
    """
    rng = _rng(seed)
    if size < 0:
        raise FixtureGenerationError(f"image size must not be negative, got {size}")
    offsets = resolve_offsets(placements, size, rng)
    image = make_noise(noise, size, rng)
    structures = []
    for placement, offset in zip(placements, offsets):
        params = validate_params(placement.params)
        image[offset:offset + STRUCTURE_SIZE] = np.frombuffer(
            structure_bytes(params, placement.strip_constant, rng), dtype=np.uint8)
        if placement.overwritten:
            image[offset:offset + STRUCTURE_SIZE] = make_noise(noise, STRUCTURE_SIZE, rng)
        structures.append({"label": placement.label,
                           "offset": offset,
                           "kind": placement.kind,
                           "strip_constant": bool(placement.strip_constant),
                           "overwritten": bool(placement.overwritten),
                           **params_to_dict(params)})
        logging.debug(f"structure {placement.label} at {offset} ({placement.kind})")
    return image.tobytes(), {"size": size, "noise": noise, "structures": structures}


def _ssh_string(value: bytes) -> bytes:
    return struct.pack(">I", len(value)) + value


def _ssh_name_list(*names: bytes) -> bytes:
    return _ssh_string(b",".join(names))


def ssh_handshake_script(rng: np.random.Generator) -> List[Tuple[Direction, bytes]]:
    """Placeholder KEXINIT / ECDH / NEWKEYS exchange; only the message codes matter downstream."""
    def kexinit() -> bytes:
        return (bytes([SSH_MSG_KEXINIT]) + _random_bytes(rng, 16) +
                _ssh_name_list(b"curve25519-sha256") + _ssh_name_list(b"ssh-ed25519") +
                _ssh_name_list(SSH_CIPHER_NAME) + _ssh_name_list(SSH_CIPHER_NAME) +
                _ssh_name_list(b"hmac-sha2-256") + _ssh_name_list(b"hmac-sha2-256") +
                _ssh_name_list(b"none") + _ssh_name_list(b"none") +
                _ssh_name_list() + _ssh_name_list() + b"\x00" + struct.pack(">I", 0))

    host_key = _ssh_string(b"ssh-ed25519") + _ssh_string(_random_bytes(rng, 32))
    signature = _ssh_string(b"ssh-ed25519") + _ssh_string(_random_bytes(rng, 64))
    return [(Direction.C2S, kexinit()),
            (Direction.S2C, kexinit()),
            (Direction.C2S, bytes([SSH_MSG_KEX_ECDH_INIT]) + _ssh_string(_random_bytes(rng, 32))),
            (Direction.S2C, bytes([SSH_MSG_KEX_ECDH_REPLY]) + _ssh_string(host_key) +
             _ssh_string(_random_bytes(rng, 32)) + _ssh_string(signature)),
            (Direction.S2C, bytes([SSH_MSG_NEWKEYS])),
            (Direction.C2S, bytes([SSH_MSG_NEWKEYS]))]


def scp_upload_script(file_name: str,
                      contents: bytes,
                      user: str = "analyst",
                      password: str = "correct horse battery staple") -> List[Tuple[Direction, bytes]]:
    """Service request, password login, session channel and an `scp -t` upload of one file."""
    channel = struct.pack(">I", 0)
    remote_channel = struct.pack(">I", 0)
    script = [
        (Direction.C2S, bytes([SSH_MSG_SERVICE_REQUEST]) + _ssh_string(b"ssh-userauth")),
        (Direction.S2C, bytes([SSH_MSG_SERVICE_ACCEPT]) + _ssh_string(b"ssh-userauth")),
        (Direction.C2S, bytes([SSH_MSG_USERAUTH_REQUEST]) + _ssh_string(user.encode()) +
         _ssh_string(b"ssh-connection") + _ssh_string(b"password") + b"\x00" +
         _ssh_string(password.encode())),
        (Direction.S2C, bytes([SSH_MSG_USERAUTH_SUCCESS])),
        (Direction.C2S, bytes([SSH_MSG_CHANNEL_OPEN]) + _ssh_string(b"session") + channel +
         struct.pack(">II", 2097152, SCP_CHUNK_SIZE)),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_OPEN_CONFIRMATION]) + channel + remote_channel +
         struct.pack(">II", 2097152, SCP_CHUNK_SIZE)),
        (Direction.C2S, bytes([SSH_MSG_CHANNEL_REQUEST]) + remote_channel + _ssh_string(b"exec") + b"\x01" +
         _ssh_string(f"scp -t /tmp/{file_name}".encode())),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_SUCCESS]) + channel),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_DATA]) + channel + _ssh_string(b"\x00")),
        (Direction.C2S, bytes([SSH_MSG_CHANNEL_DATA]) + remote_channel +
         _ssh_string(f"C0644 {len(contents)} {file_name}\n".encode())),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_DATA]) + channel + _ssh_string(b"\x00")),
    ]
    for start in range(0, len(contents), SCP_CHUNK_SIZE):
        script.append((Direction.C2S, bytes([SSH_MSG_CHANNEL_DATA]) + remote_channel +
                       _ssh_string(contents[start:start + SCP_CHUNK_SIZE])))
    script.extend([
        (Direction.C2S, bytes([SSH_MSG_CHANNEL_DATA]) + remote_channel + _ssh_string(b"\x00")),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_DATA]) + channel + _ssh_string(b"\x00")),
        (Direction.C2S, bytes([SSH_MSG_CHANNEL_EOF]) + remote_channel),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_EOF]) + channel),
        (Direction.S2C, bytes([SSH_MSG_CHANNEL_CLOSE]) + channel),
        (Direction.C2S, bytes([SSH_MSG_CHANNEL_CLOSE]) + remote_channel),
    ])
    return script


def _ssh_padding(rng: np.random.Generator, body_length: int, length_counted: bool) -> int:
    # cleartext packets align length field + packet; the chacha cipher aligns the packet alone
    aligned = body_length + (SSH_LENGTH_FIELD_SIZE if length_counted else 0)
    padding = SSH_MIN_PADDING + (-(aligned + SSH_MIN_PADDING) % SSH_BLOCK_ALIGNMENT)
    return padding + SSH_BLOCK_ALIGNMENT * int(rng.integers(0, 4))


def _ssh_nonce(seq_no: int) -> bytes:
    return seq_no.to_bytes(ORIG_NONCE_SIZE, "big")


def gen_ssh_session(keys: Sequence[KeystreamParams],
                    script: Sequence[Tuple[Direction, bytes]],
                    seed=None,
                    server_port: int = 22) -> Tuple[ForgedSession, dict]:
    """
    Emit an SSH session with chacha20-poly1305@openssh.com protection.
    :param keys: (c2s header, c2s main, s2c header, s2c main) contexts, ORIG layout, distinct keys
    :param script: (direction, message) pairs; a direction encrypts everything after its NEWKEYS
    :return: the forged session and a manifest dict with per-direction plaintexts
    """
    if not script:
        raise FixtureGenerationError("SSH script is empty")
    if len(keys) != 4:
        raise FixtureGenerationError(f"SSH sessions need 4 keys, got {len(keys)}")
    keys = [validate_params(params) for params in keys]
    if any(params.layout is not Layout.ORIG_8_8 for params in keys):
        raise FixtureGenerationError("SSH keys must use the ORIG_8_8 layout")
    if len({params.key for params in keys}) != 4:
        raise FixtureGenerationError("SSH keys must be distinct")
    rng = _rng(seed)
    direction_keys = {Direction.C2S: (keys[0].key, keys[1].key), Direction.S2C: (keys[2].key, keys[3].key)}
    seq_no = {Direction.C2S: 0, Direction.S2C: 0}
    encrypted = {Direction.C2S: False, Direction.S2C: False}
    last_length = {Direction.C2S: None, Direction.S2C: None}
    first_encrypted_seq = {Direction.C2S: None, Direction.S2C: None}
    plaintexts = {Direction.C2S: [], Direction.S2C: []}
    chunks = [(Direction.C2S, SSH_CLIENT_BANNER), (Direction.S2C, SSH_SERVER_BANNER)]

    for direction, payload in script:
        direction = Direction(direction)
        payload = bytes(payload)
        if not payload:
            raise FixtureGenerationError("SSH messages need at least a message code")
        padding = _ssh_padding(rng, 1 + len(payload), not encrypted[direction])
        packet = bytes([padding]) + payload + _random_bytes(rng, padding)
        length_field = struct.pack(">I", len(packet))
        if encrypted[direction]:
            header_key, main_key = direction_keys[direction]
            nonce = _ssh_nonce(seq_no[direction])
            encrypted_length = xor_cipher(KeystreamParams(header_key, Layout.ORIG_8_8, SSH_LENGTH_COUNTER, nonce),
                                          length_field)
            ciphertext = xor_cipher(KeystreamParams(main_key, Layout.ORIG_8_8, SSH_PAYLOAD_COUNTER, nonce), packet)
            tag = poly1305_mac(poly1305_key_gen(main_key, nonce, Layout.ORIG_8_8), encrypted_length + ciphertext)
            chunks.append((direction, encrypted_length + ciphertext + tag))
            plaintexts[direction].append({"seq_no": seq_no[direction], "plaintext": payload.hex()})
            last_length[direction] = len(packet)
            if first_encrypted_seq[direction] is None:
                first_encrypted_seq[direction] = seq_no[direction]
        else:
            chunks.append((direction, length_field + packet))
            if payload[0] == SSH_MSG_NEWKEYS:
                encrypted[direction] = True
        seq_no[direction] += 1

    contexts = {}
    for direction, (header_key, main_key) in direction_keys.items():
        if last_length[direction] is None:
            nonce, header_counter, main_counter = _ssh_nonce(seq_no[direction]), 0, 0
        else:
            nonce = _ssh_nonce(seq_no[direction] - 1)
            header_counter = SSH_LENGTH_COUNTER + 1
            main_counter = SSH_PAYLOAD_COUNTER + -(-last_length[direction] // BLOCK_SIZE)
        contexts[f"{direction.value}_header"] = (direction, KeystreamParams(header_key, Layout.ORIG_8_8,
                                                                            header_counter, nonce))
        contexts[f"{direction.value}_main"] = (direction, KeystreamParams(main_key, Layout.ORIG_8_8,
                                                                          main_counter, nonce))

    client = (CLIENT_ADDRESS, 40000 + int(rng.integers(0, 20000)))
    server = (SERVER_ADDRESS, server_port)
    session = _captured_session(chunks, Protocol.SSH, client, server)
    manifest = {"plaintexts": {d.value: plaintexts[d] for d in plaintexts},
                "first_encrypted_seq": {d.value: first_encrypted_seq[d] if first_encrypted_seq[d] is not None
                                        else seq_no[d] for d in seq_no},
                "packet_counts": {d.value: seq_no[d] for d in seq_no}}
    logging.info(f"Forged SSH session {session.session_id}: "
                 f"{len(plaintexts[Direction.C2S])} c2s and {len(plaintexts[Direction.S2C])} s2c encrypted packet(s)")
    return ForgedSession(session=session, chunks=chunks, contexts=contexts), manifest


def _captured_session(chunks, protocol: Protocol, client, server) -> CapturedSession:
    return CapturedSession(session_id=f"{client[0]}:{client[1]}-{server[0]}:{server[1]}",
                           client_stream=b"".join(data for d, data in chunks if d is Direction.C2S),
                           server_stream=b"".join(data for d, data in chunks if d is Direction.S2C),
                           protocol=protocol,
                           endpoints=(client, server),
                           warnings=[])


def _tls_record(content_type: int, body: bytes, version: int = TLS_VERSION_1_2) -> bytes:
    return struct.pack(">BHH", content_type, version, len(body)) + body


def _handshake(message_type: int, body: bytes) -> bytes:
    return bytes([message_type]) + len(body).to_bytes(3, "big") + body


def tls_handshake_chunks(rng: np.random.Generator) -> List[Tuple[Direction, bytes]]:
    """Placeholder TLS 1.2 handshake ending in both ChangeCipherSpec records."""
    suite = struct.pack(">H", TLS_SUITE_CHACHA20_POLY1305)
    client_hello = (struct.pack(">H", TLS_VERSION_1_2) + _random_bytes(rng, 32) + b"\x00" +
                    struct.pack(">H", 2) + suite + b"\x01\x00" + struct.pack(">H", 0))
    session_id = _random_bytes(rng, 32)
    server_hello = (struct.pack(">H", TLS_VERSION_1_2) + _random_bytes(rng, 32) + bytes([len(session_id)]) +
                    session_id + suite + b"\x00" + struct.pack(">H", 0))
    certificate = _random_bytes(rng, 3) + _random_bytes(rng, 512)
    key_exchange = bytes([32]) + _random_bytes(rng, 32)
    return [(Direction.C2S, _tls_record(TLS_CONTENT_HANDSHAKE, _handshake(1, client_hello), 0x0301)),
            (Direction.S2C, _tls_record(TLS_CONTENT_HANDSHAKE,
                                        _handshake(TLS_HANDSHAKE_SERVER_HELLO, server_hello) +
                                        _handshake(11, certificate) + _handshake(14, b""))),
            (Direction.C2S, _tls_record(TLS_CONTENT_HANDSHAKE, _handshake(16, key_exchange))),
            (Direction.C2S, _tls_record(TLS_CONTENT_CHANGE_CIPHER_SPEC, b"\x01")),
            (Direction.S2C, _tls_record(TLS_CONTENT_CHANGE_CIPHER_SPEC, b"\x01"))]


def default_http_script(rng: np.random.Generator) -> List[Tuple[Direction, bytes]]:
    def response(body: bytes, status: bytes = b"200 OK") -> bytes:
        return (b"HTTP/1.1 " + status + b"\r\nServer: nginx\r\nContent-Type: text/html; charset=utf-8\r\n"
                b"Content-Length: " + str(len(body)).encode() + b"\r\n\r\n" + body)

    session = _random_bytes(rng, 16).hex().encode()
    form = b"username=analyst&password=correct+horse+battery+staple"
    return [
        (Direction.C2S, b"GET / HTTP/1.1\r\nHost: intranet.example\r\nUser-Agent: Mozilla/5.0\r\n"
                        b"Accept: text/html\r\n\r\n"),
        (Direction.S2C, response(b"<html><head><title>Intranet</title></head><body>"
                                 b"<form method=\"post\" action=\"/login\">Sign in</form></body></html>\n")),
        (Direction.C2S, b"POST /login HTTP/1.1\r\nHost: intranet.example\r\n"
                        b"Content-Type: application/x-www-form-urlencoded\r\n"
                        b"Content-Length: " + str(len(form)).encode() + b"\r\n\r\n" + form),
        (Direction.S2C, b"HTTP/1.1 302 Found\r\nLocation: /account\r\nSet-Cookie: session=" + session +
                        b"; HttpOnly\r\nContent-Length: 0\r\n\r\n"),
        (Direction.C2S, b"GET /account HTTP/1.1\r\nHost: intranet.example\r\nCookie: session=" + session +
                        b"\r\n\r\n"),
        (Direction.S2C, response(b"<html><body><h1>Account</h1><p>Balance: 1,024.00 EUR</p></body></html>\n")),
    ]


def tls_nonce(iv: bytes, ordinal: int) -> bytes:
    pad = b"\x00" * 4 + ordinal.to_bytes(8, "big")
    return bytes(a ^ b for a, b in zip(iv, pad))


def gen_tls_session(key: KeystreamParams,
                    iv: bytes,
                    http_script: Sequence[Tuple[Direction, bytes]],
                    seed=None,
                    planted_ordinal: int = 0,
                    server_key: Optional[KeystreamParams] = None,
                    server_iv: Optional[bytes] = None,
                    server_port: int = 443) -> Tuple[ForgedSession, dict]:
    """
    Emit a TLS 1.2 ChaCha20-Poly1305 session: placeholder handshake, both ChangeCipherSpecs,
    then application data sealed with nonce = iv XOR pad96(ordinal) and counter 1.
    `key`/`iv` protect the client direction; the server's are drawn from the seed unless given.
    The contexts returned hold the nonce of record `planted_ordinal` in each direction.
    """
    rng = _rng(seed)
    key = validate_params(key)
    if key.layout is not Layout.IETF_4_12:
        raise FixtureGenerationError("TLS keys must use the IETF_4_12 layout")
    if len(iv) != IETF_NONCE_SIZE:
        raise FixtureGenerationError(f"TLS iv must be {IETF_NONCE_SIZE} bytes, got {len(iv)}")
    if planted_ordinal < 0:
        raise FixtureGenerationError(f"planted ordinal must not be negative, got {planted_ordinal}")
    if server_key is None:
        server_key = KeystreamParams(draw_key(rng), Layout.IETF_4_12, TLS_PAYLOAD_COUNTER, b"\x00" * 12)
    if server_iv is None:
        server_iv = _random_bytes(rng, IETF_NONCE_SIZE)
    secrets = {Direction.C2S: (key.key, bytes(iv)), Direction.S2C: (bytes(server_key.key), bytes(server_iv))}

    chunks = tls_handshake_chunks(rng)
    ordinal = {Direction.C2S: 0, Direction.S2C: 0}
    plaintexts = {Direction.C2S: [], Direction.S2C: []}
    lengths = {Direction.C2S: {}, Direction.S2C: {}}
    for direction, data in http_script:
        direction = Direction(direction)
        data = bytes(data)
        fragments = [data[i:i + TLS_MAX_FRAGMENT] for i in range(0, len(data), TLS_MAX_FRAGMENT)] or [b""]
        record_key, record_iv = secrets[direction]
        for fragment in fragments:
            seq = ordinal[direction]
            aad = struct.pack(">QBHH", seq, TLS_CONTENT_APPLICATION_DATA, TLS_VERSION_1_2, len(fragment))
            sealed = aead_encrypt(record_key, tls_nonce(record_iv, seq), fragment, aad)
            chunks.append((direction, _tls_record(TLS_CONTENT_APPLICATION_DATA, sealed)))
            plaintexts[direction].append({"seq_no": seq, "plaintext": fragment.hex()})
            lengths[direction][seq] = len(fragment)
            ordinal[direction] += 1

    contexts = {}
    for direction, (record_key, record_iv) in secrets.items():
        counter = TLS_PAYLOAD_COUNTER + -(-lengths[direction].get(planted_ordinal, 0) // BLOCK_SIZE)
        contexts[f"{direction.value}_write"] = (direction, KeystreamParams(record_key, Layout.IETF_4_12, counter,
                                                                           tls_nonce(record_iv, planted_ordinal)))

    client = (CLIENT_ADDRESS, 40000 + int(rng.integers(0, 20000)))
    server = (SERVER_ADDRESS, server_port)
    session = _captured_session(chunks, Protocol.TLS, client, server)
    manifest = {"plaintexts": {d.value: plaintexts[d] for d in plaintexts},
                "planted_ordinal": planted_ordinal,
                "ivs": {d.value: secrets[d][1].hex() for d in secrets},
                "record_counts": {d.value: ordinal[d] for d in ordinal}}
    logging.info(f"Forged TLS session {session.session_id}: {ordinal[Direction.C2S]} c2s and "
                 f"{ordinal[Direction.S2C]} s2c application record(s)")
    return ForgedSession(session=session, chunks=chunks, contexts=contexts), manifest


def _tcp_packet(source, destination, seq: int, ack: int, flags: int, payload: bytes = b"") -> bytes:
    tcp = dpkt.tcp.TCP(sport=source[1], dport=destination[1], seq=seq % TCP_SEQ_MODULUS,
                       ack=ack % TCP_SEQ_MODULUS, flags=flags, win=65535, data=payload)
    ip = dpkt.ip.IP(src=socket.inet_aton(source[0]), dst=socket.inet_aton(destination[0]),
                    p=dpkt.ip.IP_PROTO_TCP, ttl=64, data=tcp)
    ip.len = len(ip)
    src_mac, dst_mac = (CLIENT_MAC, SERVER_MAC) if source[0] == CLIENT_ADDRESS else (SERVER_MAC, CLIENT_MAC)
    return bytes(dpkt.ethernet.Ethernet(src=src_mac, dst=dst_mac, type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


def write_pcap(path: str, forged: ForgedSession, seed=None, mss: int = DEFAULT_MSS) -> str:
    """Ethernet/IPv4/TCP capture: three-way handshake, MSS-sized segments in script order, FIN exchange."""
    rng = _rng(seed)
    client, server = forged.session.endpoints
    next_seq = {Direction.C2S: int(rng.integers(0, TCP_SEQ_MODULUS)),
                Direction.S2C: int(rng.integers(0, TCP_SEQ_MODULUS))}
    ends = {Direction.C2S: (client, server), Direction.S2C: (server, client)}
    ack, syn, fin, push = dpkt.tcp.TH_ACK, dpkt.tcp.TH_SYN, dpkt.tcp.TH_FIN, dpkt.tcp.TH_PUSH

    packets = [_tcp_packet(client, server, next_seq[Direction.C2S], 0, syn),
               _tcp_packet(server, client, next_seq[Direction.S2C], next_seq[Direction.C2S] + 1, syn | ack)]
    next_seq = {direction: seq + 1 for direction, seq in next_seq.items()}
    packets.append(_tcp_packet(client, server, next_seq[Direction.C2S], next_seq[Direction.S2C], ack))
    for direction, data in forged.chunks:
        source, destination = ends[direction]
        peer = Direction.S2C if direction is Direction.C2S else Direction.C2S
        for start in range(0, len(data), mss):
            segment = data[start:start + mss]
            packets.append(_tcp_packet(source, destination, next_seq[direction], next_seq[peer], ack | push, segment))
            next_seq[direction] += len(segment)
    for direction in (Direction.C2S, Direction.S2C):
        source, destination = ends[direction]
        peer = Direction.S2C if direction is Direction.C2S else Direction.C2S
        packets.append(_tcp_packet(source, destination, next_seq[direction], next_seq[peer], fin | ack))
        next_seq[direction] += 1

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as capture_file:
        writer = dpkt.pcap.Writer(capture_file, snaplen=65535, linktype=dpkt.pcap.DLT_EN10MB)
        for index, packet in enumerate(packets):
            writer.writepkt(packet, ts=PCAP_BASE_TIMESTAMP + index * PCAP_TIMESTAMP_STEP)
    logging.info(f"Wrote {len(packets)} packet(s) to [{path}]")
    return path


def _placements_for(forged: ForgedSession,
                    kind: str,
                    strip_constant: bool,
                    overwrite: str,
                    overrides: Sequence[dict],
                    rng: np.random.Generator) -> List[Placement]:
    placements = [Placement(params=params,
                            kind=kind,
                            offset=None,
                            strip_constant=strip_constant,
                            overwritten=direction.value == overwrite,
                            label=label)
                  for label, (direction, params) in forged.contexts.items()]
    for index, override in enumerate(overrides or []):
        override = dict(override)
        if index < len(placements):
            placements[index] = placements[index]._replace(
                **{field: override[field] for field in ("kind", "offset", "strip_constant", "overwritten")
                   if field in override})
            continue
        layout = Layout(override.get("layout", Layout.ORIG_8_8.value))
        decoy = KeystreamParams(key=draw_key(rng), layout=layout, counter=int(override.get("counter", 0)),
                                nonce=_random_bytes(rng, IETF_NONCE_SIZE if layout is Layout.IETF_4_12
                                                    else ORIG_NONCE_SIZE))
        placements.append(Placement(params=decoy,
                                    kind=override.get("kind", "heap"),
                                    offset=override.get("offset"),
                                    strip_constant=bool(override.get("strip_constant", False)),
                                    overwritten=bool(override.get("overwritten", False)),
                                    label=override.get("label", f"decoy_{index}")))
    return placements


class FixtureForge:
    """Writes a memory image, a matching capture and a JSON manifest for one seeded session."""

    def __init__(self, forge_config: ForgeConfig):
        try:
            logging.info(f"{'='*20} Fixture forge log started. {'='*20}")
            self.forge_config = forge_config
            if forge_config.protocol not in (Protocol.SSH.value, Protocol.TLS.value):
                raise FixtureGenerationError(f"unknown fixture protocol {forge_config.protocol!r}")
            if forge_config.capture_format not in ("pcap", "raw"):
                raise FixtureGenerationError(f"unknown capture format {forge_config.capture_format!r}")
            if forge_config.overwrite not in ("none", Direction.C2S.value, Direction.S2C.value):
                raise FixtureGenerationError(f"unknown overwrite target {forge_config.overwrite!r}")
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def forge_session(self, seeds: List[np.random.SeedSequence]) -> Tuple[ForgedSession, dict, str]:
        config = self.forge_config
        rng = _rng(seeds[0])
        if config.protocol == Protocol.SSH.value:
            keys = [KeystreamParams(draw_key(rng), Layout.ORIG_8_8, 0, b"\x00" * ORIG_NONCE_SIZE) for _ in range(4)]
            file_name = f"report_{int(rng.integers(0, 10000)):04d}.bin"
            contents = _random_bytes(rng, int(config.file_size))
            script = ssh_handshake_script(rng) + scp_upload_script(file_name, contents)
            forged, manifest = gen_ssh_session(keys, script, seeds[1])
            manifest.update({"file_name": file_name, "file_size": len(contents)})
            return forged, manifest, "heap"
        key = KeystreamParams(draw_key(rng), Layout.IETF_4_12, TLS_PAYLOAD_COUNTER, b"\x00" * IETF_NONCE_SIZE)
        iv = _random_bytes(rng, IETF_NONCE_SIZE)
        forged, manifest = gen_tls_session(key, iv, default_http_script(rng), seeds[1],
                                           planted_ordinal=int(config.tls_ordinal))
        return forged, manifest, "stack"

    def initiate_fixture_forge(self) -> ForgeArtifact:
        try:
            config = self.forge_config
            logging.info(f"Forging fixture with {config}")
            seeds = np.random.SeedSequence(int(config.seed)).spawn(5)
            forged, session_manifest, kind = self.forge_session(seeds)
            placements = _placements_for(forged, kind, bool(config.strip_constant), config.overwrite,
                                         config.placements, _rng(seeds[2]))
            image, image_manifest = gen_memory_image(placements, config.noise, int(config.image_size), seeds[3])

            os.makedirs(config.output_dir, exist_ok=True)
            image_path = os.path.join(config.output_dir, FORGE_IMAGE_FILE_NAME)
            with open(image_path, "wb") as image_file:
                image_file.write(image)
            if config.capture_format == "pcap":
                capture_path = write_pcap(os.path.join(config.output_dir, FORGE_CAPTURE_FILE_NAME),
                                          forged, seeds[4])
            else:
                capture_path = write_paired_streams(os.path.join(config.output_dir, FORGE_RAW_CAPTURE_DIR_NAME),
                                                    forged.session)

            details = {key: value for key, value in session_manifest.items() if key != "plaintexts"}
            details.update({"session_id": forged.session.session_id, "image_size": len(image)})
            manifest = FixtureManifest(seed=int(config.seed),
                                       protocol=config.protocol,
                                       structures=image_manifest["structures"],
                                       plaintexts=session_manifest["plaintexts"],
                                       image_path=image_path,
                                       capture_path=capture_path,
                                       countermeasures={"strip_constant": bool(config.strip_constant),
                                                        "overwrite": config.overwrite},
                                       noise=config.noise,
                                       details=details)
            manifest_path = os.path.join(config.output_dir, FORGE_MANIFEST_FILE_NAME)
            write_json(manifest_path, manifest._asdict())
            forge_artifact = ForgeArtifact(output_dir=config.output_dir,
                                           image_path=image_path,
                                           capture_path=capture_path,
                                           manifest_path=manifest_path,
                                           manifest=manifest,
                                           message=f"{config.protocol} fixture with {len(placements)} "
                                                   f"structure(s) in {config.output_dir}")
            logging.info(f"Fixture forge artifact: {forge_artifact.message}")
            return forge_artifact
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def __del__(self):
        logging.info(f"{'='*20} Fixture forge log completed. {'='*20}")


def forge_ssh_fixture(forge_config: ForgeConfig) -> ForgeArtifact:
    return FixtureForge(forge_config._replace(protocol=Protocol.SSH.value)).initiate_fixture_forge()


def forge_tls_fixture(forge_config: ForgeConfig) -> ForgeArtifact:
    return FixtureForge(forge_config._replace(protocol=Protocol.TLS.value)).initiate_fixture_forge()


def load_manifest(path: str) -> FixtureManifest:
    return FixtureManifest(**read_json(path))


def manifest_plaintexts(manifest: FixtureManifest) -> Dict[str, Dict[int, bytes]]:
    """direction value -> seq_no -> plaintext bytes"""
    return {direction: {entry["seq_no"]: bytes.fromhex(entry["plaintext"]) for entry in entries}
            for direction, entries in manifest.plaintexts.items()}
