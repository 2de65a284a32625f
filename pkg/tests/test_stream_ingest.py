import os
import socket
import struct
import tracemalloc

import dpkt
import pytest

from keyforge.constant import SSH_MSG_NEWKEYS, TLS_CONTENT_APPLICATION_DATA
from keyforge.entity.artifact_entity import CapturedSession, Direction, Protocol
from keyforge.component.stream_ingest import StreamIngest, detect_protocol, frame_session, frame_ssh, frame_tls, \
    load_capture, load_paired_streams, reassemble, write_paired_streams
from keyforge.exception import CaptureParseError, ProtocolDetectionError, TruncatedRecordError, \
    UnsupportedProtocolError


def session(client: bytes, server: bytes, protocol=None) -> CapturedSession:
    return CapturedSession(session_id="10.0.0.2:40000-10.0.0.1:443",
                           client_stream=client,
                           server_stream=server,
                           protocol=protocol or detect_protocol(client, server),
                           endpoints=(("10.0.0.2", 40000), ("10.0.0.1", 443)),
                           warnings=[])


def test_reassemble_reorders_and_keeps_first_copy():
    segments = [(1010, b"KLMNO"), (1000, b"ABCDEFGHIJ"), (1005, b"xxxxx")]
    stream, warnings = reassemble(segments, syn_seq=999)
    assert stream == b"ABCDEFGHIJKLMNO"
    assert warnings == []


def test_reassemble_truncates_at_gap():
    stream, warnings = reassemble([(0, b"abc"), (10, b"def")], syn_seq=(1 << 32) - 1)
    assert stream == b"abc"
    assert len(warnings) == 1 and "gap at stream byte 3" in warnings[0]


def test_reassemble_across_sequence_wrap():
    start = (1 << 32) - 4
    stream, _ = reassemble([(start, b"wxyz"), (0, b"1234")], syn_seq=start - 1)
    assert stream == b"wxyz1234"


def test_reassemble_keeps_earlier_capture_over_lower_offset():
    stream, warnings = reassemble([(1005, b"xxxxx"), (1000, b"ABCDEFGHIJ"), (1010, b"KL")], syn_seq=999)
    assert stream == b"ABCDExxxxxKL"
    assert warnings == []


def test_reassemble_memory_follows_payload_not_sequence_span():
    tracemalloc.start()
    try:
        stream, warnings = reassemble([(1000, b"SSH-2.0-a\r\n"), (1000 + (1 << 28), b"SSH-2.0-b\r\n")])
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert peak < 64 << 20
    assert stream == b"SSH-2.0-a\r\n"
    assert len(warnings) == 1 and "gap at stream byte 11" in warnings[0]


def test_empty_pcap_has_no_sessions(tmp_path):
    path = tmp_path / "empty.pcap"
    with open(path, "wb") as capture_file:
        dpkt.pcap.Writer(capture_file)
    assert load_capture(str(path)) == []


def test_detect_protocol():
    assert detect_protocol(b"SSH-2.0-x\r\n", b"") is Protocol.SSH
    assert detect_protocol(b"\x16\x03\x01\x00\x05hello", b"") is Protocol.TLS
    assert detect_protocol(b"\x00\x01\x02", b"") is Protocol.UNKNOWN


def test_pcap_reassembly_matches_raw_streams(ssh_fixture, ssh_raw_fixture):
    from_pcap = load_capture(ssh_fixture.artifact.capture_path)
    from_raw = load_capture(ssh_raw_fixture.artifact.capture_path)
    assert len(from_pcap) == 1
    assert from_pcap[0].warnings == []
    assert from_pcap[0].protocol is Protocol.SSH
    assert from_pcap[0].client_stream == from_raw[0].client_stream
    assert from_pcap[0].server_stream == from_raw[0].server_stream
    assert from_pcap[0].session_id == from_raw[0].session_id


def test_port_filter(ssh_fixture):
    assert load_capture(ssh_fixture.artifact.capture_path, port=9999) == []
    assert len(load_capture(ssh_fixture.artifact.capture_path, port=22)) == 1


def test_frame_ssh(ssh_fixture):
    framed = ssh_fixture.framed[0]
    assert framed.protocol is Protocol.SSH
    for direction in (Direction.C2S, Direction.S2C):
        assert framed.preambles[direction].startswith(b"SSH-2.0-")
        assert len(framed.frames[direction]) == 3
        assert framed.frames[direction][-1].body[1] == SSH_MSG_NEWKEYS
        assert framed.first_encrypted_seq[direction] == 3
        assert framed.tails[direction]
    assert framed.notes == []


def test_frame_ssh_short_tail_is_noted(ssh_fixture):
    original = ssh_fixture.framed[0].session
    cut = len(original.client_stream) - len(ssh_fixture.framed[0].tails[Direction.C2S]) + 10
    framed = frame_ssh(original._replace(client_stream=original.client_stream[:cut]))
    assert len(framed.tails[Direction.C2S]) == 10
    assert any("below" in note for note in framed.notes)


def test_frame_tls(tls_fixture):
    framed = tls_fixture.framed[0]
    assert framed.protocol is Protocol.TLS
    for direction in (Direction.C2S, Direction.S2C):
        encrypted = [frame for frame in framed.frames[direction] if frame.encrypted]
        assert [frame.seq_no for frame in encrypted] == [0, 1, 2]
        assert all(frame.header[0] == TLS_CONTENT_APPLICATION_DATA for frame in encrypted)
        assert all(frame.seq_no is None for frame in framed.frames[direction] if not frame.encrypted)


def test_truncated_tls_record_keeps_partial(tls_fixture):
    original = tls_fixture.framed[0].session
    with pytest.raises(TruncatedRecordError) as error:
        frame_tls(original._replace(client_stream=original.client_stream[:-7]))
    partial = error.value.partial
    assert len([f for f in partial.frames[Direction.C2S] if f.encrypted]) == 2
    assert partial.notes


def test_truncated_tls_session_is_framed_by_ingest(tls_fixture, tmp_path):
    original = tls_fixture.framed[0].session
    directory = write_paired_streams(str(tmp_path / "cut"),
                                     original._replace(client_stream=original.client_stream[:-7]))
    framed, diagnostics = StreamIngest().initiate_stream_ingest(directory)
    assert len(framed) == 1
    assert diagnostics == []


def _server_hello_13() -> bytes:
    extension = struct.pack(">HHH", 43, 2, 0x0304)
    body = (struct.pack(">H", 0x0303) + bytes(32) + b"\x00" + struct.pack(">H", 0x1303) + b"\x00" +
            struct.pack(">H", len(extension)) + extension)
    handshake = bytes([2]) + len(body).to_bytes(3, "big") + body
    return struct.pack(">BHH", 0x16, 0x0303, len(handshake)) + handshake


def test_tls13_is_rejected():
    client_hello = struct.pack(">BHH", 0x16, 0x0301, 4) + b"\x01\x00\x00\x00"
    with pytest.raises(UnsupportedProtocolError):
        frame_session(session(client_hello, _server_hello_13()))


def test_unknown_protocol():
    with pytest.raises(ProtocolDetectionError):
        frame_session(session(b"\x00" * 40, b"\x00" * 40))


def test_ingest_of_undetectable_streams_fails(tmp_path):
    directory = tmp_path / "noise"
    directory.mkdir()
    (directory / "c2s.bin").write_bytes(b"\x00garbage" * 10)
    (directory / "s2c.bin").write_bytes(b"\x01garbage" * 10)
    with pytest.raises(ProtocolDetectionError):
        StreamIngest().initiate_stream_ingest(str(directory))


def test_paired_streams_round_trip(tls_fixture, tmp_path):
    original = tls_fixture.framed[0].session
    loaded = load_paired_streams(write_paired_streams(str(tmp_path / "pair"), original))
    assert loaded.session_id == original.session_id
    assert loaded.protocol is Protocol.TLS
    assert (loaded.client_stream, loaded.server_stream) == (original.client_stream, original.server_stream)


def test_missing_and_malformed_captures(tmp_path):
    with pytest.raises(CaptureParseError):
        load_capture(str(tmp_path / "absent.pcap"))
    garbage = tmp_path / "garbage.pcap"
    garbage.write_bytes(os.urandom(64))
    with pytest.raises(CaptureParseError):
        load_capture(str(garbage))


def test_ipv6_tcp_is_rejected(tmp_path):
    tcp = bytes(dpkt.tcp.TCP(sport=40000, dport=22, seq=1, flags=dpkt.tcp.TH_ACK, data=b"SSH-2.0-x\r\n"))
    ip6 = struct.pack(">IHBB16s16s", 6 << 28, len(tcp), dpkt.ip.IP_PROTO_TCP, 64,
                      socket.inet_pton(socket.AF_INET6, "fd00::2"),
                      socket.inet_pton(socket.AF_INET6, "fd00::1")) + tcp
    frame = b"\x04" * 6 + b"\x02" * 6 + struct.pack(">H", dpkt.ethernet.ETH_TYPE_IP6) + ip6
    path = tmp_path / "v6.pcap"
    with open(path, "wb") as capture_file:
        writer = dpkt.pcap.Writer(capture_file, linktype=dpkt.pcap.DLT_EN10MB)
        writer.writepkt(frame, ts=0)
    with pytest.raises(UnsupportedProtocolError):
        load_capture(str(path))
