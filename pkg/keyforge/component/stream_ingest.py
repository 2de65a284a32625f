import os
import sys
import json
import socket
import bisect
import struct

import dpkt

from typing import Dict, List, Optional, Tuple
from collections import defaultdict
from keyforge.constant import *
from keyforge.logger import logging
from keyforge.entity.artifact_entity import CapturedSession, Direction, Frame, FramedSession, Protocol
from keyforge.utils.utils import write_json
from keyforge.exception import CaptureParseError, KeyforgeException, ProtocolDetectionError, \
    TruncatedRecordError, UnsupportedProtocolError

_RAW_LINKTYPES = {PCAP_LINKTYPE_RAW, getattr(dpkt.pcap, "DLT_RAW", PCAP_LINKTYPE_RAW)}


def _address(raw: bytes) -> str:
    return socket.inet_ntoa(raw)


def _signed_delta(seq: int, reference: int) -> int:
    delta = (seq - reference) % TCP_SEQ_MODULUS
    return delta - TCP_SEQ_MODULUS if delta >= TCP_SEQ_MODULUS // 2 else delta


def _uncovered(offset: int, payload: bytes, starts: List[int], spans: List[Tuple[int, int, bytes]]):
    """Pieces of `payload` placed at `offset` that no earlier span covers."""
    end = offset + len(payload)
    cursor = offset
    index = max(bisect.bisect_right(starts, offset) - 1, 0)
    while cursor < end:
        while index < len(spans) and spans[index][1] <= cursor:
            index += 1
        if index < len(spans) and spans[index][0] <= cursor:
            cursor = spans[index][1]
            continue
        stop = min(end, spans[index][0]) if index < len(spans) else end
        yield cursor, stop, payload[cursor - offset:stop - offset]
        cursor = stop


def reassemble(segments: List[Tuple[int, bytes]], syn_seq: Optional[int] = None) -> Tuple[bytes, List[str]]:
    """
    Rebuild one direction's byte stream from (seq, payload) pairs given in capture order.
    Overlapping bytes keep the first copy captured; the stream stops at the first hole.
    :return: stream bytes and reassembly warnings
    """
    if not segments:
        return b"", []
    reference = segments[0][0]
    if syn_seq is not None:
        base = _signed_delta((syn_seq + 1) % TCP_SEQ_MODULUS, reference)
    else:
        base = min(_signed_delta(seq, reference) for seq, _ in segments)

    # disjoint (start, end, bytes) spans sorted by start
    starts: List[int] = []
    spans: List[Tuple[int, int, bytes]] = []
    for seq, payload in segments:
        offset = _signed_delta(seq, reference) - base
        if offset < 0:
            payload = payload[-offset:]
            offset = 0
        for span in list(_uncovered(offset, payload, starts, spans)):
            index = bisect.bisect_left(starts, span[0])
            starts.insert(index, span[0])
            spans.insert(index, span)

    chunks, position, warnings = [], 0, []
    for start, end, data in spans:
        if start > position:
            warnings.append(f"gap at stream byte {position}: {start - position} byte(s) never captured "
                            f"before byte {start}, stream truncated")
            break
        chunks.append(data)
        position = end
    return b"".join(chunks), warnings


def detect_protocol(client_stream: bytes, server_stream: bytes) -> Protocol:
    for stream in (client_stream, server_stream):
        head = stream[:8192]
        if head.startswith(SSH_IDENTIFICATION_PREFIX) or b"\n" + SSH_IDENTIFICATION_PREFIX in head:
            return Protocol.SSH
    if len(client_stream) >= 3 and client_stream[0] == TLS_CONTENT_HANDSHAKE and client_stream[1] == 3:
        return Protocol.TLS
    return Protocol.UNKNOWN


def _decode_ip(buf: bytes, linktype: int):
    if linktype == PCAP_LINKTYPE_ETHERNET:
        return dpkt.ethernet.Ethernet(buf).data
    if linktype in _RAW_LINKTYPES:
        if buf and buf[0] >> 4 == 6:
            return dpkt.ip6.IP6(buf)
        return dpkt.ip.IP(buf)
    raise CaptureParseError(f"unsupported pcap link type {linktype}")


def _read_pcap(path: str, port: Optional[int]) -> List[CapturedSession]:
    flows = {}
    try:
        with open(path, "rb") as capture_file:
            reader = dpkt.pcap.Reader(capture_file)
            linktype = reader.datalink()
            for index, (_, buf) in enumerate(reader):
                try:
                    ip = _decode_ip(buf, linktype)
                except (dpkt.UnpackError, IndexError, ValueError):
                    continue
                if isinstance(ip, dpkt.ip6.IP6):
                    if isinstance(ip.data, dpkt.tcp.TCP):
                        raise UnsupportedProtocolError(f"IPv6 TCP traffic in packet {index}; only IPv4 is supported")
                    continue
                if not isinstance(ip, dpkt.ip.IP) or not isinstance(ip.data, dpkt.tcp.TCP):
                    continue
                tcp = ip.data
                if port is not None and port not in (tcp.sport, tcp.dport):
                    continue
                source = (_address(ip.src), tcp.sport)
                destination = (_address(ip.dst), tcp.dport)
                flow_key = tuple(sorted((source, destination)))
                flow = flows.setdefault(flow_key, {"first_index": index, "syn": {}, "segments": defaultdict(list),
                                                   "client": None})
                if tcp.flags & dpkt.tcp.TH_SYN:
                    flow["syn"][source] = tcp.seq
                    if not tcp.flags & dpkt.tcp.TH_ACK:
                        flow["client"] = source
                if tcp.data:
                    if flow["client"] is None:
                        flow["client"] = source
                    flow["segments"][source].append((tcp.seq, bytes(tcp.data)))
    except (ValueError, dpkt.UnpackError) as e:
        raise CaptureParseError(f"malformed pcap {path}: {e}") from e

    sessions = []
    for flow_key, flow in sorted(flows.items(), key=lambda item: item[1]["first_index"]):
        client = flow["client"] or flow_key[0]
        server = flow_key[1] if client == flow_key[0] else flow_key[0]
        client_stream, client_warnings = reassemble(flow["segments"][client], flow["syn"].get(client))
        server_stream, server_warnings = reassemble(flow["segments"][server], flow["syn"].get(server))
        warnings = [f"c2s: {w}" for w in client_warnings] + [f"s2c: {w}" for w in server_warnings]
        session = CapturedSession(session_id=f"{client[0]}:{client[1]}-{server[0]}:{server[1]}",
                                  client_stream=client_stream,
                                  server_stream=server_stream,
                                  protocol=detect_protocol(client_stream, server_stream),
                                  endpoints=(client, server),
                                  warnings=warnings)
        for warning in warnings:
            logging.warning(f"[{session.session_id}] {warning}")
        sessions.append(session)
    return sessions


def load_paired_streams(directory: str) -> CapturedSession:
    """Read the raw paired-stream format: c2s.bin, s2c.bin and a session.json descriptor."""
    try:
        with open(os.path.join(directory, RAW_C2S_FILE_NAME), "rb") as c2s_file:
            client_stream = c2s_file.read()
        with open(os.path.join(directory, RAW_S2C_FILE_NAME), "rb") as s2c_file:
            server_stream = s2c_file.read()
        descriptor_path = os.path.join(directory, RAW_DESCRIPTOR_FILE_NAME)
        descriptor = {}
        if os.path.exists(descriptor_path):
            with open(descriptor_path) as descriptor_file:
                descriptor = json.load(descriptor_file)
    except (OSError, json.JSONDecodeError) as e:
        raise CaptureParseError(f"unreadable paired-stream capture {directory}: {e}") from e

    client_port, server_port = (descriptor.get("ports") or [0, 0])[:2]
    client_address, server_address = (descriptor.get("addresses") or ["0.0.0.0", "0.0.0.0"])[:2]
    protocol = descriptor.get("protocol")
    protocol = Protocol(protocol) if protocol else detect_protocol(client_stream, server_stream)
    return CapturedSession(session_id=f"{client_address}:{client_port}-{server_address}:{server_port}",
                           client_stream=client_stream,
                           server_stream=server_stream,
                           protocol=protocol,
                           endpoints=((client_address, client_port), (server_address, server_port)),
                           warnings=[])


def write_paired_streams(directory: str, session: CapturedSession) -> str:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, RAW_C2S_FILE_NAME), "wb") as c2s_file:
        c2s_file.write(session.client_stream)
    with open(os.path.join(directory, RAW_S2C_FILE_NAME), "wb") as s2c_file:
        s2c_file.write(session.server_stream)
    (client_address, client_port), (server_address, server_port) = session.endpoints
    descriptor = {"protocol": Protocol(session.protocol).value,
                  "ports": [client_port, server_port],
                  "addresses": [client_address, server_address]}
    write_json(os.path.join(directory, RAW_DESCRIPTOR_FILE_NAME), descriptor)
    return directory


def load_capture(path: str, port: Optional[int] = None) -> List[CapturedSession]:
    """
    Load a classic pcap (Ethernet or raw IPv4) or a paired-stream directory.
    :param path: pcap file or directory
    :param port: keep only TCP segments with this source or destination port
    :return: one CapturedSession per TCP 4-tuple in order of first appearance
    """
    if os.path.isdir(path):
        return [load_paired_streams(path)]
    if not os.path.exists(path):
        raise CaptureParseError(f"capture not found: {path}")
    return _read_pcap(path, port)


def _direction_streams(session: CapturedSession):
    return ((Direction.C2S, session.client_stream), (Direction.S2C, session.server_stream))


def _split_identification(stream: bytes) -> Tuple[Optional[int], bytes]:
    position = 0
    while position < min(len(stream), 8192):
        line_end = stream.find(b"\n", position)
        if line_end < 0:
            break
        line = stream[position:line_end + 1]
        position = line_end + 1
        if line.startswith(SSH_IDENTIFICATION_PREFIX):
            return position, stream[:position]
    return None, b""


def frame_ssh(session: CapturedSession) -> FramedSession:
    """
    Frame the cleartext binary packets of each direction up to and including NEWKEYS.
    Everything after NEWKEYS stays an undelimited tail: encrypted packet boundaries are
    only known once a header key decrypts the lengths.
    """
    preambles, frames, tails, first_encrypted_seq, notes = {}, {}, {}, {}, []
    for direction, stream in _direction_streams(session):
        frames[direction] = []
        preambles[direction] = b""
        tails[direction] = b""
        first_encrypted_seq[direction] = 0
        if not stream:
            continue
        position, preamble = _split_identification(stream)
        if position is None:
            raise ProtocolDetectionError(
                f"[{session.session_id}] no SSH identification string in {direction.value} stream"
            )
        preambles[direction] = preamble
        seq_no = 0
        newkeys_seen = False
        while position + SSH_LENGTH_FIELD_SIZE <= len(stream):
            packet_length = struct.unpack(">I", stream[position:position + SSH_LENGTH_FIELD_SIZE])[0]
            end = position + SSH_LENGTH_FIELD_SIZE + packet_length
            if packet_length < 2 or packet_length > SSH_MAX_PLAINTEXT_PACKET or end > len(stream):
                notes.append(f"{direction.value}: cleartext framing lost at stream byte {position}")
                break
            body = stream[position + SSH_LENGTH_FIELD_SIZE:end]
            frames[direction].append(Frame(direction=direction,
                                           seq_no=seq_no,
                                           header=stream[position:position + SSH_LENGTH_FIELD_SIZE],
                                           body=body,
                                           encrypted=False,
                                           protocol=Protocol.SSH))
            seq_no += 1
            position = end
            if body[1] == SSH_MSG_NEWKEYS:
                newkeys_seen = True
                break
        tails[direction] = stream[position:]
        first_encrypted_seq[direction] = seq_no
        if newkeys_seen and 0 < len(tails[direction]) < SSH_MIN_ENCRYPTED_PACKET:
            notes.append(f"{direction.value}: encrypted tail of {len(tails[direction])} byte(s) is below the "
                         f"{SSH_MIN_ENCRYPTED_PACKET}-byte packet minimum, no packet recoverable")
        elif not newkeys_seen and tails[direction]:
            notes.append(f"{direction.value}: {len(tails[direction])} byte(s) after cleartext packets without NEWKEYS")
        logging.info(f"[{session.session_id}] {direction.value}: {len(frames[direction])} cleartext packet(s), "
                     f"encrypted tail {len(tails[direction])} byte(s) from seq {seq_no}")
    return FramedSession(session=session, protocol=Protocol.SSH, preambles=preambles, frames=frames,
                         tails=tails, first_encrypted_seq=first_encrypted_seq, notes=notes)


def _server_hello_is_tls13(body: bytes) -> bool:
    # handshake type(1) length(3) version(2) random(32) session_id(1+n) suite(2) compression(1) extensions(2+n)
    try:
        if not body or body[0] != TLS_HANDSHAKE_SERVER_HELLO:
            return False
        position = 4 + 2 + 32
        position += 1 + body[position]
        position += 2 + 1
        if position + 2 > len(body):
            return False
        extensions_end = position + 2 + struct.unpack(">H", body[position:position + 2])[0]
        position += 2
        while position + 4 <= min(extensions_end, len(body)):
            extension_type, extension_length = struct.unpack(">HH", body[position:position + 4])
            value = body[position + 4:position + 4 + extension_length]
            if extension_type == TLS_EXTENSION_SUPPORTED_VERSIONS and value[:2] == struct.pack(">H", TLS_VERSION_1_3):
                return True
            position += 4 + extension_length
    except IndexError:
        return False
    return False


def frame_tls(session: CapturedSession) -> FramedSession:
    """
    Split each direction on 5-byte record headers. Records after that direction's
    ChangeCipherSpec are encrypted and numbered from 0.
    Raises TruncatedRecordError (with the partial result) when a record runs past its stream.
    """
    preambles, frames, tails, first_encrypted_seq, notes = {}, {}, {}, {}, []
    truncated = []
    for direction, stream in _direction_streams(session):
        frames[direction] = []
        preambles[direction] = b""
        tails[direction] = b""
        first_encrypted_seq[direction] = 0
        position = 0
        encrypted = False
        seq_no = 0
        while position < len(stream):
            if position + TLS_RECORD_HEADER_SIZE > len(stream):
                truncated.append(f"{direction.value}: record header cut at stream byte {position}")
                break
            content_type, _, length = struct.unpack(">BHH", stream[position:position + TLS_RECORD_HEADER_SIZE])
            end = position + TLS_RECORD_HEADER_SIZE + length
            if end > len(stream):
                truncated.append(f"{direction.value}: record of {length} byte(s) at stream byte {position} "
                                 f"exceeds the {len(stream) - position - TLS_RECORD_HEADER_SIZE} remaining")
                break
            body = stream[position + TLS_RECORD_HEADER_SIZE:end]
            if (not encrypted and direction is Direction.S2C and content_type == TLS_CONTENT_HANDSHAKE
                    and _server_hello_is_tls13(body)):
                raise UnsupportedProtocolError(f"[{session.session_id}] TLS 1.3 session; only TLS 1.2 is supported")
            frames[direction].append(Frame(direction=direction,
                                           seq_no=seq_no if encrypted else None,
                                           header=stream[position:position + TLS_RECORD_HEADER_SIZE],
                                           body=body,
                                           encrypted=encrypted,
                                           protocol=Protocol.TLS))
            if encrypted:
                seq_no += 1
            if content_type == TLS_CONTENT_CHANGE_CIPHER_SPEC:
                encrypted = True
            position = end
        tails[direction] = stream[position:]
        logging.info(f"[{session.session_id}] {direction.value}: {len(frames[direction])} record(s), "
                     f"{seq_no} encrypted")
    framed = FramedSession(session=session, protocol=Protocol.TLS, preambles=preambles, frames=frames,
                           tails=tails, first_encrypted_seq=first_encrypted_seq, notes=notes + truncated)
    if truncated:
        raise TruncatedRecordError(f"[{session.session_id}] truncated TLS stream: {'; '.join(truncated)}",
                                   partial=framed)
    return framed


def frame_session(session: CapturedSession) -> FramedSession:
    if session.protocol is Protocol.SSH:
        return frame_ssh(session)
    if session.protocol is Protocol.TLS:
        return frame_tls(session)
    raise ProtocolDetectionError(f"[{session.session_id}] neither SSH nor TLS traffic detected")


class StreamIngest:
    """Loads a capture and frames every SSH/TLS session in it."""

    def __init__(self, port_filter: Optional[int] = None):
        try:
            logging.info(f"{'='*20} Stream ingest log started. {'='*20}")
            self.port_filter = port_filter
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def initiate_stream_ingest(self, capture_path: str) -> Tuple[List[FramedSession], List[str]]:
        """
        :return: framed sessions and per-session diagnostics for sessions that could not be framed
        """
        try:
            sessions = load_capture(capture_path, self.port_filter)
            logging.info(f"Loaded {len(sessions)} session(s) from [{capture_path}]")
            framed_sessions, diagnostics = [], []
            for session in sessions:
                try:
                    framed_sessions.append(frame_session(session))
                except TruncatedRecordError as e:
                    logging.warning(e.args[0])
                    framed_sessions.append(e.partial)
                except ProtocolDetectionError as e:
                    logging.warning(e.args[0])
                    diagnostics.append(e.args[0])
            if sessions and not framed_sessions:
                raise ProtocolDetectionError(f"no SSH or TLS session in {capture_path}: {'; '.join(diagnostics)}")
            return framed_sessions, diagnostics
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def __del__(self):
        logging.info(f"{'='*20} Stream ingest log completed. {'='*20}")
