import sys
import hmac
import struct

from typing import Dict, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from keyforge.constant import *
from keyforge.logger import logging
from keyforge.entity.config_entity import DecryptConfig
from keyforge.entity.cipher_entity import KeystreamParams, Layout
from keyforge.entity.artifact_entity import CandidatePairing, DecryptArtifact, DecryptReport, Direction, Frame, \
    FramedSession, KeyCandidate, PacketRecord, Protocol, Verdict
from keyforge.component.chacha_core import init_state, keystream_block, poly1305_key_gen, poly1305_mac, \
    poly1305_tag, xor_cipher
from keyforge.exception import KeyforgeException

_VERDICT_RANK = {Verdict.VALID: 2, Verdict.PARTIAL: 1, Verdict.INVALID: 0}
_PRINTABLE = frozenset(range(0x20, 0x7f)) | {0x09, 0x0a, 0x0d}


def ssh_nonce(seq_no: int, byte_order: str = "big") -> bytes:
    return (seq_no % (1 << 64)).to_bytes(ORIG_NONCE_SIZE, byte_order)


def pad96(value: int) -> bytes:
    return b"\x00" * 4 + (value % (1 << 64)).to_bytes(8, "big")


def tls_record_nonce(candidate_nonce: bytes, candidate_ordinal: int, record_ordinal: int) -> bytes:
    """Nonce of record `record_ordinal` given a nonce harvested while record `candidate_ordinal` was processed."""
    return bytes(n ^ a ^ b for n, a, b in zip(candidate_nonce, pad96(candidate_ordinal), pad96(record_ordinal)))


def candidate_ietf_nonce(candidate: KeyCandidate) -> bytes:
    return candidate.tail[4:16]


def _ssh_params(candidate: KeyCandidate, seq_no: int, counter: int, byte_order: str) -> KeystreamParams:
    return KeystreamParams(key=candidate.key, layout=Layout.ORIG_8_8, counter=counter,
                           nonce=ssh_nonce(seq_no, byte_order))


def try_ssh_length(header: KeyCandidate,
                   seq_no: int,
                   first4: bytes,
                   wire_len: int,
                   byte_order: str = "big",
                   exact: bool = True) -> Optional[int]:
    """
    Decrypt the 4-byte packet length with the header key at counter 0.
    :param wire_len: bytes on the wire for this packet, or the bytes remaining in an
        undelimited tail when `exact` is False
    :return: packet_length when length field + packet + MAC account for the wire bytes
    """
    if len(first4) < SSH_LENGTH_FIELD_SIZE or wire_len < SSH_MIN_ENCRYPTED_PACKET:
        return None
    stream = keystream_block(init_state(_ssh_params(header, seq_no, SSH_LENGTH_COUNTER, byte_order)))
    packet_length = struct.unpack(">I", bytes(a ^ b for a, b in zip(first4[:4], stream[:4])))[0]
    consumed = packet_length + SSH_LENGTH_FIELD_SIZE + SSH_MAC_SIZE
    if consumed == wire_len or (not exact and consumed <= wire_len):
        return packet_length
    return None


def try_ssh_payload(main: KeyCandidate,
                    seq_no: int,
                    ciphertext: bytes,
                    byte_order: str = "big") -> Optional[bytes]:
    """
    Decrypt packet data with the main key at counter 1 and check the padding bound
    and the message code. Returns padding_length || payload || padding.
    """
    packet_length = len(ciphertext)
    if packet_length < 2:
        return None
    params = _ssh_params(main, seq_no, SSH_PAYLOAD_COUNTER, byte_order)
    head = xor_cipher(params, ciphertext[:BLOCK_SIZE])
    padding_length, message_code = head[0], head[1]
    if not SSH_MIN_PADDING <= padding_length <= SSH_MAX_PADDING:
        return None
    if padding_length + 2 > packet_length:
        return None
    if message_code not in SSH_KNOWN_MESSAGE_CODES:
        return None
    if packet_length <= BLOCK_SIZE:
        return head
    return xor_cipher(params, ciphertext)


def ssh_payload(plaintext: bytes) -> bytes:
    """Message bytes of a decrypted packet, padding stripped."""
    return plaintext[1:len(plaintext) - plaintext[0]]


def delimit_ssh_tail(header: KeyCandidate,
                     tail: bytes,
                     first_seq: int,
                     byte_order: str = "big") -> List[Tuple[int, int, int]]:
    """
    Chain packet lengths through an undelimited encrypted tail.
    :return: (seq_no, tail offset, packet_length) per delimited packet
    """
    chain = []
    position, seq_no = 0, first_seq
    while len(tail) - position >= SSH_MIN_ENCRYPTED_PACKET:
        packet_length = try_ssh_length(header, seq_no, tail[position:position + SSH_LENGTH_FIELD_SIZE],
                                       len(tail) - position, byte_order, exact=False)
        if packet_length is None:
            break
        chain.append((seq_no, position, packet_length))
        position += packet_length + SSH_MIN_ENCRYPTED_PACKET
        seq_no += 1
    return chain


def verify_poly1305(candidate: KeyCandidate,
                    frame: Frame,
                    byte_order: str = "big",
                    candidate_ordinal: int = 0) -> bool:
    """
    Recompute a frame's trailing tag with the one-time key from the counter-0 block.
    SSH frames: raw Poly1305 over encrypted length || ciphertext, nonce = seq_no.
    TLS frames: AEAD tag with the record's sequence/type/version/length as aad.
    """
    if len(frame.body) < TAG_SIZE:
        return False
    ciphertext, tag = frame.body[:-TAG_SIZE], frame.body[-TAG_SIZE:]
    if Protocol(frame.protocol) is Protocol.SSH:
        otk = poly1305_key_gen(candidate.key, ssh_nonce(frame.seq_no, byte_order), Layout.ORIG_8_8)
        expected = poly1305_mac(otk, frame.header + ciphertext)
    else:
        nonce = tls_record_nonce(candidate_ietf_nonce(candidate), candidate_ordinal, frame.seq_no)
        otk = poly1305_key_gen(candidate.key, nonce, Layout.IETF_4_12)
        content_type, version = struct.unpack(">BH", frame.header[:3])
        aad = struct.pack(">QBHH", frame.seq_no, content_type, version, len(ciphertext))
        expected = poly1305_tag(otk, aad, ciphertext)
    return hmac.compare_digest(expected, tag)


def printable_ratio(data: bytes) -> float:
    if not data:
        return 1.0
    return sum(byte in _PRINTABLE for byte in data) / len(data)


def _harvested(candidate: KeyCandidate) -> dict:
    return {"ietf_counter": struct.unpack("<I", candidate.tail[:4])[0],
            "orig_counter": struct.unpack("<Q", candidate.tail[:8])[0],
            "tail": candidate.tail.hex()}


def _invalid_report(framed: FramedSession, direction: Direction, note: str,
                    candidate: Optional[KeyCandidate] = None) -> DecryptReport:
    return DecryptReport(session_id=framed.session.session_id,
                         protocol=framed.protocol,
                         direction=direction,
                         pairing=None,
                         candidate=candidate,
                         verdict=Verdict.INVALID,
                         packets=[],
                         coverage=0.0,
                         details={"notes": [note]})


def _ordered(candidates: Sequence[KeyCandidate]) -> List[KeyCandidate]:
    return sorted(candidates, key=lambda c: (c.source_id or "", c.offset, c.key))


def _ssh_direction(candidates: List[KeyCandidate],
                   framed: FramedSession,
                   direction: Direction,
                   config: DecryptConfig) -> List[DecryptReport]:
    tail = framed.tails[direction]
    first_seq = framed.first_encrypted_seq[direction]
    byte_orders = ("big", "little") if config.byte_order_fallback else ("big",)
    reports = []
    for byte_order in byte_orders:
        for h_index, header in enumerate(candidates):
            chain = delimit_ssh_tail(header, tail, first_seq, byte_order)
            if not chain:
                continue
            for m_index, main in enumerate(candidates):
                if m_index == h_index:
                    continue
                packets, frames, consumed = [], [], 0
                for seq_no, position, packet_length in chain:
                    ciphertext = tail[position + SSH_LENGTH_FIELD_SIZE:position + SSH_LENGTH_FIELD_SIZE + packet_length]
                    plaintext = try_ssh_payload(main, seq_no, ciphertext, byte_order)
                    if plaintext is None:
                        break
                    payload = ssh_payload(plaintext)
                    packets.append(PacketRecord(seq_no=seq_no,
                                                plaintext=payload,
                                                notes=[f"packet_length {packet_length}",
                                                       f"padding {plaintext[0]}",
                                                       f"message {payload[0]}"]))
                    end = position + packet_length + SSH_MIN_ENCRYPTED_PACKET
                    frames.append(Frame(direction=direction, seq_no=seq_no,
                                        header=tail[position:position + SSH_LENGTH_FIELD_SIZE],
                                        body=tail[position + SSH_LENGTH_FIELD_SIZE:end],
                                        encrypted=True, protocol=Protocol.SSH))
                    consumed += packet_length + SSH_MIN_ENCRYPTED_PACKET
                if not packets:
                    continue
                coverage = consumed / len(tail)
                verdict = Verdict.VALID if consumed == len(tail) else Verdict.PARTIAL
                details = {"byte_order": byte_order,
                           "first_seq": first_seq,
                           "header_harvested": _harvested(header),
                           "main_harvested": _harvested(main),
                           "mac_verified": None,
                           "notes": []}
                if verdict is Verdict.PARTIAL:
                    details["notes"].append(f"chain stopped after {len(packets)} packet(s) at tail byte {consumed}")
                if config.verify_mac:
                    details["mac_verified"] = all(verify_poly1305(main, frame, byte_order) for frame in frames)
                reports.append(DecryptReport(session_id=framed.session.session_id,
                                             protocol=Protocol.SSH,
                                             direction=direction,
                                             pairing=CandidatePairing(header_candidate=header,
                                                                      main_candidate=main,
                                                                      direction=direction),
                                             candidate=None,
                                             verdict=verdict,
                                             packets=packets,
                                             coverage=coverage,
                                             details=details))
                logging.info(f"[{framed.session.session_id}] {direction.value} pairing header@{header.offset} "
                             f"main@{main.offset} ({byte_order}-endian seq): {verdict.value}, "
                             f"{len(packets)} packet(s), coverage {coverage:.3f}")
        if reports:
            break
    return reports


def pair_and_decrypt_ssh(candidates: Sequence[KeyCandidate],
                         framed: FramedSession,
                         config: DecryptConfig = DecryptConfig()) -> List[DecryptReport]:
    """
    Try every ordered (header, main) pair of distinct candidates on each direction's
    encrypted tail. Directions where no pair validates a packet get one INVALID report.
    """
    ordered = _ordered(candidates)
    reports = []
    for direction in (Direction.C2S, Direction.S2C):
        if not framed.tails[direction]:
            reports.append(_invalid_report(framed, direction, "no encrypted packets"))
            continue
        if len(ordered) < 2:
            reports.append(_invalid_report(framed, direction, "fewer than two candidates to pair"))
            continue
        direction_reports = _ssh_direction(ordered, framed, direction, config)
        reports.extend(direction_reports or [_invalid_report(framed, direction, "no candidate pair validates")])
    return reports


def _decrypt_record(key: bytes, nonce: bytes, body: bytes, limit: Optional[int] = None) -> bytes:
    ciphertext = body[:-TAG_SIZE]
    if limit is not None:
        ciphertext = ciphertext[:limit]
    params = KeystreamParams(key=key, layout=Layout.IETF_4_12, counter=TLS_PAYLOAD_COUNTER, nonce=nonce)
    return xor_cipher(params, ciphertext)


def _first_record_plausible(direction: Direction, plaintext: bytes) -> bool:
    if direction is Direction.C2S:
        return plaintext.startswith(HTTP_METHOD_TOKENS) or HTTP_VERSION_TOKEN in plaintext
    return plaintext.startswith(HTTP_RESPONSE_PREFIX)


def _tls_direction(candidate: KeyCandidate,
                   framed: FramedSession,
                   direction: Direction,
                   seq_search_limit: int,
                   config: DecryptConfig) -> DecryptReport:
    encrypted = [frame for frame in framed.frames[direction] if frame.encrypted]
    application = [frame for frame in encrypted if frame.header[0] == TLS_CONTENT_APPLICATION_DATA]
    if not application:
        return _invalid_report(framed, direction, "no encrypted application data records", candidate)
    first = application[0]
    if len(first.body) < TAG_SIZE:
        return _invalid_report(framed, direction, "first application record shorter than its tag", candidate)
    candidate_nonce = candidate_ietf_nonce(candidate)
    total_bytes = sum(max(len(frame.body) - TAG_SIZE, 0) for frame in application)

    best = None
    for ordinal in range(seq_search_limit):
        head = _decrypt_record(candidate.key, tls_record_nonce(candidate_nonce, ordinal, first.seq_no),
                               first.body, limit=BLOCK_SIZE)
        if not _first_record_plausible(direction, head):
            continue
        packets, validated_bytes, failed = [], 0, 0
        for frame in application:
            if len(frame.body) < TAG_SIZE:
                failed += 1
                continue
            nonce = tls_record_nonce(candidate_nonce, ordinal, frame.seq_no)
            plaintext = _decrypt_record(candidate.key, nonce, frame.body)
            ratio = printable_ratio(plaintext)
            if ratio < config.printable_threshold:
                failed += 1
                continue
            validated_bytes += len(plaintext)
            packets.append(PacketRecord(seq_no=frame.seq_no, plaintext=plaintext,
                                        notes=[f"printable {ratio:.3f}"]))
        details = {"candidate_ordinal": ordinal,
                   "harvested": _harvested(candidate),
                   "mac_verified": None,
                   "notes": []}
        coverage = validated_bytes / total_bytes if total_bytes else 1.0
        verdict = Verdict.VALID if failed == 0 else Verdict.PARTIAL
        if config.verify_mac:
            mac_ok = all(verify_poly1305(candidate, frame, candidate_ordinal=ordinal) for frame in encrypted)
            details["mac_verified"] = mac_ok
            if mac_ok and verdict is Verdict.PARTIAL:
                verdict, coverage = Verdict.VALID, 1.0
                details["notes"].append("upgraded to VALID by Poly1305 verification")
        if failed:
            details["notes"].append(f"{failed} record(s) failed plausibility checks")
        report = DecryptReport(session_id=framed.session.session_id,
                               protocol=Protocol.TLS,
                               direction=direction,
                               pairing=None,
                               candidate=candidate,
                               verdict=verdict,
                               packets=packets,
                               coverage=coverage,
                               details=details)
        if best is None or (_VERDICT_RANK[verdict], coverage) > (_VERDICT_RANK[best.verdict], best.coverage):
            best = report
        if verdict is Verdict.VALID:
            break
    if best is None:
        return _invalid_report(framed, direction,
                               f"no candidate ordinal below {seq_search_limit} yields plausible HTTP", candidate)
    logging.info(f"[{framed.session.session_id}] {direction.value} candidate@{candidate.offset}: "
                 f"{best.verdict.value} at ordinal {best.details['candidate_ordinal']}")
    return best


def try_tls(candidate: KeyCandidate,
            framed: FramedSession,
            seq_search_limit: int = DEFAULT_SEQ_SEARCH_LIMIT,
            config: DecryptConfig = DecryptConfig()) -> List[DecryptReport]:
    """
    Decrypt each direction's records with the candidate's IETF key/nonce, searching the
    unknown record ordinal the nonce was harvested at. One report per direction.
    """
    return [_tls_direction(candidate, framed, direction, seq_search_limit, config)
            for direction in (Direction.C2S, Direction.S2C)
            if any(frame.encrypted for frame in framed.frames[direction])]


def report_sort_key(report: DecryptReport):
    if report.pairing is not None:
        offset = report.pairing.header_candidate.offset
    elif report.candidate is not None:
        offset = report.candidate.offset
    else:
        offset = -1
    return report.session_id, offset, Direction(report.direction).value


class DecryptAnalysis:
    """Runs harvested candidates against framed sessions and collects verdicts."""

    def __init__(self, decrypt_config: DecryptConfig):
        try:
            logging.info(f"{'='*20} Decrypt analysis log started. {'='*20}")
            self.decrypt_config = decrypt_config
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def _merge_tls(self, framed: FramedSession, per_candidate: List[List[DecryptReport]]) -> List[DecryptReport]:
        best: Dict[Direction, DecryptReport] = {}
        for reports in per_candidate:
            for report in reports:
                current = best.get(report.direction)
                if current is None or (_VERDICT_RANK[report.verdict], report.coverage) > \
                        (_VERDICT_RANK[current.verdict], current.coverage):
                    best[report.direction] = report
        merged = []
        for direction in (Direction.C2S, Direction.S2C):
            if direction in best and best[direction].verdict is not Verdict.INVALID:
                merged.append(best[direction])
            elif any(frame.encrypted for frame in framed.frames[direction]):
                merged.append(_invalid_report(framed, direction, "no candidate validates"))
        return merged

    def analyse_session(self, candidates: Sequence[KeyCandidate], framed: FramedSession) -> List[DecryptReport]:
        if framed.protocol is Protocol.SSH:
            return pair_and_decrypt_ssh(candidates, framed, self.decrypt_config)
        ordered = _ordered(candidates)
        limit = self.decrypt_config.seq_search_limit
        if self.decrypt_config.parallel > 1 and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=self.decrypt_config.parallel) as pool:
                per_candidate = list(pool.map(lambda c: try_tls(c, framed, limit, self.decrypt_config), ordered))
        else:
            per_candidate = [try_tls(candidate, framed, limit, self.decrypt_config) for candidate in ordered]
        return self._merge_tls(framed, per_candidate)

    def initiate_decrypt_analysis(self,
                                  candidates: Sequence[KeyCandidate],
                                  framed_sessions: Sequence[FramedSession],
                                  capture_path: Optional[str] = None) -> DecryptArtifact:
        try:
            logging.info(f"Decrypting {len(framed_sessions)} session(s) with {len(candidates)} candidate(s), "
                         f"{self.decrypt_config}")
            reports = []
            for framed in framed_sessions:
                reports.extend(self.analyse_session(candidates, framed))
            reports.sort(key=report_sort_key)
            valid_count = sum(report.verdict is Verdict.VALID for report in reports)
            decrypt_artifact = DecryptArtifact(capture_path=capture_path,
                                               reports=reports,
                                               candidate_count=len(candidates),
                                               valid_count=valid_count,
                                               message=f"{valid_count} VALID of {len(reports)} report(s)")
            logging.info(f"Decrypt analysis artifact: {decrypt_artifact.message}")
            return decrypt_artifact
        except KeyforgeException:
            raise
        except Exception as e:
            raise KeyforgeException(e, sys) from e

    def __del__(self):
        logging.info(f"{'='*20} Decrypt analysis log completed. {'='*20}")
