from enum import Enum
from collections import namedtuple


class Direction(str, Enum):
    C2S = "c2s"
    S2C = "s2c"


class Protocol(str, Enum):
    SSH = "ssh"
    TLS = "tls"
    UNKNOWN = "unknown"


class Verdict(str, Enum):
    VALID = "VALID"
    PARTIAL = "PARTIAL"
    INVALID = "INVALID"


MemoryExtract = namedtuple("MemoryExtract", ["data",
                                             "source_id",
                                             "captured_at"])

KeyCandidate = namedtuple("KeyCandidate", ["key",
                                           "tail",
                                           "offset",
                                           "entropy_bits",
                                           "interpretations",
                                           "source_id"])

SweepRegion = namedtuple("SweepRegion", ["offset",
                                         "length",
                                         "entropy_bits"])

CapturedSession = namedtuple("CapturedSession", ["session_id",
                                                  "client_stream",
                                                  "server_stream",
                                                  "protocol",
                                                  "endpoints",
                                                  "warnings"])

Frame = namedtuple("Frame", ["direction",
                             "seq_no",
                             "header",
                             "body",
                             "encrypted",
                             "protocol"])

# preambles: SSH identification lines per direction; tails: undelimited encrypted SSH
# bytes per direction; first_encrypted_seq: seq_no of the first packet in each tail
FramedSession = namedtuple("FramedSession", ["session",
                                             "protocol",
                                             "preambles",
                                             "frames",
                                             "tails",
                                             "first_encrypted_seq",
                                             "notes"])

CandidatePairing = namedtuple("CandidatePairing", ["header_candidate",
                                                   "main_candidate",
                                                   "direction"])

PacketRecord = namedtuple("PacketRecord", ["seq_no",
                                           "plaintext",
                                           "notes"])

DecryptReport = namedtuple("DecryptReport", ["session_id",
                                             "protocol",
                                             "direction",
                                             "pairing",
                                             "candidate",
                                             "verdict",
                                             "packets",
                                             "coverage",
                                             "details"])

FixtureManifest = namedtuple("FixtureManifest", ["seed",
                                                 "protocol",
                                                 "structures",
                                                 "plaintexts",
                                                 "image_path",
                                                 "capture_path",
                                                 "countermeasures",
                                                 "noise",
                                                 "details"])

ScanResult = namedtuple("ScanResult", ["path",
                                       "source_id",
                                       "size",
                                       "duration",
                                       "candidates",
                                       "error"])

ScanArtifact = namedtuple("ScanArtifact", ["results",
                                           "timing",
                                           "candidate_count",
                                           "error_count",
                                           "message"])

DecryptArtifact = namedtuple("DecryptArtifact", ["capture_path",
                                                 "reports",
                                                 "candidate_count",
                                                 "valid_count",
                                                 "message"])

ForgeArtifact = namedtuple("ForgeArtifact", ["output_dir",
                                             "image_path",
                                             "capture_path",
                                             "manifest_path",
                                             "manifest",
                                             "message"])

BenchArtifact = namedtuple("BenchArtifact", ["table",
                                             "message"])

RunRecord = namedtuple("RunRecord", ["run_id",
                                     "command",
                                     "start_time",
                                     "stop_time",
                                     "execution_time",
                                     "running_status",
                                     "message"])

# params: KeystreamParams of the context; kind: "heap" or "stack"; offset: None to let the forge choose
Placement = namedtuple("Placement", ["params",
                                     "kind",
                                     "offset",
                                     "strip_constant",
                                     "overwritten",
                                     "label"],
                       defaults=("heap", None, False, False, None))

# chunks: (Direction, bytes) writes in conversation order; contexts: label -> (Direction, KeystreamParams)
ForgedSession = namedtuple("ForgedSession", ["session",
                                             "chunks",
                                             "contexts"])
