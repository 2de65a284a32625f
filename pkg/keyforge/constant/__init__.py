import os
from datetime import datetime


def get_current_time_stamp():
    return f"{datetime.now().strftime('%Y-%m-%d-%H-%M-%S')}"


ROOT_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

CURRENT_TIME_STAMP = get_current_time_stamp()

CONFIG_DIR = "config"
CONFIG_FILE_NAME = "config.yaml"
CONFIG_FILE_PATH = os.environ.get("KEYFORGE_CONFIG",
                                  os.path.join(ROOT_DIR, CONFIG_DIR, CONFIG_FILE_NAME))

DOCS_DIR = "docs"
REPORT_SCHEMA_FILE_NAME = "report_schema.json"
REPORT_SCHEMA_FILE_PATH = os.path.join(ROOT_DIR, DOCS_DIR, REPORT_SCHEMA_FILE_NAME)

ENV_PREFIX = "KEYFORGE_"

# ChaCha20 related variables
CHACHA_CONSTANTS = (0x61707865, 0x3320646e, 0x79622d32, 0x6b206574)
CONSTANT_STRING = b"expand 32-byte k"
BLOCK_SIZE = 64
KEY_SIZE = 32
TAG_SIZE = 16
STATE_WORDS = 16
DOUBLE_ROUNDS = 10
WORD_MASK = 0xFFFFFFFF
IETF_NONCE_SIZE = 12
ORIG_NONCE_SIZE = 8
IETF_COUNTER_MAX = (1 << 32) - 1
ORIG_COUNTER_MAX = (1 << 64) - 1

# Base structure layout: constant | key | counter+nonce tail | cached keystream | index
STRUCTURE_KEY_OFFSET = 16
STRUCTURE_TAIL_OFFSET = 48
STRUCTURE_HEADER_SIZE = 64
STRUCTURE_INDEX_SIZE = 4
STRUCTURE_SIZE = STRUCTURE_HEADER_SIZE + BLOCK_SIZE + STRUCTURE_INDEX_SIZE

# Artefact scan related variables
ARTEFACT_SCAN_CONFIG_KEY = "artefact_scan_config"
ENTROPY_THRESHOLD_KEY = "entropy_threshold"
SWEEP_WINDOW_KEY = "sweep_window"
SWEEP_STRIDE_KEY = "sweep_stride"
LAYOUT_PREFERENCE_KEY = "layout_preference"
PARALLEL_KEY = "parallel"
DEFAULT_ENTROPY_THRESHOLD = 4.5
DEFAULT_SWEEP_WINDOW = 32
DEFAULT_SWEEP_STRIDE = 16
MIN_SWEEP_WINDOW = 16
SCAN_ADVANCE_ON_HIT = 64
SCAN_ADVANCE_ON_REJECT = 16
SWEEP_CHUNK_WINDOWS = 8192

# Decrypt analysis related variables
DECRYPT_ANALYSIS_CONFIG_KEY = "decrypt_analysis_config"
SEQ_SEARCH_LIMIT_KEY = "seq_search_limit"
PRINTABLE_THRESHOLD_KEY = "printable_threshold"
VERIFY_MAC_KEY = "verify_mac"
BYTE_ORDER_FALLBACK_KEY = "byte_order_fallback"
DEFAULT_SEQ_SEARCH_LIMIT = 64
DEFAULT_PRINTABLE_THRESHOLD = 0.9

# SSH related variables
SSH_IDENTIFICATION_PREFIX = b"SSH-"
SSH_LENGTH_FIELD_SIZE = 4
SSH_MAC_SIZE = TAG_SIZE
SSH_MIN_ENCRYPTED_PACKET = SSH_LENGTH_FIELD_SIZE + SSH_MAC_SIZE
SSH_MIN_PADDING = 4
SSH_MAX_PADDING = 255
SSH_BLOCK_ALIGNMENT = 8
SSH_MAX_PLAINTEXT_PACKET = 35000
SSH_LENGTH_COUNTER = 0
SSH_PAYLOAD_COUNTER = 1
SSH_MSG_DISCONNECT = 1
SSH_MSG_IGNORE = 2
SSH_MSG_SERVICE_REQUEST = 5
SSH_MSG_SERVICE_ACCEPT = 6
SSH_MSG_KEXINIT = 20
SSH_MSG_NEWKEYS = 21
SSH_MSG_KEX_ECDH_INIT = 30
SSH_MSG_KEX_ECDH_REPLY = 31
SSH_MSG_USERAUTH_REQUEST = 50
SSH_MSG_USERAUTH_SUCCESS = 52
SSH_MSG_CHANNEL_OPEN = 90
SSH_MSG_CHANNEL_OPEN_CONFIRMATION = 91
SSH_MSG_CHANNEL_DATA = 94
SSH_MSG_CHANNEL_EOF = 96
SSH_MSG_CHANNEL_CLOSE = 97
SSH_MSG_CHANNEL_REQUEST = 98
SSH_MSG_CHANNEL_SUCCESS = 99
# transport 1-49, user auth 50-79, connection 80-100; only assigned numbers
SSH_KNOWN_MESSAGE_CODES = frozenset(
    list(range(1, 8)) + [20, 21] + list(range(30, 50)) +
    list(range(50, 54)) + list(range(60, 80)) +
    list(range(80, 83)) + list(range(90, 101))
)

# TLS related variables
TLS_RECORD_HEADER_SIZE = 5
TLS_CONTENT_CHANGE_CIPHER_SPEC = 0x14
TLS_CONTENT_ALERT = 0x15
TLS_CONTENT_HANDSHAKE = 0x16
TLS_CONTENT_APPLICATION_DATA = 0x17
TLS_VERSION_1_2 = 0x0303
TLS_VERSION_1_3 = 0x0304
TLS_HANDSHAKE_SERVER_HELLO = 2
TLS_EXTENSION_SUPPORTED_VERSIONS = 43
TLS_PAYLOAD_COUNTER = 1
HTTP_METHOD_TOKENS = (b"GET ", b"POST ", b"PUT ", b"HEAD ", b"DELETE ", b"OPTIONS ",
                      b"PATCH ", b"CONNECT ", b"TRACE ")
HTTP_VERSION_TOKEN = b"HTTP/1.1"
HTTP_RESPONSE_PREFIX = b"HTTP/"

# Capture related variables
PCAP_LINKTYPE_ETHERNET = 1
PCAP_LINKTYPE_RAW = 101
RAW_C2S_FILE_NAME = "c2s.bin"
RAW_S2C_FILE_NAME = "s2c.bin"
RAW_DESCRIPTOR_FILE_NAME = "session.json"
TCP_SEQ_MODULUS = 1 << 32
DEFAULT_MSS = 1448

# Fixture forge related variables
FIXTURE_FORGE_CONFIG_KEY = "fixture_forge_config"
FORGE_PROTOCOL_KEY = "protocol"
FORGE_IMAGE_SIZE_KEY = "image_size"
FORGE_NOISE_KEY = "noise"
FORGE_FILE_SIZE_KEY = "file_size"
FORGE_STRIP_CONSTANT_KEY = "strip_constant"
FORGE_OVERWRITE_KEY = "overwrite"
FORGE_TLS_ORDINAL_KEY = "tls_ordinal"
FORGE_CAPTURE_FORMAT_KEY = "capture_format"
FORGE_SEED_KEY = "seed"
FORGE_OUTPUT_DIR_KEY = "output_dir"
FORGE_PLACEMENTS_KEY = "placements"
FORGE_IMAGE_FILE_NAME = "image.bin"
FORGE_CAPTURE_FILE_NAME = "capture.pcap"
FORGE_RAW_CAPTURE_DIR_NAME = "capture"
FORGE_MANIFEST_FILE_NAME = "manifest.json"
NOISE_PROFILES = ("zeros", "text", "random", "mixed")
MIXED_NOISE_BLOCK = 4096

# Scan benchmark related variables
SCAN_BENCHMARK_CONFIG_KEY = "scan_benchmark_config"
BENCH_SIZES_KEY = "sizes"
BENCH_REPETITIONS_KEY = "repetitions"
BENCH_SWEEP_KEY = "sweep"

# Report related variables
REPORT_CONFIG_KEY = "report_config"
REPORT_FORMAT_KEY = "format"
REPORT_FORMATS = ("json", "text")
LAYOUT_PREFERENCES = ("auto", "ietf", "orig")
MEBIBYTE = 1 << 20

# Exit codes
EXIT_SUCCESS = 0
EXIT_NOTHING_FOUND = 1
EXIT_ERROR = 2

# Pipeline related variables
PIPELINE_CONFIG_KEY = "pipeline_config"
RUN_HISTORY_FILE_KEY = "run_history_file"
DEFAULT_RUN_HISTORY_FILE = os.path.join("runs", "run_history.csv")

# Environment overrides, KEYFORGE_ prefixed
ENV_THRESHOLD = "THRESHOLD"
ENV_SWEEP_WINDOW = "SWEEP_WINDOW"
ENV_SWEEP_STRIDE = "SWEEP_STRIDE"
ENV_LAYOUT = "LAYOUT"
ENV_SEQ_LIMIT = "SEQ_LIMIT"
ENV_VERIFY_MAC = "VERIFY_MAC"
ENV_FORMAT = "FORMAT"
ENV_SEED = "SEED"
ENV_PARALLEL = "PARALLEL"

# Fixture and benchmark defaults
DEFAULT_FORGE_PROTOCOL = "ssh"
DEFAULT_FORGE_IMAGE_SIZE = MEBIBYTE
DEFAULT_FORGE_NOISE = "mixed"
DEFAULT_FORGE_FILE_SIZE = 150
DEFAULT_FORGE_OUTPUT_DIR = "fixture"
CAPTURE_FORMATS = ("pcap", "raw")
OVERWRITE_TARGETS = ("none", "c2s", "s2c")
DEFAULT_BENCH_SIZES = (MEBIBYTE, 16 * MEBIBYTE)
DEFAULT_BENCH_REPETITIONS = 10
DEFAULT_SEED = 0
