from collections import namedtuple

from keyforge.constant import *
from keyforge.exception import InvalidConfigError


class ScanConfig(namedtuple("ScanConfig", ["entropy_threshold",
                                           "sweep_window",
                                           "sweep_stride",
                                           "layout_preference",
                                           "parallel"])):
    __slots__ = ()

    def __new__(cls,
                entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD,
                sweep_window: int = DEFAULT_SWEEP_WINDOW,
                sweep_stride: int = DEFAULT_SWEEP_STRIDE,
                layout_preference: str = "auto",
                parallel: int = 1):
        entropy_threshold = float(entropy_threshold)
        if not 0.0 < entropy_threshold <= 8.0:
            raise InvalidConfigError(f"entropy threshold must lie in (0, 8], got {entropy_threshold}")
        if int(sweep_window) < MIN_SWEEP_WINDOW:
            raise InvalidConfigError(f"sweep window must be at least {MIN_SWEEP_WINDOW}, got {sweep_window}")
        if int(sweep_stride) < 1:
            raise InvalidConfigError(f"sweep stride must be positive, got {sweep_stride}")
        if layout_preference not in LAYOUT_PREFERENCES:
            raise InvalidConfigError(f"unknown layout preference: {layout_preference}")
        return super().__new__(cls, entropy_threshold, int(sweep_window), int(sweep_stride),
                               layout_preference, max(1, int(parallel)))


class DecryptConfig(namedtuple("DecryptConfig", ["seq_search_limit",
                                                 "printable_threshold",
                                                 "verify_mac",
                                                 "byte_order_fallback",
                                                 "parallel"])):
    __slots__ = ()

    def __new__(cls,
                seq_search_limit: int = DEFAULT_SEQ_SEARCH_LIMIT,
                printable_threshold: float = DEFAULT_PRINTABLE_THRESHOLD,
                verify_mac: bool = False,
                byte_order_fallback: bool = True,
                parallel: int = 1):
        if int(seq_search_limit) < 1:
            raise InvalidConfigError(f"seq search limit must be positive, got {seq_search_limit}")
        if not 0.0 <= float(printable_threshold) <= 1.0:
            raise InvalidConfigError(f"printable threshold must lie in [0, 1], got {printable_threshold}")
        return super().__new__(cls, int(seq_search_limit), float(printable_threshold),
                               bool(verify_mac), bool(byte_order_fallback), max(1, int(parallel)))


class ForgeConfig(namedtuple("ForgeConfig", ["protocol",
                                             "image_size",
                                             "noise",
                                             "file_size",
                                             "strip_constant",
                                             "overwrite",
                                             "tls_ordinal",
                                             "capture_format",
                                             "placements",
                                             "seed",
                                             "output_dir"])):
    __slots__ = ()

    def __new__(cls,
                protocol: str = DEFAULT_FORGE_PROTOCOL,
                image_size: int = DEFAULT_FORGE_IMAGE_SIZE,
                noise: str = DEFAULT_FORGE_NOISE,
                file_size: int = DEFAULT_FORGE_FILE_SIZE,
                strip_constant: bool = False,
                overwrite: str = "none",
                tls_ordinal: int = 0,
                capture_format: str = "pcap",
                placements: tuple = (),
                seed: int = DEFAULT_SEED,
                output_dir: str = DEFAULT_FORGE_OUTPUT_DIR):
        if protocol not in ("ssh", "tls"):
            raise InvalidConfigError(f"unknown fixture protocol: {protocol}")
        if noise not in NOISE_PROFILES:
            raise InvalidConfigError(f"unknown noise profile: {noise}")
        if overwrite not in OVERWRITE_TARGETS:
            raise InvalidConfigError(f"unknown overwrite target: {overwrite}")
        if capture_format not in CAPTURE_FORMATS:
            raise InvalidConfigError(f"unknown capture format: {capture_format}")
        for name, value in (("image size", image_size), ("file size", file_size), ("tls ordinal", tls_ordinal)):
            if int(value) < 0:
                raise InvalidConfigError(f"{name} must not be negative, got {value}")
        return super().__new__(cls, protocol, int(image_size), noise, int(file_size), bool(strip_constant),
                               overwrite, int(tls_ordinal), capture_format, tuple(placements or ()),
                               int(seed), output_dir)


class BenchConfig(namedtuple("BenchConfig", ["sizes",
                                             "repetitions",
                                             "sweep",
                                             "seed"])):
    __slots__ = ()

    def __new__(cls,
                sizes: tuple = DEFAULT_BENCH_SIZES,
                repetitions: int = DEFAULT_BENCH_REPETITIONS,
                sweep: bool = False,
                seed: int = DEFAULT_SEED):
        if int(repetitions) < 1:
            raise InvalidConfigError(f"repetitions must be positive, got {repetitions}")
        if any(int(size) < 0 for size in sizes):
            raise InvalidConfigError(f"benchmark sizes must not be negative: {sizes}")
        return super().__new__(cls, tuple(int(size) for size in sizes), int(repetitions), bool(sweep), int(seed))


ReportConfig = namedtuple("ReportConfig", ["output_format",
                                           "output_path"])
