from enum import Enum
from collections import namedtuple


class Layout(str, Enum):
    """Counter/nonce split of state words 12-15."""
    IETF_4_12 = "ietf"
    ORIG_8_8 = "orig"


KeystreamParams = namedtuple("KeystreamParams", ["key",
                                                 "layout",
                                                 "counter",
                                                 "nonce"])

# words: 16 x 32-bit words, rows of the 4x4 matrix in order
ChaChaState = namedtuple("ChaChaState", ["words"])
