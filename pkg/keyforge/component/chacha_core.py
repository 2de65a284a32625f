"""
ChaCha20 keystream generation, XOR ciphering and the Poly1305 authenticator.

Two state layouts are supported:

* ``Layout.IETF_4_12``: word 12 is a 32-bit block counter, words 13-15 a 96-bit nonce.
* ``Layout.ORIG_8_8``: words 12-13 hold a 64-bit counter (low word first),
  words 14-15 a 64-bit nonce. OpenSSH keeps this layout in memory.

Every word is serialized little-endian. ``keystream_block`` is the straight
scalar block function; ``keystream`` and ``keystream_blocks`` run the same rounds
over numpy ``uint32`` matrices so multi-block messages and batch trials stay fast.
"""
import hmac
import struct

import numpy as np

from typing import Optional, Tuple
from keyforge.constant import *
from keyforge.entity.cipher_entity import ChaChaState, KeystreamParams, Layout
from keyforge.exception import CounterOverflowError, InvalidParamsError


_ROUND_SCHEDULE = (
    (0, 4, 8, 12), (1, 5, 9, 13), (2, 6, 10, 14), (3, 7, 11, 15),
    (0, 5, 10, 15), (1, 6, 11, 12), (2, 7, 8, 13), (3, 4, 9, 14),
)
_POLY1305_PRIME = (1 << 130) - 5
_POLY1305_CLAMP = 0x0ffffffc0ffffffc0ffffffc0fffffff
_MASK_128 = (1 << 128) - 1


def nonce_size(layout: Layout) -> int:
    return IETF_NONCE_SIZE if Layout(layout) is Layout.IETF_4_12 else ORIG_NONCE_SIZE


def counter_max(layout: Layout) -> int:
    return IETF_COUNTER_MAX if Layout(layout) is Layout.IETF_4_12 else ORIG_COUNTER_MAX


def validate_params(params: KeystreamParams) -> KeystreamParams:
    """
    Check key, nonce and counter widths against the layout.
    :return: the params with `layout` coerced to a Layout member
    """
    try:
        layout = Layout(params.layout)
    except ValueError as e:
        raise InvalidParamsError(f"unknown layout: {params.layout!r}") from e
    if len(params.key) != KEY_SIZE:
        raise InvalidParamsError(f"key must be {KEY_SIZE} bytes, got {len(params.key)}")
    if len(params.nonce) != nonce_size(layout):
        raise InvalidParamsError(
            f"{layout.name} nonce must be {nonce_size(layout)} bytes, got {len(params.nonce)}"
        )
    if not 0 <= int(params.counter) <= counter_max(layout):
        raise InvalidParamsError(f"counter {params.counter} does not fit {layout.name}")
    return params._replace(layout=layout, key=bytes(params.key), nonce=bytes(params.nonce))


def _rotl32(value: int, shift: int) -> int:
    return ((value << shift) | (value >> (32 - shift))) & WORD_MASK


def quarter_round(a: int, b: int, c: int, d: int) -> Tuple[int, int, int, int]:
    a = (a + b) & WORD_MASK
    d = _rotl32(d ^ a, 16)
    c = (c + d) & WORD_MASK
    b = _rotl32(b ^ c, 12)
    a = (a + b) & WORD_MASK
    d = _rotl32(d ^ a, 8)
    c = (c + d) & WORD_MASK
    b = _rotl32(b ^ c, 7)
    return a, b, c, d


def init_state(params: KeystreamParams) -> ChaChaState:
    params = validate_params(params)
    words = list(CHACHA_CONSTANTS)
    words.extend(struct.unpack("<8I", params.key))
    if params.layout is Layout.IETF_4_12:
        words.append(int(params.counter))
        words.extend(struct.unpack("<3I", params.nonce))
    else:
        words.append(int(params.counter) & WORD_MASK)
        words.append(int(params.counter) >> 32)
        words.extend(struct.unpack("<2I", params.nonce))
    return ChaChaState(words=tuple(words))


def serialize_state(state: ChaChaState) -> bytes:
    return struct.pack("<16I", *state.words)


def parse_state(data: bytes) -> ChaChaState:
    if len(data) != BLOCK_SIZE:
        raise InvalidParamsError(f"serialized state must be {BLOCK_SIZE} bytes, got {len(data)}")
    return ChaChaState(words=struct.unpack("<16I", data))


def keystream_block(state: ChaChaState) -> bytes:
    x = list(state.words)
    for _ in range(DOUBLE_ROUNDS):
        for a, b, c, d in _ROUND_SCHEDULE:
            x[a], x[b], x[c], x[d] = quarter_round(x[a], x[b], x[c], x[d])
    return struct.pack("<16I", *((x[i] + state.words[i]) & WORD_MASK for i in range(STATE_WORDS)))


def _rotl32_np(value: np.ndarray, shift: int) -> np.ndarray:
    return (value << np.uint32(shift)) | (value >> np.uint32(32 - shift))


def keystream_blocks(states: np.ndarray) -> np.ndarray:
    """
    Run the block function over many states at once.
    :param states: (n, 16) array of uint32 words, one state per row
    :return: (n, 64) uint8 array of keystream blocks
    """
    states = np.asarray(states, dtype=np.uint32).reshape(-1, STATE_WORDS)
    x = states.T.copy()
    for _ in range(DOUBLE_ROUNDS):
        for a, b, c, d in _ROUND_SCHEDULE:
            x[a] += x[b]
            x[d] = _rotl32_np(x[d] ^ x[a], 16)
            x[c] += x[d]
            x[b] = _rotl32_np(x[b] ^ x[c], 12)
            x[a] += x[b]
            x[d] = _rotl32_np(x[d] ^ x[a], 8)
            x[c] += x[d]
            x[b] = _rotl32_np(x[b] ^ x[c], 7)
    out = (x.T + states).astype("<u4")
    return np.ascontiguousarray(out).view(np.uint8).reshape(-1, BLOCK_SIZE)


def _check_counter_room(params: KeystreamParams, n_blocks: int) -> None:
    if n_blocks and int(params.counter) + n_blocks - 1 > counter_max(params.layout):
        raise CounterOverflowError(
            f"{n_blocks} blocks from counter {params.counter} overflow the "
            f"{params.layout.name} counter"
        )


def keystream(params: KeystreamParams, n_blocks: int) -> bytes:
    """Consecutive keystream blocks starting at params.counter."""
    params = validate_params(params)
    _check_counter_room(params, n_blocks)
    if n_blocks <= 0:
        return b""
    base = np.array(init_state(params).words, dtype=np.uint32)
    states = np.tile(base, (n_blocks, 1))
    counters = np.arange(n_blocks, dtype=np.uint64) + np.uint64(params.counter)
    states[:, 12] = (counters & np.uint64(WORD_MASK)).astype(np.uint32)
    if params.layout is Layout.ORIG_8_8:
        states[:, 13] = (counters >> np.uint64(32)).astype(np.uint32)
    return keystream_blocks(states).tobytes()


def xor_cipher(params: KeystreamParams, data: bytes) -> bytes:
    if not data:
        validate_params(params)
        return b""
    n_blocks = -(-len(data) // BLOCK_SIZE)
    stream = np.frombuffer(keystream(params, n_blocks), dtype=np.uint8)[:len(data)]
    return np.bitwise_xor(np.frombuffer(bytes(data), dtype=np.uint8), stream).tobytes()


def poly1305_mac(key: bytes, message: bytes) -> bytes:
    """Raw Poly1305 over `message` with a 32-byte one-time key."""
    if len(key) != KEY_SIZE:
        raise InvalidParamsError(f"poly1305 key must be {KEY_SIZE} bytes, got {len(key)}")
    r = int.from_bytes(key[:16], "little") & _POLY1305_CLAMP
    s = int.from_bytes(key[16:32], "little")
    accumulator = 0
    for i in range(0, len(message), 16):
        block = int.from_bytes(message[i:i + 16] + b"\x01", "little")
        accumulator = (accumulator + block) * r % _POLY1305_PRIME
    return ((accumulator + s) & _MASK_128).to_bytes(TAG_SIZE, "little")


def _pad16(data: bytes) -> bytes:
    return b"\x00" * (-len(data) % 16)


def poly1305_tag(otk: bytes, aad: bytes, ciphertext: bytes) -> bytes:
    """AEAD tag over padded aad, padded ciphertext and both lengths."""
    mac_data = (aad + _pad16(aad) + ciphertext + _pad16(ciphertext) +
                struct.pack("<QQ", len(aad), len(ciphertext)))
    return poly1305_mac(otk, mac_data)


def poly1305_key_gen(key: bytes, nonce: bytes, layout: Layout = Layout.IETF_4_12) -> bytes:
    state = init_state(KeystreamParams(key=key, layout=layout, counter=0, nonce=nonce))
    return keystream_block(state)[:KEY_SIZE]


def aead_encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """ChaCha20-Poly1305 seal: ciphertext followed by the 16-byte tag."""
    params = KeystreamParams(key=key, layout=Layout.IETF_4_12, counter=1, nonce=nonce)
    ciphertext = xor_cipher(params, plaintext)
    otk = poly1305_key_gen(key, nonce, Layout.IETF_4_12)
    return ciphertext + poly1305_tag(otk, aad, ciphertext)


def aead_decrypt(key: bytes, nonce: bytes, sealed: bytes, aad: bytes = b"") -> Optional[bytes]:
    """Open a sealed record; None when the tag does not verify."""
    if len(sealed) < TAG_SIZE:
        return None
    ciphertext, tag = sealed[:-TAG_SIZE], sealed[-TAG_SIZE:]
    otk = poly1305_key_gen(key, nonce, Layout.IETF_4_12)
    if not hmac.compare_digest(poly1305_tag(otk, aad, ciphertext), tag):
        return None
    params = KeystreamParams(key=key, layout=Layout.IETF_4_12, counter=1, nonce=nonce)
    return xor_cipher(params, ciphertext)
