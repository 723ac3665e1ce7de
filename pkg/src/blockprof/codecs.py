"""Block compression codecs.

Three codecs, identified by a stable one-byte id that is recorded in
every trace frame:

* ``IDENTITY`` (0) - no compression.
* ``ZSTD`` (1) - Zstandard at level 3, bound from the system
  ``libzstd`` shared library.
* ``REALTIME`` (2) - LZ4 block format via the system ``liblz4``; an
  LZ77-family codec chosen for compression speed over ratio.

All operations are stateless single-shot calls and safe to use
concurrently; the underlying C calls release the GIL.  Output is
deterministic for a given input and library build, which the size
assertions in the test suite rely on.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import enum
import threading

from .errors import CodecError, CodecUnavailableError, IntegrityError


class CodecId(enum.IntEnum):
    IDENTITY = 0
    ZSTD = 1
    REALTIME = 2


#: Zstandard compression level (throughput/ratio default).
ZSTD_LEVEL = 3

_load_lock = threading.Lock()


def _load_library(short_name: str, fallbacks: tuple[str, ...]) -> ctypes.CDLL:
    candidates = []
    found = ctypes.util.find_library(short_name)
    if found:
        candidates.append(found)
    candidates.extend(fallbacks)
    last_error: Exception | None = None
    for name in candidates:
        try:
            return ctypes.CDLL(name)
        except OSError as exc:
            last_error = exc
    raise CodecUnavailableError(
        f"could not load lib{short_name} (tried {', '.join(candidates) or 'nothing'}): {last_error}"
    )


class _ZstdLib:
    def __init__(self) -> None:
        lib = _load_library("zstd", ("libzstd.so.1", "libzstd.so"))
        lib.ZSTD_compressBound.restype = ctypes.c_size_t
        lib.ZSTD_compressBound.argtypes = [ctypes.c_size_t]
        lib.ZSTD_compress.restype = ctypes.c_size_t
        lib.ZSTD_compress.argtypes = [
            ctypes.c_void_p, ctypes.c_size_t,
            ctypes.c_char_p, ctypes.c_size_t,
            ctypes.c_int,
        ]
        lib.ZSTD_decompress.restype = ctypes.c_size_t
        lib.ZSTD_decompress.argtypes = [
            ctypes.c_void_p, ctypes.c_size_t,
            ctypes.c_char_p, ctypes.c_size_t,
        ]
        lib.ZSTD_isError.restype = ctypes.c_uint
        lib.ZSTD_isError.argtypes = [ctypes.c_size_t]
        self._lib = lib

    def compress(self, raw: bytes, level: int) -> bytes:
        lib = self._lib
        bound = lib.ZSTD_compressBound(len(raw))
        dst = ctypes.create_string_buffer(bound)
        n = lib.ZSTD_compress(dst, bound, raw, len(raw), level)
        if lib.ZSTD_isError(n):
            raise CodecError(f"zstd compression failed (code {n})")
        return dst.raw[:n]

    def decompress(self, payload: bytes, expected_len: int) -> bytes:
        lib = self._lib
        dst = ctypes.create_string_buffer(expected_len) if expected_len else None
        n = lib.ZSTD_decompress(dst, expected_len, payload, len(payload))
        if lib.ZSTD_isError(n):
            raise IntegrityError(f"zstd payload is corrupt (code {n})")
        if n != expected_len:
            raise IntegrityError(
                f"zstd payload decompressed to {n} bytes, expected {expected_len}"
            )
        return dst.raw[:n] if dst is not None else b""


class _Lz4Lib:
    def __init__(self) -> None:
        lib = _load_library("lz4", ("liblz4.so.1", "liblz4.so"))
        lib.LZ4_compressBound.restype = ctypes.c_int
        lib.LZ4_compressBound.argtypes = [ctypes.c_int]
        lib.LZ4_compress_default.restype = ctypes.c_int
        lib.LZ4_compress_default.argtypes = [
            ctypes.c_char_p, ctypes.c_void_p, ctypes.c_int, ctypes.c_int,
        ]
        lib.LZ4_decompress_safe.restype = ctypes.c_int
        lib.LZ4_decompress_safe.argtypes = [
            ctypes.c_char_p, ctypes.c_void_p, ctypes.c_int, ctypes.c_int,
        ]
        self._lib = lib

    def compress(self, raw: bytes) -> bytes:
        lib = self._lib
        bound = lib.LZ4_compressBound(len(raw))
        if bound <= 0:
            raise CodecError(f"input of {len(raw)} bytes exceeds the LZ4 block limit")
        dst = ctypes.create_string_buffer(bound)
        n = lib.LZ4_compress_default(raw, dst, len(raw), bound)
        if n <= 0:
            raise CodecError(f"lz4 compression failed (code {n})")
        return dst.raw[:n]

    def decompress(self, payload: bytes, expected_len: int) -> bytes:
        lib = self._lib
        dst = ctypes.create_string_buffer(expected_len) if expected_len else None
        n = lib.LZ4_decompress_safe(payload, dst, len(payload), expected_len)
        if n < 0:
            raise IntegrityError(f"lz4 payload is corrupt (code {n})")
        if n != expected_len:
            raise IntegrityError(
                f"lz4 payload decompressed to {n} bytes, expected {expected_len}"
            )
        return dst.raw[:n] if dst is not None else b""


_zstd: _ZstdLib | None = None
_lz4: _Lz4Lib | None = None


def _get_zstd() -> _ZstdLib:
    global _zstd
    if _zstd is None:
        with _load_lock:
            if _zstd is None:
                _zstd = _ZstdLib()
    return _zstd


def _get_lz4() -> _Lz4Lib:
    global _lz4
    if _lz4 is None:
        with _load_lock:
            if _lz4 is None:
                _lz4 = _Lz4Lib()
    return _lz4


def require(codec: CodecId) -> None:
    """Raise :class:`CodecUnavailableError` if the codec cannot be used."""
    if codec == CodecId.ZSTD:
        _get_zstd()
    elif codec == CodecId.REALTIME:
        _get_lz4()


def is_available(codec: CodecId) -> bool:
    try:
        require(codec)
    except CodecUnavailableError:
        return False
    return True


def compress(codec: CodecId, raw: bytes) -> bytes:
    """Compress ``raw`` with the given codec.

    ``raw`` must be non-empty.  Identity returns the input unchanged.
    """
    if not raw:
        raise ValueError("cannot compress an empty payload")
    raw = bytes(raw)
    if codec == CodecId.IDENTITY:
        return raw
    if codec == CodecId.ZSTD:
        return _get_zstd().compress(raw, ZSTD_LEVEL)
    if codec == CodecId.REALTIME:
        return _get_lz4().compress(raw)
    raise CodecError(f"unknown codec id {codec}")


def decompress(codec: CodecId, payload: bytes, expected_len: int) -> bytes:
    """Invert :func:`compress`; the result has exactly ``expected_len`` bytes.

    Raises :class:`IntegrityError` on corrupt input or a length mismatch.
    """
    payload = bytes(payload)
    if codec == CodecId.IDENTITY:
        if len(payload) != expected_len:
            raise IntegrityError(
                f"identity payload is {len(payload)} bytes, expected {expected_len}"
            )
        return payload
    if codec == CodecId.ZSTD:
        return _get_zstd().decompress(payload, expected_len)
    if codec == CodecId.REALTIME:
        return _get_lz4().decompress(payload, expected_len)
    raise IntegrityError(f"unknown codec id {codec}")
