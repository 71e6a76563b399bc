"""Little-endian binary framing shared by the demo, checkpoint and memory files.

Every file is ``magic (8 bytes) | version u16 | body | crc32 u32``; the CRC
covers everything before it.
"""
import struct
import zlib
from typing import List, Sequence

import numpy as np

from ..core.errors import CodecError

VERSION = 1


def pad_magic(magic: str) -> bytes:
    raw = magic.encode("ascii")
    if len(raw) > 8:
        raise CodecError(f"magic '{magic}' is longer than 8 bytes")
    return raw.ljust(8, b"\x00")


class Writer:
    def __init__(self, magic: str, version: int = VERSION):
        self.buffer = bytearray(pad_magic(magic))
        self.u16(version)

    def _pack(self, fmt: str, *values) -> None:
        try:
            self.buffer += struct.pack("<" + fmt, *values)
        except struct.error as e:
            raise CodecError(f"cannot encode {values} as {fmt}: {str(e)}") from e

    def u8(self, value: int) -> None:
        self._pack("B", int(value))

    def u16(self, value: int) -> None:
        self._pack("H", int(value))

    def u32(self, value: int) -> None:
        self._pack("I", int(value))

    def u64(self, value: int) -> None:
        self._pack("Q", int(value))

    def f64(self, value: float) -> None:
        self._pack("d", float(value))

    def text(self, value: str) -> None:
        raw = value.encode("utf-8")
        self.u32(len(raw))
        self.buffer += raw

    def array(self, values, dtype: str) -> None:
        """Shape header (ndim u8, dims u32) then the raw little-endian payload."""
        arr = np.ascontiguousarray(values, dtype=np.dtype(dtype).newbyteorder("<"))
        self.u8(arr.ndim)
        for dim in arr.shape:
            self.u32(dim)
        self.buffer += arr.tobytes()

    def finish(self) -> bytes:
        return bytes(self.buffer) + struct.pack("<I", zlib.crc32(self.buffer) & 0xFFFFFFFF)


class Reader:
    def __init__(self, blob: bytes, magic: str, version: int = VERSION):
        if len(blob) < 14:
            raise CodecError(f"file too short ({len(blob)} bytes)")
        body, (stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if blob[:8] != pad_magic(magic):
            raise CodecError(f"bad magic {blob[:8]!r}, expected {magic}")
        if zlib.crc32(body) & 0xFFFFFFFF != stored:
            raise CodecError("CRC32 mismatch")
        self.data = body
        self.pos = 8
        found = self.u16()
        if found != version:
            raise CodecError(f"unsupported {magic} version {found}")

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CodecError(f"truncated payload at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def _unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size))[0]

    def u8(self) -> int:
        return self._unpack("B")

    def u16(self) -> int:
        return self._unpack("H")

    def u32(self) -> int:
        return self._unpack("I")

    def u64(self) -> int:
        return self._unpack("Q")

    def f64(self) -> float:
        return self._unpack("d")

    def text(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodecError(f"invalid UTF-8 string: {str(e)}") from e

    def array(self, dtype: str) -> np.ndarray:
        shape: List[int] = [self.u32() for _ in range(self.u8())]
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype)).reshape(shape)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise CodecError(f"{len(self.data) - self.pos} trailing bytes")


def texts(writer: Writer, values: Sequence[str]) -> None:
    writer.u32(len(values))
    for value in values:
        writer.text(value)


def read_texts(reader: Reader) -> List[str]:
    return [reader.text() for _ in range(reader.u32())]
