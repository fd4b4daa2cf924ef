"""On-disk formats: binary PPM (P6) images and the LIPTW1 weight file."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "ImageRGB8",
    "load_ppm",
    "save_ppm",
    "image_to_tensor",
    "tensor_to_image",
    "save_weights",
    "load_weights",
    "WEIGHTS_MAGIC",
    "WEIGHTS_VERSION",
]


@dataclass
class ImageRGB8:
    """Interleaved 8-bit RGB, stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise FormatError(f"RGB image must be (h, w, 3), got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _header_tokens(data: bytes):
    """Yield (token, end offset) for the four PPM header fields."""
    pos, n = 0, len(data)
    for _ in range(4):
        while pos < n:
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                break
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header: unexpected end of file")
        yield data[start:pos], pos


def parse_ppm(data: bytes) -> ImageRGB8:
    tokens = list(_header_tokens(data))
    magic = tokens[0][0]
    if magic != b"P6":
        raise FormatError(f"malformed PPM header: expected magic P6, got {magic!r}")
    try:
        width, height, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError:
        raise FormatError("malformed PPM header: width/height/maxval must be integers") from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} (only 255 is supported)")
    if width < 1 or height < 1:
        raise FormatError(f"malformed PPM header: size {width}x{height}")
    end = tokens[-1][1]
    if end >= len(data) or not data[end:end + 1].isspace():
        raise FormatError("malformed PPM header: missing whitespace after maxval")
    payload = data[end + 1:]
    need = 3 * width * height
    if len(payload) < need:
        raise FormatError(f"truncated PPM payload: expected {need} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, 3)
    return ImageRGB8(pixels.copy())


def load_ppm(path) -> ImageRGB8:
    return parse_ppm(Path(path).read_bytes())


def encode_ppm(img: ImageRGB8) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def save_ppm(img: ImageRGB8, path) -> None:
    Path(path).write_bytes(encode_ppm(img))


def image_to_tensor(img: ImageRGB8) -> np.ndarray:
    """(1, 3, h, w) float32 in [0, 1]."""
    return (img.pixels.transpose(2, 0, 1)[None].astype(np.float32) / 255.0)


def tensor_to_image(x: np.ndarray) -> ImageRGB8:
    """Inverse of :func:`image_to_tensor` with clipping and rounding.

    Single-channel tensors are replicated into gray RGB.
    """
    x = np.asarray(x)[0]
    if x.shape[0] == 1:
        x = np.repeat(x, 3, axis=0)
    v = np.clip(np.rint(x.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    return ImageRGB8(v.transpose(1, 2, 0))


WEIGHTS_MAGIC = b"LIPTW1"
WEIGHTS_VERSION = 1


def encode_weights(named: dict[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<HI", WEIGHTS_VERSION, len(named))]
    for name, tensor in named.items():
        raw = name.encode("utf-8")
        arr = np.asarray(tensor)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:6] != WEIGHTS_MAGIC:
        raise FormatError(f"not a LIPT weight file (magic {data[:6]!r})")
    view = memoryview(data)
    try:
        version, count = struct.unpack_from("<HI", view, 6)
        if version != WEIGHTS_VERSION:
            raise FormatError(f"unsupported weight file version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise FormatError(f"truncated payload for tensor {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            if name in out:
                raise FormatError(f"duplicate tensor name {name!r}")
            out[name] = arr.astype(np.float32)
    except struct.error:
        raise FormatError("truncated weight file") from None
    except UnicodeDecodeError:
        raise FormatError("tensor name is not valid UTF-8") from None
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last tensor")
    return out


def save_weights(named: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode_weights(named))


def load_weights(path) -> dict[str, np.ndarray]:
    return decode_weights(Path(path).read_bytes())
