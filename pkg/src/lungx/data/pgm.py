"""Netpbm grayscale (PGM P2/P5) and colour (PPM P6) I/O."""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

PathLike = Union[str, Path]


class ImageFormatError(ValueError):
    pass


def _tokens(buf: bytes, count: int, start: int = 0) -> Tuple[List[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, i, n = [], start, len(buf)
    while len(out) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ImageFormatError("truncated header")
        out.append(buf[i:j])
        i = j
    return out, i


def decode_pgm_bytes(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode a PGM to float64 pixels scaled to ``[0, 1]``."""
    try:
        (magic, w, h, maxval), pos = _tokens(buf, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except (ImageFormatError, ValueError) as exc:
        raise ImageFormatError(f"{source}: bad PGM header ({exc})") from None
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"{source}: unsupported format {magic!r}; expected P2 or P5")
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise ImageFormatError(f"{source}: invalid dimensions {width}x{height} or maxval {maxval}")
    count = width * height
    if magic == b"P5":
        body = buf[pos + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(body) < count * dtype.itemsize:
            raise ImageFormatError(f"{source}: pixel data truncated")
        raw = np.frombuffer(body, dtype=dtype, count=count)
    else:
        try:
            raw = np.array([int(t) for t in buf[pos:].split()[:count]], dtype=np.int64)
        except ValueError:
            raise ImageFormatError(f"{source}: non-integer ASCII pixel") from None
        if raw.size < count:
            raise ImageFormatError(f"{source}: pixel data truncated")
    if raw.max(initial=0) > maxval:
        raise ImageFormatError(f"{source}: pixel value exceeds maxval {maxval}")
    return raw.reshape(height, width).astype(np.float64) / maxval


def read_pgm(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot read ({exc.strerror})") from None
    return decode_pgm_bytes(buf, str(path))


def encode_pgm(pixels: np.ndarray, maxval: int = 255, ascii: bool = False) -> bytes:
    """Quantise ``[0, 1]`` pixels to ``maxval`` levels and encode."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {pixels.shape}")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval must lie in [1, 65535], got {maxval}")
    q = np.rint(np.clip(pixels, 0.0, 1.0) * maxval).astype(np.int64)
    h, w = q.shape
    if ascii:
        rows = "\n".join(" ".join(str(v) for v in row) for row in q)
        return f"P2\n{w} {h}\n{maxval}\n".encode() + rows.encode() + b"\n"
    dtype = ">u2" if maxval > 255 else "u1"
    return f"P5\n{w} {h}\n{maxval}\n".encode() + q.astype(dtype).tobytes()


def write_pgm(path: PathLike, pixels: np.ndarray, maxval: int = 255, ascii: bool = False) -> None:
    Path(path).write_bytes(encode_pgm(pixels, maxval, ascii))


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    """Write ``[H, W, 3]`` values in ``[0, 1]`` as an 8-bit binary PPM."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3], got {rgb.shape}")
    q = np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    h, w, _ = q.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise ImageFormatError(f"{path}: only 8-bit P6 is supported")
    w, h = int(w), int(h)
    return np.frombuffer(buf[pos + 1:], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3) / 255.0
