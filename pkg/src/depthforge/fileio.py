"""PFM and PPM readers/writers.

PFM carries every float map (depth, disparity, masks as 0/1); PPM carries
RGB images. Both writers are byte-deterministic: the same array always
produces the same file.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, PfmError
from .validation import as_float_array, check_image

PFM_GRAY = b"Pf"
PFM_COLOR = b"PF"


def _read_token(raw: bytes, pos: int, what: str) -> tuple[bytes, int]:
    """Next whitespace-delimited token starting at or after ``pos``."""
    n = len(raw)
    while pos < n and raw[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not raw[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PfmError(f"missing {what} in header", offset=start)
    return raw[start:pos], pos


def pfm_encode(values: np.ndarray) -> bytes:
    """Little-endian PFM bytes for a (H, W) or (H, W, 3) map.

    Values are stored as 32-bit floats, scanlines bottom to top; the scale
    line is fixed at -1.0 (the sign is what encodes endianness).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        magic = PFM_GRAY
    elif values.ndim == 3 and values.shape[2] == 3:
        magic = PFM_COLOR
    else:
        raise DomainError("pfm: expected a (H, W) or (H, W, 3) array")
    if values.size == 0:
        raise DomainError("pfm: empty map")
    h, w = values.shape[:2]
    header = magic + b"\n" + f"{w} {h}".encode() + b"\n" + b"-1.0\n"
    raster = np.flipud(values).astype("<f4").tobytes(order="C")
    return header + raster


def pfm_decode(raw: bytes) -> np.ndarray:
    """Parse PFM bytes to float64, (H, W) for "Pf" or (H, W, 3) for "PF"."""
    magic, pos = _read_token(raw, 0, "magic")
    if magic not in (PFM_GRAY, PFM_COLOR):
        raise PfmError(f"bad magic {magic!r}, expected 'Pf' or 'PF'", offset=0)
    channels = 1 if magic == PFM_GRAY else 3

    dims = []
    for what in ("width", "height"):
        token, pos = _read_token(raw, pos, what)
        try:
            value = int(token)
        except ValueError:
            raise PfmError(f"{what} is not an integer: {token!r}", offset=pos - len(token))
        if value < 1:
            raise PfmError(f"{what} must be positive, got {value}", offset=pos - len(token))
        dims.append(value)
    w, h = dims

    token, pos = _read_token(raw, pos, "scale")
    try:
        scale = float(token)
    except ValueError:
        raise PfmError(f"scale is not a number: {token!r}", offset=pos - len(token))
    if scale == 0.0:
        raise PfmError("scale must be nonzero", offset=pos - len(token))

    # Exactly one whitespace byte separates the header from the raster.
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise PfmError("missing separator after scale", offset=pos)
    pos += 1

    expected = w * h * channels * 4
    available = len(raw) - pos
    if available < expected:
        raise PfmError(
            f"truncated raster: expected {expected} bytes, found {available}",
            offset=len(raw),
        )
    if available > expected:
        raise PfmError(f"{available - expected} trailing bytes after raster", offset=pos + expected)

    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(raw, dtype=dtype, count=w * h * channels, offset=pos)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(flat.reshape(shape)).astype(np.float64)


def pfm_write(path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(pfm_encode(values))


def pfm_read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return pfm_decode(fh.read())


# ---------------------------------------------------------------------------
# PPM (binary P6, 8-bit; reader also accepts ASCII P3)


def ppm_encode(image: np.ndarray) -> bytes:
    """P6 bytes for a (3, H, W) image with values in [0, 1]."""
    image = check_image(image, "image")
    _, h, w = image.shape
    quantized = np.round(image * 255.0).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode()
    return header + quantized.transpose(1, 2, 0).tobytes(order="C")


def ppm_decode(raw: bytes) -> np.ndarray:
    """Parse P6 or P3 bytes to a (3, H, W) float64 image in [0, 1]."""
    magic, pos = _read_token(raw, 0, "magic")
    if magic not in (b"P6", b"P3"):
        raise PfmError(f"bad magic {magic!r}, expected 'P6' or 'P3'", offset=0)

    fields = []
    for what in ("width", "height", "maxval"):
        token, pos = _read_token(raw, pos, what)
        try:
            value = int(token)
        except ValueError:
            raise PfmError(f"{what} is not an integer: {token!r}", offset=pos - len(token))
        if value < 1:
            raise PfmError(f"{what} must be positive, got {value}", offset=pos - len(token))
        fields.append(value)
    w, h, maxval = fields
    if maxval > 255:
        raise PfmError(f"unsupported maxval {maxval}", offset=pos)

    if magic == b"P6":
        if pos >= len(raw) or not raw[pos : pos + 1].isspace():
            raise PfmError("missing separator after maxval", offset=pos)
        pos += 1
        expected = w * h * 3
        if len(raw) - pos < expected:
            raise PfmError("truncated raster", offset=len(raw))
        flat = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=pos)
    else:
        tokens = raw[pos:].split()
        if len(tokens) < w * h * 3:
            raise PfmError("truncated raster", offset=len(raw))
        flat = np.array([int(t) for t in tokens[: w * h * 3]], dtype=np.uint16)
    if flat.max(initial=0) > maxval:
        raise PfmError("sample exceeds maxval", offset=pos)
    image = flat.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval
    return image


def ppm_write(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_encode(image))


def ppm_read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return ppm_decode(fh.read())
