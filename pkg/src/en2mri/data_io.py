"""Bit-exact binary tensor format ("EN2T") and 16-bit PGM export.

EN2T layout, all little-endian:

    bytes 0..3   magic "EN2T"
    byte  4      version, currently 1
    byte  5      dtype code: 0 = f32, 1 = f64, 2 = u8
    byte  6      is_complex: 0 or 1 (complex entries interleave re, im)
    byte  7      ndim
    next 4*ndim  dims as u32
    rest         payload, row-major

The format is platform-independent and round-trips byte-identically, which
the interchange and checkpoint tests rely on.
"""

import struct

import numpy as np

from .errors import FormatError

_MAGIC = b"EN2T"
_VERSION = 1

_DTYPES = {
    (0, 0): np.dtype("<f4"),
    (1, 0): np.dtype("<f8"),
    (2, 0): np.dtype("u1"),
    (0, 1): np.dtype("<c8"),
    (1, 1): np.dtype("<c16"),
}


def _codes_for(arr):
    if arr.dtype == np.complex64:
        return 0, 1
    if arr.dtype == np.complex128:
        return 1, 1
    if arr.dtype == np.float32:
        return 0, 0
    if arr.dtype == np.float64:
        return 1, 0
    if arr.dtype == np.uint8 or arr.dtype == bool:
        return 2, 0
    raise FormatError(f"unsupported dtype {arr.dtype} for EN2T")


def write_en2t(arr, path):
    """Serialize an array (f32/f64/u8, real or complex) to an EN2T file."""
    arr = np.asarray(arr)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    dtype_code, is_complex = _codes_for(arr)
    header = _MAGIC + bytes([_VERSION, dtype_code, is_complex, arr.ndim])
    header += b"".join(struct.pack("<I", d) for d in arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[(dtype_code, is_complex)]).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_en2t(path):
    """Parse an EN2T file back into a numpy array (inverse of write_en2t)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an EN2T header ({len(raw)} bytes)")
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {_MAGIC!r}")
    version, dtype_code, is_complex, ndim = raw[4], raw[5], raw[6], raw[7]
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if (dtype_code, is_complex) not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {dtype_code} / is_complex {is_complex}")
    need = 8 + 4 * ndim
    if len(raw) < need:
        raise FormatError(f"{path}: truncated header, expected {need} bytes, got {len(raw)}")
    dims = struct.unpack("<" + "I" * ndim, raw[8:need])
    dtype = _DTYPES[(dtype_code, is_complex)]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expect = need + count * dtype.itemsize
    if len(raw) != expect:
        raise FormatError(f"{path}: payload size mismatch, expected {expect} bytes, got {len(raw)}")
    arr = np.frombuffer(raw[need:], dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def export_pgm(mag, mask, path):
    """Write a 16-bit binary PGM (P5, maxval 65535, big-endian samples).

    Values scale as round(65535 * clamp(v / vmax, 0, 1)), where vmax is the
    maximum over the mask (whole grid when mask is None).  vmax == 0 yields
    an all-zero image.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim == 3 and mag.shape[0] == 1:
        mag = mag[0]
    if mag.ndim != 2:
        raise FormatError(f"export_pgm expects a 2D magnitude grid, got shape {mag.shape}")
    if mask is not None:
        sel = np.asarray(mask).astype(bool)
        if sel.shape != mag.shape:
            raise FormatError(f"export_pgm: mask {sel.shape} does not match grid {mag.shape}")
        vmax = float(mag[sel].max()) if sel.any() else 0.0
    else:
        vmax = float(mag.max())
    if vmax <= 0:
        samples = np.zeros(mag.shape, dtype=">u2")
    else:
        scaled = np.rint(65535.0 * np.clip(mag / vmax, 0.0, 1.0))
        samples = scaled.astype(">u2")
    h, w = mag.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(samples.tobytes())
