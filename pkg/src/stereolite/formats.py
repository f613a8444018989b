"""File formats: PFM disparity maps, 16-bit PNG disparity maps (driving
benchmark convention), PPM/PGM photographs, and the binary weights container.
"""

from __future__ import annotations

import re
import struct
import zlib

import numpy as np
from PIL import Image

from .kernels import check
from .network import DisparityMap


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PFM: float maps, rows stored bottom-to-top, scale sign = endianness
# ---------------------------------------------------------------------------

def pfm_read(path):
    """Read a PFM file -> float32 array [H,W] (Pf) or [H,W,3] (PF)."""
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if m is None:
        raise FormatError(f"{path}: malformed PFM header")
    color = m.group(1) == b"PF"
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    if scale == 0:
        raise FormatError(f"{path}: zero scale in PFM header")
    channels = 3 if color else 1
    count = w * h * channels
    payload = data[m.end():]
    if len(payload) < 4 * count:
        raise FormatError(f"{path}: truncated PFM payload "
                          f"({len(payload)} bytes, need {4 * count})")
    endian = "<" if scale < 0 else ">"
    flat = np.frombuffer(payload[: 4 * count], dtype=endian + "f4")
    img = flat.reshape(h, w, channels)[::-1]  # bottom-to-top on disk
    img = np.ascontiguousarray(img.astype(np.float32))
    return img[..., 0] if not color else img


def pfm_write(path, array):
    """Write a float array [H,W] or [H,W,3] as little-endian PFM."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim == 2:
        header = b"Pf"
        payload = array[np.newaxis]
    elif array.ndim == 3 and array.shape[2] == 3:
        header = b"PF"
        payload = array.transpose(2, 0, 1)
    else:
        raise FormatError(f"PFM expects [H,W] or [H,W,3], got {array.shape}")
    h, w = array.shape[:2]
    body = np.ascontiguousarray(
        payload.transpose(1, 2, 0)[::-1]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(body)


# ---------------------------------------------------------------------------
# 16-bit PNG disparity (stored = disparity * 256, 0 = invalid)
# ---------------------------------------------------------------------------

def kitti_disp_decode(path) -> DisparityMap:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype not in (np.uint16, np.int32) or arr.ndim != 2:
        raise FormatError(f"{path}: expected 16-bit single-channel PNG, "
                          f"got {arr.dtype} with shape {arr.shape}")
    stored = arr.astype(np.uint32)
    values = stored.astype(np.float32) / 256.0
    return DisparityMap(values[np.newaxis], (stored != 0)[np.newaxis])


def kitti_disp_encode(disp: DisparityMap, path):
    check(disp.values.ndim == 3 and disp.values.shape[0] == 1,
          "PNG export expects a single [1,H,W] map")
    stored = np.rint(disp.values[0] * 256.0)
    stored = np.clip(stored, 0, 65535).astype(np.uint16)
    stored[~disp.valid_mask[0]] = 0
    Image.fromarray(stored).save(path)


# ---------------------------------------------------------------------------
# PPM / PGM photographs
# ---------------------------------------------------------------------------

def ppm_read(path):
    """Read binary PPM (P6) or PGM (P5) -> float32 [3,H,W] in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    # strip comments before tokenizing the header
    stripped = re.sub(rb"#[^\n]*", b"", data[:4096])
    m = re.match(rb"(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s", stripped)
    if m is None:
        raise FormatError(f"{path}: not a binary PPM/PGM file")
    color = m.group(1) == b"P6"
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval <= 0 or maxval > 65535:
        raise FormatError(f"{path}: invalid maxval {maxval}")
    # locate payload in the unstripped bytes: after the 4th header token
    pos, tokens = 0, 0
    while tokens < 4:
        m2 = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(data, pos)
        pos = m2.end()
        if not m2.group(1).startswith(b"#"):
            tokens += 1
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    channels = 3 if color else 1
    count = w * h * channels
    if len(data) - pos < count * dtype.itemsize:
        raise FormatError(f"{path}: truncated pixel data")
    flat = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    img = flat.reshape(h, w, channels).astype(np.float32) / maxval
    if not color:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def image_read(path):
    """Read a photograph (PPM/PGM/PNG/...) -> float32 [3,H,W] in [0,1]."""
    p = str(path)
    if p.endswith((".ppm", ".pgm")):
        return ppm_read(p)
    img = Image.open(p).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# weights container
# ---------------------------------------------------------------------------

MAGIC = b"MSNW1"
_DTYPE_TAGS = {0: np.dtype("<f4")}


def weights_save(path, entries):
    """Serialize an ordered list of (name, array) pairs.

    Layout (all integers little-endian): magic, u32 entry count, per-entry
    [u16 name length, utf-8 name, u8 dtype tag, u8 rank, u32 extents...,
    u64 byte offset], then the contiguous f32 payload region, then u32 crc32
    of that region.
    """
    names = [n for n, _ in entries]
    check(len(set(names)) == len(names), "duplicate entry names")
    header = bytearray(MAGIC)
    header += struct.pack("<I", len(entries))
    offset = 0
    payloads = []
    for name, arr in entries:
        arr = np.asarray(arr, dtype="<f4")
        shape = arr.shape  # before ascontiguousarray, which promotes 0-d
        arr = np.ascontiguousarray(arr)
        raw = name.encode("utf-8")
        header += struct.pack("<H", len(raw)) + raw
        header += struct.pack("<BB", 0, len(shape))
        header += struct.pack(f"<{len(shape)}I", *shape)
        header += struct.pack("<Q", offset)
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    body = b"".join(payloads)
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def weights_load(path):
    """Inverse of :func:`weights_save`; returns the ordered (name, array)
    list.  Raises :class:`FormatError` on any corruption, including a crc
    mismatch over the payload region."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: bad magic")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated header")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (count,) = take("<I")
    meta = []
    for _ in range(count):
        (nlen,) = take("<H")
        name = data[pos: pos + nlen].decode("utf-8")
        pos += nlen
        tag, rank = take("<BB")
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"{path}: unknown dtype tag {tag}")
        extents = take(f"<{rank}I")
        (offset,) = take("<Q")
        meta.append((name, _DTYPE_TAGS[tag], extents, offset))
    body = data[pos:-4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: payload crc mismatch")
    entries = []
    seen = set()
    for name, dtype, extents, offset in meta:
        if name in seen:
            raise FormatError(f"{path}: duplicate entry {name!r}")
        seen.add(name)
        n = int(np.prod(extents, dtype=np.int64)) if extents else 1
        end = offset + n * dtype.itemsize
        if end > len(body):
            raise FormatError(f"{path}: entry {name!r} exceeds payload")
        arr = np.frombuffer(body, dtype=dtype, count=n, offset=offset)
        entries.append((name, arr.reshape(extents).astype(np.float32)))
    return entries


def model_save(path, model):
    weights_save(path, model.state_items())


def model_load(path, model):
    model.load_state(dict(weights_load(path)))
    return model
