"""Binary netpbm IO: P6 (RGB) and P5 (gray), maxval 255 only.

In memory, values live in [0,1] as v/255; writing quantizes with
round(v*255). Loading a saved file therefore round-trips bit-exactly.
"""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    """Malformed netpbm data; the message names the byte offset."""


def _tokens(buf: bytes, n: int):
    """First n whitespace-delimited header tokens, skipping # comments.

    Returns (tokens, offset of the byte after the single whitespace that
    terminates the last token).
    """
    toks = []
    i = 0
    while len(toks) < n:
        if i >= len(buf):
            raise FormatError(f"truncated header at offset {i}")
        c = buf[i:i + 1]
        if c == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
            i += 1
        elif c.isspace():
            i += 1
        else:
            start = i
            while i < len(buf) and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
                i += 1
            toks.append(buf[start:i])
            if len(toks) == n:
                if i >= len(buf) or not buf[i:i + 1].isspace():
                    raise FormatError(f"missing whitespace after header at offset {i}")
                i += 1  # exactly one whitespace byte before the payload
    return toks, i


def _load(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    toks, offset = _tokens(buf, 4)
    if toks[0] != magic:
        raise FormatError(f"bad magic {toks[0]!r} at offset 0, expected {magic!r}")
    try:
        w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    except ValueError:
        raise FormatError(f"non-numeric header field before offset {offset}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at offset {offset}; only 255")
    need = w * h * channels
    payload = buf[offset:]
    if len(payload) < need:
        raise FormatError(f"truncated payload at offset {offset + len(payload)}: "
                          f"need {need} bytes, have {len(payload)}")
    raw = np.frombuffer(payload[:need], dtype=np.uint8)
    if channels == 1:
        arr = raw.reshape(h, w)
    else:
        arr = raw.reshape(h, w, 3).transpose(2, 0, 1)
    return arr.astype(np.float64) / 255.0


def _save(path, magic: bytes, arr: np.ndarray) -> None:
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if magic == b"P6":
        h, w = q.shape[1:]
        payload = q.transpose(1, 2, 0).tobytes()
    else:
        h, w = q.shape
        payload = q.tobytes()
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
        f.write(payload)


def load_ppm(path) -> np.ndarray:
    """RGB image as (3, H, W) floats in [0,1]."""
    return _load(path, b"P6", 3)


def load_pgm(path) -> np.ndarray:
    """Gray image as (H, W) floats in [0,1]."""
    return _load(path, b"P5", 1)


def save_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"P6 expects a (3,H,W) array, got shape {image.shape}")
    _save(path, b"P6", image)


def save_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(f"P5 expects an (H,W) array, got shape {image.shape}")
    _save(path, b"P5", image)
