"""PGM/PPM/PNG reading and writing, and the 8-bit <-> model-space mapping."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_PNM_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def to_model(img8: np.ndarray) -> np.ndarray:
    return np.asarray(img8, dtype=float) / 127.5 - 1.0


def to_display(u: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(u, dtype=float) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Return an 8-bit array of shape (channels, rows, cols)."""
    path = Path(path)
    raw = path.read_bytes()
    m = _PNM_HEADER.match(raw)
    if m:
        kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
        if maxval > 255:
            raise ValueError(f"{path}: only 8-bit PNM is supported")
        c = 1 if kind == b"P5" else 3
        body = np.frombuffer(raw, dtype=np.uint8, offset=m.end(), count=w * h * c)
        return body.reshape(h, w, c).transpose(2, 0, 1).copy()
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if "A" in im.mode or im.mode == "P" else "L")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.copy()


def write_pnm(path, img8: np.ndarray) -> None:
    """Write (channels, rows, cols) uint8 as binary PGM (1 channel) or PPM (3)."""
    img8 = np.asarray(img8, dtype=np.uint8)
    if img8.ndim == 2:
        img8 = img8[None]
    c, h, w = img8.shape
    if c not in (1, 3):
        raise ValueError(f"cannot write {c}-channel image as PNM")
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(img8.transpose(1, 2, 0).tobytes())


def field_to_image(u: np.ndarray, rows: int, cols: int) -> np.ndarray:
    u = np.atleast_2d(u)
    return to_display(u.reshape(u.shape[0], rows, cols))


def image_to_field(img8: np.ndarray) -> np.ndarray:
    c = img8.shape[0]
    return to_model(img8.reshape(c, -1))
