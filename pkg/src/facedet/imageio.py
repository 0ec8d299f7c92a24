"""Image loading, saving and resizing.

Images travel as (3, H, W) float32 in [0, 1]. PPM (binary P6) is handled
directly so the test suite needs no codec library; PNG goes through
Pillow. Resizing is bilinear with half-pixel sampling, matching the
upsampling convention inside the network.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def read_ppm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary P6 PPM")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 255.0


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    c, h, w = image.shape
    if c != 3:
        raise ValueError(f"expected (3, H, W), got {image.shape}")
    u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.transpose(1, 2, 0).tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Read a PNG or PPM into (3, H, W) float32 in [0, 1]."""
    p = Path(path)
    if p.suffix.lower() == ".ppm":
        return read_ppm(p)
    from PIL import Image

    with Image.open(p) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) with half-pixel bilinear sampling, edges clamped."""
    c, h, w = image.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return image.copy()

    def axis_coords(n_out: int, n_in: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(src).astype(np.int64)
        t = (src - lo).astype(image.dtype)
        return np.clip(lo, 0, n_in - 1), np.clip(lo + 1, 0, n_in - 1), t

    y0, y1, ty = axis_coords(out_h, h)
    x0, x1, tx = axis_coords(out_w, w)
    rows0 = image[:, y0, :]
    rows1 = image[:, y1, :]
    rows = rows0 + (rows1 - rows0) * ty[None, :, None]
    cols0 = rows[:, :, x0]
    cols1 = rows[:, :, x1]
    return cols0 + (cols1 - cols0) * tx[None, None, :]
