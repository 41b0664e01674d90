"""Image and mask files: binary PPM (P6), PGM (P5) and optional PNG."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DimMismatch, FormatError, IoError
from ..io_utils import atomic_write_bytes


def _detect_format(image_bytes: bytes) -> str:
    """Detect the image format based on magic bytes."""
    if image_bytes[:8] == b"\x89PNG\r\n\x1a\n":
        return "PNG"
    if image_bytes[:2] == b"P6":
        return "PPM"
    if image_bytes[:2] == b"P5":
        return "PGM"
    return "UNKNOWN"


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    """Quantize ``[0, 1]`` floats to 8 bits (round half to even)."""
    return np.round(np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _encode(img: Image.Image, fmt: str) -> bytes:
    buffer = io.BytesIO()
    img.save(buffer, format=fmt)
    return buffer.getvalue()


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimMismatch(f"expected an (H, W, 3) image, got {arr.shape}")
    atomic_write_bytes(Path(path), _encode(Image.fromarray(to_uint8(arr)), "PPM"))


def write_png(path: Path, rgb: np.ndarray) -> None:
    atomic_write_bytes(Path(path), _encode(Image.fromarray(to_uint8(rgb)), "PNG"))


def write_pgm_mask(path: Path, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    atomic_write_bytes(Path(path), _encode(Image.fromarray(arr), "PPM"))


def _open(path: Path) -> Image.Image:
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing input: {path}")
    payload = path.read_bytes()
    if _detect_format(payload) == "UNKNOWN":
        raise FormatError(f"{path}: not a PPM, PGM or PNG file")
    try:
        img = Image.open(io.BytesIO(payload))
        img.load()
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return img


def read_image(path: Path) -> np.ndarray:
    """Load an image as ``(H, W, 3)`` float64 in ``[0, 1]``."""
    with _open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path: Path) -> np.ndarray:
    with _open(path) as img:
        return np.asarray(img.convert("L")) >= 128
