from __future__ import annotations

import cv2
import numpy as np
from PIL import Image

from panoscan.diffcore import Array
from panoscan.errors import DataError


def load_png(path: str) -> Array:
    """Reads an 8- or 16-bit PNG, gray or color, as an ``(H, W, 3)`` array in
    ``[0, 1]`` at the file's full bit depth."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f'cannot read image {path}')
    if raw.dtype not in (np.uint8, np.uint16):
        raise DataError(f'unsupported sample type {raw.dtype} in {path}')
    img = raw.astype(np.float64) / np.iinfo(raw.dtype).max
    if img.ndim == 2:
        return np.repeat(img[..., None], 3, axis=2)
    # BGR or BGRA
    return np.ascontiguousarray(img[..., 2::-1])


def to_uint8(img: Array) -> np.ndarray:  # type: ignore[type-arg]
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: str, img: Array) -> None:
    """Writes an ``(H, W, 3)`` or ``(H, W)`` array in ``[0, 1]`` as 8-bit."""
    try:
        Image.fromarray(to_uint8(img)).save(path, format='PNG')
    except OSError as e:
        raise DataError(f'cannot write image {path}: {e}')


def downscale(img: Array, width: int, height: int) -> Array:
    """Box-filtered resize through Pillow, per channel in float precision."""
    channels = [
        np.asarray(
            Image.fromarray(img[..., c].astype(np.float32)).resize(
                (width, height), resample=Image.BOX,
            ),
            dtype=np.float64,
        )
        for c in range(img.shape[2])
    ]
    return np.clip(np.stack(channels, axis=2), 0.0, 1.0)
