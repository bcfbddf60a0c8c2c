"""Image file loading and saving (PNG and PGM).

Inputs normalize to [0, 1] by the format's maximum code value; color
inputs convert to luma with BT.601 weights.
"""

import numpy as np
from PIL import Image

_BT601 = np.array([0.299, 0.587, 0.114])


def load_gray_image(path):
    from .model import GrayImage

    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P", "PA", "CMYK", "YCbCr"):
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            data = rgb @ _BT601
        elif im.mode == "L":
            data = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode in ("I", "I;16", "I;16B", "I;16L"):
            data = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "1":
            data = np.asarray(im, dtype=np.float64)
        else:
            raise ValueError(f"unsupported image mode {im.mode!r} in {path}")
    return GrayImage(np.clip(data, 0.0, 1.0))


def save_gray_image(image, path):
    """Write an 8-bit grayscale PNG or PGM, chosen by the file suffix."""
    arr = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
