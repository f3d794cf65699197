"""Image containers, colour transforms, quality metrics and file I/O.

Images are plain numpy arrays laid out ``(H, W)`` or ``(H, W, C)``:

* 8-bit images are ``uint8`` arrays,
* float images are ``float64`` arrays with nominal range ``[0, 1]``.

Float data is written to disk as float32 (see :func:`save_tensor`).
"""

from __future__ import annotations

import os
import struct

import numpy as np
from scipy import ndimage

TENSOR_MAGIC = b"FDGT"

# Full-range JFIF (ITU-T T.871) forward matrix; chroma offset applied separately.
_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168735892, -0.331264108, 0.5],
    [0.5, -0.418687589, -0.081312411],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


class ImageFormatError(ValueError):
    """Malformed or unsupported image / tensor file."""


class TruncatedFileError(ImageFormatError):
    """File ended before its declared payload."""


def validate_image(img: np.ndarray, *, dtype=None) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {img.shape[2]}")
    if img.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("empty image")
    if dtype is not None and img.dtype != dtype:
        raise TypeError(f"expected dtype {np.dtype(dtype)}, got {img.dtype}")
    return img


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 -> unit-range float64."""
    return np.asarray(img, dtype=np.float64) / 255.0


def to_u8(img: np.ndarray) -> np.ndarray:
    """Unit-range float -> uint8, rounding half away from zero after clamping."""
    scaled = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def _require_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("colour transform needs a 3-channel image")
    return img


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    """Full-range YCbCr with chroma centred on 0.5 (unit-range data)."""
    img = _require_rgb(img)
    return img @ _RGB_TO_YCC.T + _CHROMA_OFFSET


def ycbcr_to_rgb(img: np.ndarray) -> np.ndarray:
    img = _require_rgb(img)
    return (img - _CHROMA_OFFSET) @ _YCC_TO_RGB.T


def luma(img: np.ndarray) -> np.ndarray:
    """Y plane of a float image; single-channel input is returned as a 2-D plane."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return rgb_to_ycbcr(img)[..., 0]


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable correlation, then crop to positions where the window fits fully
    out = ndimage.correlate1d(plane, kernel, axis=0, mode="constant")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="constant")
    h = len(kernel) // 2
    return out[h:-h, h:-h]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over fully-contained 11x11 Gaussian windows (sigma 1.5).

    Colour inputs are compared on their luma plane.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    a, b = luma(a), luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    k = _gaussian_kernel()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def metrics(a: np.ndarray, b: np.ndarray) -> dict:
    return {"psnr": psnr(a, b), "ssim": ssim(a, b)}


# ---------------------------------------------------------------- file I/O

def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("malformed PNM header")
    return data[start:pos], pos


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary P5 (gray) or P6 (RGB) data with maxval 255."""
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"malformed PNM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    if width <= 0 or height <= 0:
        raise ImageFormatError("PNM dimensions must be positive")
    # exactly one whitespace byte separates header from raster
    pos += 1
    ch = 3 if magic == b"P6" else 1
    size = width * height * ch
    payload = data[pos:pos + size]
    if len(payload) < size:
        raise TruncatedFileError(f"PNM payload truncated: {len(payload)} of {size} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, ch)
    return arr[..., 0].copy() if ch == 1 else arr.copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = validate_image(img, dtype=np.uint8)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    h, w = img.shape[:2]
    magic = b"P6" if img.ndim == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def save_ppm(img: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(img))


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if data[:4] != TENSOR_MAGIC:
        raise ImageFormatError("bad tensor magic")
    if len(data) < 8:
        raise TruncatedFileError("tensor header truncated")
    (ndim,) = struct.unpack_from("<I", data, 4)
    hdr = 8 + 4 * ndim
    if len(data) < hdr:
        raise TruncatedFileError("tensor dims truncated")
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - hdr < 4 * count:
        raise TruncatedFileError(f"tensor payload truncated: need {4 * count} bytes")
    if len(data) - hdr > 4 * count:
        raise ImageFormatError("trailing bytes after tensor payload")
    return np.frombuffer(data, dtype="<f4", count=count, offset=hdr).reshape(shape).astype(np.float32)


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def save_tensor(arr: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))
