"""Blockwise DCT, zigzag scan, quality-factor quantization and a JPEG simulator.

Blocks are ``(..., 8, 8)`` float arrays indexed ``[u, v]`` = ``[row, col]``
frequency. Quantization tables (:data:`QuantTable`) are 64-entry integer
vectors in zigzag order, as they appear in a DQT segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_core import rgb_to_ycbcr, validate_image, ycbcr_to_rgb

N = 8

# ITU-T T.81 Annex K.1, natural (row-major) order.
LUMA_BASE = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.int64).reshape(8, 8)

CHROMA_BASE = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
], dtype=np.int64).reshape(8, 8)


def _zigzag_walk(n: int = N) -> list[tuple[int, int]]:
    # walk anti-diagonals; odd diagonals run top-right -> bottom-left
    order = []
    for s in range(2 * n - 1):
        cells = [(u, s - u) for u in range(n) if 0 <= s - u < n]
        order.extend(cells if s % 2 else cells[::-1])
    return order


ZIGZAG = np.array(_zigzag_walk(), dtype=np.int64)          # nu -> (u, v)
ZIGZAG_NATURAL = ZIGZAG[:, 0] * N + ZIGZAG[:, 1]           # nu -> row-major index
NATURAL_TO_ZIGZAG = np.argsort(ZIGZAG_NATURAL)              # row-major index -> nu


def zigzag_to_uv(nu: int) -> tuple[int, int]:
    if not 0 <= nu < N * N:
        raise IndexError(f"zigzag index {nu} out of range 0..63")
    u, v = ZIGZAG[nu]
    return int(u), int(v)


def uv_to_zigzag(u: int, v: int) -> int:
    if not (0 <= u < N and 0 <= v < N):
        raise IndexError(f"frequency ({u}, {v}) out of range")
    return int(NATURAL_TO_ZIGZAG[u * N + v])


def to_zigzag(block: np.ndarray) -> np.ndarray:
    """``(..., 8, 8)`` -> ``(..., 64)`` in zigzag order."""
    block = np.asarray(block)
    return block.reshape(block.shape[:-2] + (N * N,))[..., ZIGZAG_NATURAL]


def from_zigzag(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec)
    return vec[..., NATURAL_TO_ZIGZAG].reshape(vec.shape[:-1] + (N, N))


def dct_matrix(n: int = N) -> np.ndarray:
    """Orthonormal DCT-II basis ``C[u, m] = alpha(u) cos((2m+1) u pi / 2n)``."""
    k = np.arange(n)
    c = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / (2 * n))
    alpha = np.full(n, np.sqrt(2.0 / n))
    alpha[0] = np.sqrt(1.0 / n)
    return alpha[:, None] * c


_C = dct_matrix()


def dct2d(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D type-II DCT over the last two axes."""
    block = np.asarray(block, dtype=np.float64)
    n = block.shape[-1]
    c = _C if n == N else dct_matrix(n)
    return c @ block @ c.T


def idct2d(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = coeffs.shape[-1]
    c = _C if n == N else dct_matrix(n)
    return c.T @ coeffs @ c


# ------------------------------------------------------------ quantization

def quant_table_for_qf(qf: int, plane: str = "luma") -> np.ndarray:
    """Annex K table scaled for quality factor ``qf``; zigzag order, int64."""
    if not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be an integer in 1..100, got {qf!r}")
    if plane == "luma":
        base = LUMA_BASE
    elif plane == "chroma":
        base = CHROMA_BASE
    else:
        raise ValueError(f"plane must be 'luma' or 'chroma', got {plane!r}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    table = np.clip((base * scale + 50) // 100, 1, 255)
    return to_zigzag(table)


def quant_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q)
    if q.shape != (N * N,):
        raise ValueError(f"quantization table must have 64 entries, got shape {q.shape}")
    if np.any(q < 1):
        raise ValueError("quantization table entries must be >= 1")
    return from_zigzag(q).astype(np.float64)


def quantize(f: np.ndarray, q: np.ndarray, rounding: str = "floor") -> np.ndarray:
    """Quantize DCT blocks with a zigzag-ordered table.

    ``rounding="floor"`` is the literal ``floor(x + 1/2)`` rule, which sends
    negative half-integers upward (-2.5 -> -2). ``"symmetric"`` rounds halves
    away from zero the way libjpeg does.
    """
    x = np.asarray(f, dtype=np.float64) / quant_matrix(q)
    if rounding == "floor":
        out = np.floor(x + 0.5)
    elif rounding == "symmetric":
        out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    else:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    return out.astype(np.int64)


def dequantize(c: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.asarray(c, dtype=np.float64) * quant_matrix(q)


# ------------------------------------------------------------ block helpers

def pad_to_blocks(plane: np.ndarray, n: int = N) -> np.ndarray:
    """Edge-replicate a 2-D plane up to multiples of ``n``."""
    h, w = plane.shape
    ph, pw = (-h) % n, (-w) % n
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def blockify(plane: np.ndarray, n: int = N) -> np.ndarray:
    """``(H, W)`` with H, W multiples of n -> ``(H/n, W/n, n, n)``."""
    h, w = plane.shape
    if h % n or w % n:
        raise ValueError(f"plane {plane.shape} is not a multiple of {n}")
    return plane.reshape(h // n, n, w // n, n).swapaxes(1, 2)


def unblockify(blocks: np.ndarray) -> np.ndarray:
    hb, wb, n, _ = blocks.shape
    return blocks.swapaxes(1, 2).reshape(hb * n, wb * n)


def image_blocks(plane: np.ndarray) -> np.ndarray:
    """Pad and split a plane into 8x8 blocks."""
    return blockify(pad_to_blocks(np.asarray(plane, dtype=np.float64)))


# ------------------------------------------------------------ JPEG simulation

@dataclass(frozen=True)
class JpegSimulation:
    """Output of :func:`simulate_jpeg`.

    ``coeffs[c]`` is the ``(Hb, Wb, 8, 8)`` quantized grid of component ``c``
    (Y, Cb, Cr or a single gray plane); ``table_ids[c]`` selects the entry of
    ``tables`` used for it.
    """

    compressed: np.ndarray
    coeffs: tuple[np.ndarray, ...]
    tables: tuple[np.ndarray, ...]
    table_ids: tuple[int, ...]
    width: int
    height: int


def _component_planes(img: np.ndarray) -> list[np.ndarray]:
    img = img.astype(np.float64)
    if img.ndim == 2:
        return [img]
    if img.shape[2] == 1:
        return [img[..., 0]]
    ycc = rgb_to_ycbcr(img / 255.0) * 255.0
    return [ycc[..., k] for k in range(3)]


def planes_to_image(planes: list[np.ndarray]) -> np.ndarray:
    """Reassemble decoded component planes (0..255 floats) into a uint8 image."""
    if len(planes) == 1:
        out = planes[0]
    else:
        ycc = np.stack(planes, axis=-1) / 255.0
        out = ycbcr_to_rgb(ycc) * 255.0
    return np.floor(np.clip(out, 0.0, 255.0) + 0.5).astype(np.uint8)


def decode_planes(coeffs, tables, table_ids, width: int, height: int) -> list[np.ndarray]:
    """Dequantize + IDCT + level unshift each component grid, cropped to size."""
    planes = []
    for grid, tid in zip(coeffs, table_ids):
        spatial = idct2d(dequantize(grid, tables[tid])) + 128.0
        planes.append(unblockify(spatial)[:height, :width])
    return planes


def simulate_jpeg(img: np.ndarray, qf: int, rounding: str = "floor") -> JpegSimulation:
    """Baseline 4:4:4 JPEG round trip on a uint8 image."""
    img = validate_image(img, dtype=np.uint8)
    height, width = img.shape[:2]
    planes = _component_planes(img)
    luma_q = quant_table_for_qf(qf, "luma")
    if len(planes) == 1:
        tables, table_ids = (luma_q,), (0,)
    else:
        tables, table_ids = (luma_q, quant_table_for_qf(qf, "chroma")), (0, 1, 1)

    coeffs = []
    for plane, tid in zip(planes, table_ids):
        blocks = image_blocks(plane - 128.0)
        coeffs.append(quantize(dct2d(blocks), tables[tid], rounding))
    out_planes = decode_planes(coeffs, tables, table_ids, width, height)
    compressed = planes_to_image(out_planes)
    if img.ndim == 3 and img.shape[2] == 1:
        compressed = compressed[..., None]
    return JpegSimulation(compressed, tuple(coeffs), tables, table_ids, width, height)


def loss_map(orig: np.ndarray, compressed: np.ndarray) -> np.ndarray:
    """Per-channel absolute difference of two uint8 images, scaled to [0, 1]."""
    orig = np.asarray(orig)
    compressed = np.asarray(compressed)
    if orig.shape != compressed.shape:
        raise ValueError(f"dimension mismatch: {orig.shape} vs {compressed.shape}")
    return np.abs(orig.astype(np.float64) - compressed.astype(np.float64)) / 255.0
