"""Log-DCT spectrum decomposition of compressed hazy images.

A compressed image is modelled as an elementwise product ``Ic = phi * I``
of the uncompressed image ``I`` and a compression factor ``phi``. Taking
logs turns the product into a sum, and because normalization and the 8x8
DCT are both linear, the log-DCT spectrum of ``Ic`` splits exactly into a
compression spectrum plus the spectrum of ``I``.

The learned decomposer is not part of this package; anything implementing
:class:`Decomposer` can be plugged in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import jpeg_codec as jc
from .image_core import load_tensor, save_tensor, to_u8

DELTA = 1.0 / 255.0
LOG_OFFSET = float(np.log(DELTA))
LOG_SCALE = float(np.log1p(DELTA) - np.log(DELTA))
PHI_RANGE = (1.0 / 64.0, 64.0)
CHARBONNIER_EPS = 1e-3


@dataclass(frozen=True)
class LogDctTensor:
    """Blockwise DCT of a normalized log image.

    ``coeffs`` has shape ``(C, Hb, Wb, 8, 8)``. The normalized plane is
    ``(ln(x + delta) - offset) / scale``; compression spectra carry
    ``offset = 0`` since they are differences of two such planes.
    """

    coeffs: np.ndarray
    height: int
    width: int
    scale: float = LOG_SCALE
    offset: float = LOG_OFFSET
    delta: float = DELTA

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    def zeros_like(self, offset: float | None = None) -> "LogDctTensor":
        return LogDctTensor(np.zeros_like(self.coeffs), self.height, self.width, self.scale,
                            self.offset if offset is None else offset, self.delta)

    def constants(self) -> dict:
        return {"scale": self.scale, "offset": self.offset, "delta": self.delta,
                "height": self.height, "width": self.width, "shape": list(self.coeffs.shape)}


def _channels_first(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[None]
    if img.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) image, got {img.shape}")
    return np.moveaxis(img, -1, 0)


def _plane_dct(planes: np.ndarray) -> np.ndarray:
    return np.stack([jc.dct2d(jc.image_blocks(p)) for p in planes])


def _plane_idct(coeffs: np.ndarray, height: int, width: int) -> np.ndarray:
    return np.stack([jc.unblockify(jc.idct2d(c))[:height, :width] for c in coeffs])


def normalize_log(img: np.ndarray, delta: float = DELTA) -> np.ndarray:
    return (np.log(img + delta) - LOG_OFFSET) / LOG_SCALE


def to_log_dct(img: np.ndarray) -> LogDctTensor:
    img = np.asarray(img, dtype=np.float64)
    if np.any(img < 0):
        raise ValueError("log-DCT input must be non-negative")
    planes = _channels_first(img)
    return LogDctTensor(_plane_dct(normalize_log(planes)), img.shape[0], img.shape[1])


def from_log_dct(t: LogDctTensor, channels_last: bool | None = None) -> np.ndarray:
    """Invert :func:`to_log_dct`; output is clamped to [0, 1]."""
    planes = _plane_idct(t.coeffs, t.height, t.width) * t.scale + t.offset
    img = np.clip(np.exp(planes) - t.delta, 0.0, 1.0)
    if channels_last is None:
        channels_last = t.channels != 1
    return np.moveaxis(img, 0, -1) if channels_last else img[0]


def compression_factor(compressed: np.ndarray, clean: np.ndarray) -> np.ndarray:
    phi = (np.asarray(compressed, dtype=np.float64) + DELTA) / (np.asarray(clean, dtype=np.float64) + DELTA)
    return np.clip(phi, *PHI_RANGE)


def spectrum_of_factor(phi: np.ndarray, height: int, width: int) -> LogDctTensor:
    """Log-DCT of ``phi`` with the shared scale and no offset."""
    return LogDctTensor(_plane_dct(_channels_first(np.log(phi)) / LOG_SCALE), height, width, offset=0.0)


def ground_truth_pair(hazy: np.ndarray, qf: int) -> tuple[LogDctTensor, LogDctTensor]:
    """(compression spectrum, clean spectrum) targets for a hazy image at ``qf``."""
    hazy = np.asarray(hazy, dtype=np.float64)
    compressed = jc.simulate_jpeg(to_u8(hazy), qf).compressed.astype(np.float64) / 255.0
    compressed = compressed.reshape(hazy.shape)
    h, w = hazy.shape[:2]
    d2 = spectrum_of_factor(compression_factor(compressed, hazy), h, w)
    return d2, to_log_dct(hazy)


def additive_residual(d1: LogDctTensor, d2: LogDctTensor, d3: LogDctTensor, off_dc: bool = True) -> float:
    """``max |D1 - (D2 + D3)|``, optionally ignoring the DC coefficient."""
    diff = np.abs(d1.coeffs - (d2.coeffs + d3.coeffs))
    if off_dc:
        diff = diff.copy()
        diff[..., 0, 0] = 0.0
    return float(diff.max())


def charbonnier_loss(d2_pred, d2_gt, d3_pred, d3_gt, eps: float = CHARBONNIER_EPS) -> float:
    """Mean Charbonnier penalty of both spectra, summed."""
    arrs = [np.asarray(getattr(x, "coeffs", x), dtype=np.float64) for x in (d2_pred, d2_gt, d3_pred, d3_gt)]
    if arrs[0].shape != arrs[1].shape or arrs[2].shape != arrs[3].shape:
        raise ValueError("prediction and target shapes differ")
    l2 = np.mean(np.sqrt((arrs[0] - arrs[1]) ** 2 + eps * eps))
    l3 = np.mean(np.sqrt((arrs[2] - arrs[3]) ** 2 + eps * eps))
    return float(l2 + l3)


# ------------------------------------------------------------------ decomposers

@dataclass(frozen=True)
class Decomposition:
    spectrum: LogDctTensor
    corrected_spectrum: LogDctTensor
    corrected: np.ndarray


class Decomposer(Protocol):
    def __call__(self, compressed_hazy: np.ndarray) -> Decomposition: ...


class PassthroughDecomposer:
    """No compression model: zero spectrum, input returned unchanged."""

    def __call__(self, compressed_hazy):
        img = np.asarray(compressed_hazy, dtype=np.float64)
        d1 = to_log_dct(img)
        return Decomposition(d1.zeros_like(offset=0.0), d1, img)


class OracleDecomposer:
    """Returns the ground-truth pair computed from the uncompressed reference."""

    def __init__(self, reference: np.ndarray | None = None, qf: int = 80):
        self.reference = None if reference is None else np.asarray(reference, dtype=np.float64)
        self.qf = qf

    def __call__(self, compressed_hazy):
        if self.reference is None:
            raise ValueError("oracle decomposer needs the uncompressed hazy reference")
        if self.reference.shape != np.shape(compressed_hazy):
            raise ValueError("reference and input shapes differ")
        d1 = to_log_dct(compressed_hazy)
        # the spectrum is measured on the actual input, so D1 = D2 + D3 holds exactly
        d2 = spectrum_of_factor(compression_factor(compressed_hazy, self.reference), d1.height, d1.width)
        d3 = to_log_dct(self.reference)
        return Decomposition(d2, d3, from_log_dct(d3, channels_last=np.ndim(compressed_hazy) == 3))


class TensorFileDecomposer:
    """Reads spectra produced elsewhere (e.g. by a trained network) as FDGT files.

    Both files hold ``(C, Hb, Wb, 8, 8)`` tensors; the corrected spectrum
    uses the standard normalization constants.
    """

    def __init__(self, spectrum_path, corrected_path):
        self.spectrum_path = spectrum_path
        self.corrected_path = corrected_path

    def __call__(self, compressed_hazy):
        img = np.asarray(compressed_hazy, dtype=np.float64)
        h, w = img.shape[:2]
        d2 = LogDctTensor(load_tensor(self.spectrum_path).astype(np.float64), h, w, offset=0.0)
        d3 = LogDctTensor(load_tensor(self.corrected_path).astype(np.float64), h, w)
        expected = to_log_dct(img).coeffs.shape
        if d2.coeffs.shape != expected or d3.coeffs.shape != expected:
            raise ValueError(f"external spectra must have shape {expected}")
        return Decomposition(d2, d3, from_log_dct(d3, channels_last=img.ndim == 3))


def decompose(compressed_hazy: np.ndarray, impl: Decomposer) -> Decomposition:
    return impl(compressed_hazy)


def save_spectrum(t: LogDctTensor, path, **extra) -> None:
    """FDGT tensor plus a ``.json`` sidecar with the normalization constants."""
    save_tensor(t.coeffs, path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({**t.constants(), **extra}, fh, indent=2, sort_keys=True)
