"""Atmospheric scattering synthesis and dark-channel transmission estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class HazeParams:
    beta: float = 1.0
    omega: float = 0.95
    window: int = 15
    t_min: float = 0.05

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if not 0 < self.t_min <= 1:
            raise ValueError("t_min must lie in (0, 1]")


def _as_channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3 or img.size == 0:
        raise ValueError(f"expected a non-empty (H, W[, C]) image, got shape {img.shape}")
    return img


def _airlight_vector(a, nch: int) -> np.ndarray:
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (nch,)).copy()
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("airlight must lie in [0, 1]")
    return a


def apply_asm(clear: np.ndarray, t: np.ndarray, a) -> np.ndarray:
    """Hazy image ``clear * t + a * (1 - t)``, clamped to [0, 1].

    ``t`` is an ``(H, W)`` transmission map (or a scalar), ``a`` a scalar or
    per-channel airlight.
    """
    clear = np.asarray(clear, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim and t.shape != clear.shape[:2]:
        raise ValueError(f"transmission map {t.shape} does not match image {clear.shape[:2]}")
    if clear.ndim == 3:
        t = t[..., None] if t.ndim else t
        a = _airlight_vector(a, clear.shape[2])
    else:
        a = float(_airlight_vector(a, 1)[0])
    return np.clip(clear * t + a * (1.0 - t), 0.0, 1.0)


def transmission_from_depth(depth: np.ndarray, beta: float) -> np.ndarray:
    """Beer-Lambert transmission ``exp(-beta * depth)`` kept inside (0, 1]."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    t = np.exp(-beta * np.asarray(depth, dtype=np.float64))
    return np.clip(t, np.finfo(np.float64).tiny, 1.0)


def dark_channel(img: np.ndarray, window: int) -> np.ndarray:
    """Windowed minimum of the per-pixel channel minimum.

    The window is clipped at the borders (edge replication gives the same
    minimum, which is what ``mode="nearest"`` does).
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    img = _as_channels(img)
    return ndimage.minimum_filter(img.min(axis=2), size=window, mode="nearest")


def estimate_airlight(img: np.ndarray, window: int = 15, fraction: float = 0.001) -> np.ndarray:
    """Mean colour of the brightest ``fraction`` of dark-channel pixels.

    Pixels tied with the cut-off value are all included.
    """
    img = _as_channels(img)
    dark = dark_channel(img, window).ravel()
    k = max(1, int(fraction * dark.size))
    cutoff = np.partition(dark, dark.size - k)[dark.size - k]
    picked = img.reshape(-1, img.shape[2])[dark >= cutoff]
    return picked.mean(axis=0)


def estimate_transmission(img: np.ndarray, a, params: HazeParams = HazeParams()) -> np.ndarray:
    img = _as_channels(img)
    a = _airlight_vector(a, img.shape[2])
    if np.any(a <= 0):
        raise ValueError("airlight channels must be positive to normalise by them")
    t = 1.0 - params.omega * dark_channel(img / a, params.window)
    return np.clip(t, params.t_min, 1.0)


def estimate_haze(img: np.ndarray, params: HazeParams = HazeParams()) -> tuple[np.ndarray, np.ndarray]:
    """Airlight and transmission in one call."""
    a = estimate_airlight(img, params.window)
    # guard against a black airlight on very dark inputs
    a = np.maximum(a, 1.0 / 255.0)
    return a, estimate_transmission(img, a, params)
