"""High-frequency compensation: Haar wavelets plus spectrum cross-attention.

Feature maps are ``(C, H, W)`` arrays. Attention flattens them to
``(H*W, C)`` token matrices: queries come from the features, keys from
their wavelet high-frequency bands and values from the compression
spectrum.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .decomposition import LogDctTensor
from .image_core import load_tensor, save_tensor


class WaveletSubbands(NamedTuple):
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    shape: tuple[int, int]  # spatial size before padding


def haar_dwt2(plane: np.ndarray) -> WaveletSubbands:
    """Single-level orthonormal 2-D Haar transform over the last two axes.

    For each 2x2 block ``[[a, b], [c, d]]``::

        LL = (a + b + c + d) / 2     LH = (a + b - c - d) / 2
        HL = (a - b + c - d) / 2     HH = (a - b - c + d) / 2

    Odd sizes are edge-replicated by one sample first.
    """
    x = np.asarray(plane, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError("haar_dwt2 needs a non-empty plane")
    h, w = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(0, h % 2), (0, w % 2)]
    if h % 2 or w % 2:
        x = np.pad(x, pad, mode="edge")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return WaveletSubbands(
        (a + b + c + d) / 2, (a + b - c - d) / 2, (a - b + c - d) / 2, (a - b - c + d) / 2, (h, w)
    )


def haar_idwt2(sb: WaveletSubbands) -> np.ndarray:
    ll, lh, hl, hh = (np.asarray(s, dtype=np.float64) for s in sb[:4])
    hh_, ww_ = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * hh_, 2 * ww_))
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    h, w = sb.shape
    return out[..., :h, :w]


def extract_high_freq(x: np.ndarray) -> np.ndarray:
    """``(C, H, W)`` -> ``(3C, ceil(H/2), ceil(W/2))`` stacked as [LH, HL, HH]."""
    sb = haar_dwt2(x)
    return np.concatenate([sb.lh, sb.hl, sb.hh], axis=0)


def resize_nearest(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of the last two axes."""
    h, w = x.shape[-2:]
    rows = np.minimum((np.arange(shape[0]) * h) // shape[0], h - 1)
    cols = np.minimum((np.arange(shape[1]) * w) // shape[1], w - 1)
    return x[..., rows[:, None], cols[None, :]]


@dataclass(frozen=True)
class AttentionWeights:
    """Per-head projections, each ``(heads, C, C // heads)``.

    ``proj_high`` (``3C x C``) folds wavelet bands onto the feature channels and
    ``proj_spectrum`` (``S x C``) lifts S spectrum channels; both default to
    fixed maps (band sum, channel repetition).
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    proj_high: np.ndarray | None = None
    proj_spectrum: np.ndarray | None = None

    def __post_init__(self):
        shapes = {np.shape(self.wq), np.shape(self.wk), np.shape(self.wv)}
        if len(shapes) != 1 or len(np.shape(self.wq)) != 3:
            raise ValueError(f"W_q, W_k, W_v must share one (h, C, C/h) shape, got {shapes}")
        h, c, d = np.shape(self.wq)
        if c != h * d:
            raise ValueError(f"head count {h} does not divide embedding dim {c}")
        for w in (self.wq, self.wk, self.wv):
            if not np.all(np.isfinite(w)):
                raise ValueError("attention weights must be finite")

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def dim(self) -> int:
        return self.wq.shape[1]

    @classmethod
    def random(cls, dim: int, heads: int, seed: int = 0, scale: float | None = None) -> "AttentionWeights":
        if dim % heads:
            raise ValueError(f"head count {heads} does not divide embedding dim {dim}")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(dim) if scale is None else scale
        shape = (heads, dim, dim // heads)
        return cls(*(rng.standard_normal(shape) * scale for _ in range(3)))

    def high_projection(self) -> np.ndarray:
        if self.proj_high is not None:
            return np.asarray(self.proj_high, dtype=np.float64)
        return np.tile(np.eye(self.dim), (3, 1))

    def spectrum_projection(self, n_spectrum: int) -> np.ndarray:
        if self.proj_spectrum is not None:
            return np.asarray(self.proj_spectrum, dtype=np.float64)
        p = np.zeros((n_spectrum, self.dim))
        p[np.arange(self.dim) % n_spectrum, np.arange(self.dim)] = 1.0
        return p


_WEIGHT_FILES = ("wq", "wk", "wv", "proj_high", "proj_spectrum")


def save_weights(w: AttentionWeights, directory) -> None:
    """One FDGT file per matrix plus ``manifest.json`` (C, h, shapes)."""
    os.makedirs(directory, exist_ok=True)
    shapes = {}
    for name in _WEIGHT_FILES:
        arr = getattr(w, name)
        if arr is None:
            continue
        save_tensor(np.asarray(arr), os.path.join(directory, f"{name}.fdgt"))
        shapes[name] = list(np.shape(arr))
    manifest = {"dim": w.dim, "heads": w.heads, "shapes": shapes}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_weights(directory) -> AttentionWeights:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    arrays = {}
    for name, shape in manifest["shapes"].items():
        if name not in _WEIGHT_FILES:
            raise ValueError(f"unknown weight tensor {name!r} in manifest")
        arr = load_tensor(os.path.join(directory, f"{name}.fdgt")).astype(np.float64)
        if list(arr.shape) != shape:
            raise ValueError(f"{name}: manifest says {shape}, file holds {list(arr.shape)}")
        arrays[name] = arr
    w = AttentionWeights(**arrays)
    if (w.dim, w.heads) != (manifest["dim"], manifest["heads"]):
        raise ValueError("manifest dim/heads disagree with the stored matrices")
    return w


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_maps(x: np.ndarray, x_h: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Row-stochastic ``(heads, T_q, T_k)`` attention from token matrices."""
    q = np.einsum("tc,hcd->htd", x, w.wq)
    k = np.einsum("tc,hcd->htd", x_h, w.wk)
    d = w.dim // w.heads
    return softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d))


def cross_attention(x: np.ndarray, x_h: np.ndarray, x_d: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Multi-head cross-attention on ``(tokens, C)`` matrices; heads concatenated."""
    x, x_h, x_d = (np.asarray(m, dtype=np.float64) for m in (x, x_h, x_d))
    if x.ndim != 2 or x_h.ndim != 2 or x_d.ndim != 2:
        raise ValueError("cross_attention expects (tokens, channels) matrices")
    if x.shape[1] != w.dim or x_h.shape[1] != w.dim or x_d.shape[1] != w.dim:
        raise ValueError(f"all inputs need {w.dim} channels")
    if x_h.shape[0] != x_d.shape[0]:
        raise ValueError("keys and values need the same token count")
    a = attention_maps(x, x_h, w)
    v = np.einsum("tc,hcd->htd", x_d, w.wv)
    out = a @ v  # (heads, T, d)
    return out.transpose(1, 0, 2).reshape(x.shape[0], w.dim)


def spectrum_energy(spectrum: LogDctTensor) -> np.ndarray:
    """Mean |AC| per 8x8 block: ``(C, Hb, Wb)``."""
    mag = np.abs(spectrum.coeffs).sum(axis=(-1, -2)) - np.abs(spectrum.coeffs[..., 0, 0])
    return mag / 63.0


def _tokens(fmap: np.ndarray) -> np.ndarray:
    return fmap.reshape(fmap.shape[0], -1).T


def hfcm_forward(x: np.ndarray, spectrum: LogDctTensor, w: AttentionWeights,
                 residual: bool = True) -> np.ndarray:
    """Compensate feature map ``x`` (``(C, H, W)``) using the compression spectrum."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != w.dim:
        raise ValueError(f"feature map must be ({w.dim}, H, W), got {x.shape}")
    c, h, wd = x.shape
    x_high = resize_nearest(extract_high_freq(x), (h, wd))
    x_high = np.einsum("khw,kc->chw", x_high, w.high_projection())
    energy = resize_nearest(spectrum_energy(spectrum), (h, wd))
    x_spec = np.einsum("shw,sc->chw", energy, w.spectrum_projection(energy.shape[0]))
    ca = cross_attention(_tokens(x), _tokens(x_high), _tokens(x_spec), w)
    ca = ca.T.reshape(c, h, wd)
    return x + ca if residual else ca
