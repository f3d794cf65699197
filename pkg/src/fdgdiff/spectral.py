"""How haze interacts with JPEG quantization on 8x8 luma blocks.

Under a block-uniform transmission ``t`` every AC coefficient of the hazy
block is ``t`` times the clear one, so a coefficient that survives
quantization when clear can be annihilated once hazy. The functions here
measure that on real block corpora.

Block values are un-level-shifted luminance on the 0..255 scale, so the
thresholds line up with 8-bit quantization tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import jpeg_codec as jc
from .image_core import luma


def _check_t(t: float) -> None:
    if not 0.0 < t <= 1.0:
        raise ValueError(f"transmission must lie in (0, 1], got {t}")


def ac_attenuation(block: np.ndarray, t: float, a_y: float) -> tuple[np.ndarray, float]:
    """DCT of the hazy block and the largest AC deviation from ``t * clear``."""
    _check_t(t)
    block = np.asarray(block, dtype=np.float64)
    clear = jc.dct2d(block)
    hazy = jc.dct2d(block * t + a_y * (1.0 - t))
    diff = np.abs(hazy - t * clear)
    diff[..., 0, 0] = 0.0
    return hazy, float(diff.max())


def extract_blocks(images, drop_partial: bool = True) -> np.ndarray:
    """Non-overlapping 8x8 luma blocks (0..255 scale) from uint8 or float images."""
    out = []
    for img in images:
        img = np.asarray(img)
        plane = luma(img.astype(np.float64) / 255.0 if img.dtype == np.uint8 else img) * 255.0
        if drop_partial:
            h, w = (plane.shape[0] // 8) * 8, (plane.shape[1] // 8) * 8
            plane = plane[:h, :w]
        else:
            plane = jc.pad_to_blocks(plane)
        if plane.size:
            out.append(jc.blockify(plane).reshape(-1, 8, 8))
    if not out:
        return np.zeros((0, 8, 8))
    return np.concatenate(out)


def corpus_digest(corpus: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(corpus, dtype=np.float64).tobytes()).hexdigest()


def hazy_ac(corpus: np.ndarray, t: float, a_y: float = 0.0) -> np.ndarray:
    """Zigzag AC coefficients (``(n, 63)``) of each block after uniform haze."""
    _check_t(t)
    coeffs = jc.dct2d(np.asarray(corpus, dtype=np.float64) * t + a_y * (1.0 - t))
    return jc.to_zigzag(coeffs)[:, 1:]


# Coefficients this close to q/2 (on the hazy scale) count as sitting on the
# boundary, i.e. surviving. Integer-valued blocks produce exact ties in the
# bands with u or v in {0, 4}, and plain float comparison would split those
# ties differently depending on how the coefficient was computed.
BOUNDARY_TOL = 1e-9


def annihilation_mask(corpus: np.ndarray, t: float, qf: int, a_y: float = 0.0) -> np.ndarray:
    """``|f_hazy(nu)| < q(nu)/2`` per block and AC band."""
    q = jc.quant_table_for_qf(qf, "luma")[1:]
    return np.abs(hazy_ac(corpus, t, a_y)) < q / 2.0 - BOUNDARY_TOL


def threshold_mask(corpus: np.ndarray, t: float, qf: int) -> np.ndarray:
    """Same event phrased on the clear block: ``|f(nu)| < q(nu)/(2t)``."""
    _check_t(t)
    q = jc.quant_table_for_qf(qf, "luma")[1:]
    return np.abs(hazy_ac(corpus, 1.0)) < (q / 2.0 - BOUNDARY_TOL) / t


@dataclass(frozen=True)
class BandStats:
    """Per AC band (zigzag index 1..63) sample and annihilation counts."""

    count: np.ndarray
    annihilated: np.ndarray

    @property
    def frequency(self) -> np.ndarray:
        return self.annihilated / np.maximum(self.count, 1)

    @property
    def aggregate(self) -> float:
        return float(self.annihilated.sum() / self.count.sum())


@dataclass(frozen=True)
class AnnihilationReport:
    qf: int
    t: float
    bands: BandStats
    n_blocks: int
    zero_ac_blocks: int
    corpus_digest: str = field(repr=False)

    @property
    def aggregate(self) -> float:
        return self.bands.aggregate

    def to_dict(self) -> dict:
        return {
            "qf": self.qf,
            "t": self.t,
            "n_blocks": self.n_blocks,
            "zero_ac_blocks": self.zero_ac_blocks,
            "aggregate": self.aggregate,
            "bands": [
                {"nu": nu, "count": int(c), "annihilated": int(a), "frequency": float(f)}
                for nu, c, a, f in zip(range(1, 64), self.bands.count, self.bands.annihilated,
                                       self.bands.frequency)
            ],
            "corpus_digest": self.corpus_digest,
        }


def annihilation_stats(corpus: np.ndarray, t: float, qf: int, a_y: float = 0.0) -> AnnihilationReport:
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.ndim != 3 or corpus.shape[1:] != (8, 8) or len(corpus) == 0:
        raise ValueError("corpus must be a non-empty (n, 8, 8) array of blocks")
    mask = annihilation_mask(corpus, t, qf, a_y)
    zero_ac = int(np.count_nonzero(np.all(np.abs(hazy_ac(corpus, 1.0)) < BOUNDARY_TOL, axis=1)))
    bands = BandStats(np.full(63, len(corpus), dtype=np.int64), mask.sum(axis=0).astype(np.int64))
    return AnnihilationReport(qf, float(t), bands, len(corpus), zero_ac, corpus_digest(corpus))


@dataclass(frozen=True)
class InequalityVerdict:
    band_pass: np.ndarray
    aggregate_hazy: float
    aggregate_clear: float
    aggregate_strict: bool | None  # None when strictness is not required
    passed: bool

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "aggregate_hazy": self.aggregate_hazy,
            "aggregate_clear": self.aggregate_clear,
            "aggregate_strict": self.aggregate_strict,
            "failing_bands": [int(nu) for nu in np.flatnonzero(~self.band_pass) + 1],
        }


def verify_inequality(r_hazy: AnnihilationReport, r_clear: AnnihilationReport) -> InequalityVerdict:
    """Check that haze never lowers, and on aggregate raises, annihilation.

    Bands the clear corpus already annihilates completely pass vacuously.
    Strict aggregate increase is demanded only when ``t < 1`` and the clear
    aggregate is strictly between 0 and 1.
    """
    if r_hazy.corpus_digest != r_clear.corpus_digest or r_hazy.qf != r_clear.qf:
        raise ValueError("reports were computed on different corpora or quality factors")
    fh, fc = r_hazy.bands.frequency, r_clear.bands.frequency
    band_pass = (fc >= 1.0) | (fh >= fc)
    agg_h, agg_c = r_hazy.aggregate, r_clear.aggregate
    strict = None
    if r_hazy.t < r_clear.t and 0.0 < agg_c < 1.0:
        strict = agg_h > agg_c
    passed = bool(band_pass.all()) and strict is not False
    return InequalityVerdict(band_pass, agg_h, agg_c, strict, passed)
