"""Patch-based DDPM sampling with per-patch timestep offsets.

Timesteps are 1-based: ``t = 1..T``, with ``alpha_t`` and the cumulative
``gamma_t = alpha_1 * ... * alpha_t`` stored at index ``t - 1``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable, Protocol

import numpy as np

from .decomposition import Decomposer, LogDctTensor
from .haze import HazeParams, estimate_haze


class ScheduleError(ValueError):
    """Degenerate or malformed noise schedule."""


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray
    gamma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha)

    @classmethod
    def from_alphas(cls, alpha) -> "NoiseSchedule":
        alpha = np.asarray(alpha, dtype=np.float64)
        gamma = np.empty_like(alpha)
        g = 1.0
        for i, a in enumerate(alpha):
            g = g * a
            gamma[i] = g
        return cls(alpha, gamma)

    def check(self) -> None:
        if np.any(self.alpha <= 0) or np.any(self.alpha >= 1):
            raise ScheduleError("alpha_t must lie in (0, 1)")
        if np.any(np.diff(self.gamma) >= 0):
            raise ScheduleError("gamma must be strictly decreasing")

    def index(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside 1..{self.T}")
        return t - 1


def make_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear-beta schedule."""
    if T < 1:
        raise ScheduleError("T must be at least 1")
    if not 0 < beta_min <= beta_max < 1:
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    s = NoiseSchedule.from_alphas(1.0 - np.linspace(beta_min, beta_max, T))
    s.check()
    return s


def forward_sample(j0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    j0 = np.asarray(j0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if j0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {j0.shape} vs {eps.shape}")
    g = s.gamma[s.index(t)]
    return np.sqrt(g) * j0 + np.sqrt(1.0 - g) * eps


def step_coefficients(s: NoiseSchedule, t_hat: int) -> tuple[float, float, float]:
    """``(1/sqrt(alpha), (1-alpha)/sqrt(1-gamma), sqrt(1-alpha))`` at ``t_hat``.

    The noise coefficient is zero at ``t_hat == 1``.
    """
    i = s.index(t_hat)
    a, g = s.alpha[i], s.gamma[i]
    if g >= 1.0:
        raise ScheduleError(f"gamma_{t_hat} == 1 makes the reverse step undefined")
    return 1.0 / math.sqrt(a), (1.0 - a) / math.sqrt(1.0 - g), (math.sqrt(1.0 - a) if t_hat > 1 else 0.0)


def apply_step(j, eps_hat, c_scale, c_eps, c_noise, noise) -> np.ndarray:
    out = c_scale * (j - c_eps * eps_hat)
    if noise is not None:
        out = out + c_noise * noise
    return out


def reverse_step(j, eps_hat, t_hat: int, s: NoiseSchedule, noise=None) -> np.ndarray:
    """One ancestral step ``J_t -> J_{t-1}``; ``noise=None`` means zero noise."""
    j = np.asarray(j, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if j.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {j.shape} vs {eps_hat.shape}")
    return apply_step(j, eps_hat, *step_coefficients(s, t_hat), noise)


# ------------------------------------------------------------------ denoisers

class Denoiser(Protocol):
    def __call__(self, cond: np.ndarray, j: np.ndarray, gamma: float, side=None) -> np.ndarray: ...


class AnalyticGaussianDenoiser:
    """Exact posterior-mean noise prediction for i.i.d. ``N(mu, sigma^2)`` data.

    Ignores the condition image and any side information.
    """

    def __init__(self, mu: float, sigma: float):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def posterior_mean(self, j, gamma: float) -> np.ndarray:
        rg = math.sqrt(gamma)
        var = self.sigma ** 2
        gain = rg * var / (gamma * var + 1.0 - gamma)
        return self.mu + gain * (np.asarray(j, dtype=np.float64) - rg * self.mu)

    def __call__(self, cond, j, gamma, side=None):
        if gamma >= 1.0:
            raise ScheduleError("analytic denoiser is undefined at gamma == 1")
        j = np.asarray(j, dtype=np.float64)
        return (j - math.sqrt(gamma) * self.posterior_mean(j, gamma)) / math.sqrt(1.0 - gamma)


def analytic_gaussian_denoiser(mu: float, sigma: float) -> AnalyticGaussianDenoiser:
    return AnalyticGaussianDenoiser(mu, sigma)


def training_loss(d: Denoiser, cond, j0, t: int, eps, s: NoiseSchedule) -> float:
    """Mean absolute error of the predicted noise."""
    jt = forward_sample(j0, t, eps, s)
    pred = np.asarray(d(cond, jt, float(s.gamma[s.index(t)])))
    if pred.shape != np.shape(eps):
        raise ValueError("denoiser output shape differs from the noise field")
    return float(np.mean(np.abs(pred - eps)))


# ------------------------------------------------------------------ patches

@dataclass(frozen=True)
class PatchGrid:
    p: int
    r: int
    height: int
    width: int
    rows: tuple[int, ...]
    cols: tuple[int, ...]

    @property
    def positions(self) -> list[tuple[int, int]]:
        return [(y, x) for y in self.rows for x in self.cols]

    def __len__(self) -> int:
        return len(self.rows) * len(self.cols)

    def counts(self) -> np.ndarray:
        n = np.zeros((self.height, self.width), dtype=np.int64)
        for y, x in self.positions:
            n[y:y + self.p, x:x + self.p] += 1
        return n

    def window(self, pos: tuple[int, int]) -> tuple[slice, slice]:
        y, x = pos
        return slice(y, y + self.p), slice(x, x + self.p)


def _anchors(dim: int, p: int, r: int) -> tuple[int, ...]:
    a = list(range(0, dim - p + 1, r))
    if a[-1] != dim - p:
        a.append(dim - p)
    return tuple(a)


def extract_patches(shape, p: int = 64, r: int = 16) -> PatchGrid:
    """Sliding-window grid; the last anchor on each axis is flush with the border.

    ``shape`` may be an image or its shape.
    """
    if not isinstance(shape, tuple):
        shape = np.shape(shape)
    h, w = shape[:2]
    if not p > r >= 1:
        raise ValueError(f"need p > r >= 1, got p={p}, r={r}")
    if h < p or w < p:
        raise ValueError(f"image {h}x{w} is smaller than the {p}x{p} patch")
    return PatchGrid(p, r, h, w, _anchors(h, p, r), _anchors(w, p, r))


def fuse_noise_estimates(patch_eps, g: PatchGrid) -> np.ndarray:
    """Average overlapping per-patch fields pixel by pixel, in patch order."""
    patch_eps = list(patch_eps)
    if len(patch_eps) != len(g):
        raise ValueError(f"expected {len(g)} patch estimates, got {len(patch_eps)}")
    first = np.asarray(patch_eps[0])
    acc = np.zeros((g.height, g.width) + first.shape[2:])
    for pos, e in zip(g.positions, patch_eps):
        e = np.asarray(e, dtype=np.float64)
        if e.shape[:2] != (g.p, g.p):
            raise ValueError(f"patch estimate has shape {e.shape}, expected {g.p}x{g.p}")
        acc[g.window(pos)] += e
    n = g.counts()
    return acc / (n if acc.ndim == 2 else n[..., None])


# ------------------------------------------------------------------ timestep predictors

class TimestepPredictor(Protocol):
    def __call__(self, mean_transmission: float, t: int, T: int) -> int: ...


class ZeroOffsetPredictor:
    def __call__(self, mean_transmission, t, T):
        return t


class HeuristicPredictor:
    """Offset ``round(kappa * (1 - mean_t))`` clipped to ``[0, max_offset]``."""

    def __init__(self, kappa: float = 20.0, max_offset: int = 50):
        self.kappa = kappa
        self.max_offset = max_offset

    def offset(self, mean_transmission: float) -> int:
        delta = math.floor(self.kappa * (1.0 - mean_transmission) + 0.5)
        return int(min(max(delta, 0), self.max_offset))

    def __call__(self, mean_transmission, t, T):
        return min(t + self.offset(mean_transmission), T)


def dadtp_heuristic(mean_transmission: float, t: int, T: int, kappa: float = 20.0, max_offset: int = 50) -> int:
    return HeuristicPredictor(kappa, max_offset)(mean_transmission, t, T)


# ------------------------------------------------------------------ sampler

@dataclass
class SamplerConfig:
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    patch: int = 64
    stride: int = 16
    seed: int = 0
    predictor: str = "zero"
    denoiser: str = "analytic"
    decomposer: str = "passthrough"
    last_step_noise: bool = False
    kappa: float = 20.0
    max_offset: int = 50
    transmission_source: str = "corrected"
    analytic_mu: float = 0.5
    analytic_sigma: float = 0.2
    snapshot_every: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.patch > self.stride >= 1:
            raise ValueError(f"need patch > stride >= 1, got {self.patch}, {self.stride}")
        if self.transmission_source not in ("corrected", "input"):
            raise ValueError("transmission_source must be 'corrected' or 'input'")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_min, self.beta_max)


def step_noise(seed: int, step: int, shape) -> np.ndarray:
    """Standard normal field for ``step``, derived only from (seed, step)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step])))
    return rng.standard_normal(shape)


def initial_state(seed: int, T: int, shape) -> np.ndarray:
    return step_noise(seed, T + 1, shape)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FDG_THREADS", "1")))
    except ValueError:
        return 1


def sample_unpatched(cond, denoiser: Denoiser, s: NoiseSchedule, seed: int,
                     last_step_noise: bool = False) -> np.ndarray:
    """Plain whole-image ancestral sampler (no patches, no offsets, no clamp)."""
    cond = np.asarray(cond, dtype=np.float64)
    j = initial_state(seed, s.T, cond.shape)
    for t in range(s.T, 0, -1):
        eps = denoiser(cond, j, float(s.gamma[s.index(t)]))
        c1, c2, c3 = step_coefficients(s, t)
        if t == 1 and last_step_noise:
            c3 = math.sqrt(1.0 - s.alpha[0])
        noise = step_noise(seed, t, j.shape) if c3 else None
        j = apply_step(j, eps, c1, c2, c3, noise)
    return j


@dataclass
class RestoreResult:
    image: np.ndarray
    raw: np.ndarray
    transmission: np.ndarray
    corrected: np.ndarray
    spectrum: LogDctTensor
    timesteps: list[list[int]]  # per global step, per patch t-hat


def _expand(field: np.ndarray, like: np.ndarray) -> np.ndarray:
    return field if like.ndim == 2 else field[..., None]


def restore(
    compressed_hazy,
    decomposer: Decomposer,
    denoiser: Denoiser,
    predictor: TimestepPredictor,
    cfg: SamplerConfig,
    haze: HazeParams = HazeParams(),
    threads: int | None = None,
    snapshot: Callable[[int, np.ndarray], None] | None = None,
    clamp: bool = True,
) -> RestoreResult:
    """Full restoration loop.

    Per global step ``t`` each patch gets its own ``t_hat`` from ``predictor``;
    the denoiser runs per patch at ``gamma_{t_hat}``, and both the noise
    estimates and the per-patch step coefficients are averaged over patch
    overlaps before the update. Results depend only on inputs, config and
    seed; ``threads`` only changes how patch evaluations are scheduled.
    """
    img = np.asarray(compressed_hazy, dtype=np.float64)
    s = cfg.schedule()
    dec = decomposer(img)
    cond = np.asarray(dec.corrected, dtype=np.float64)
    source = cond if cfg.transmission_source == "corrected" else img
    _, tmap = estimate_haze(source, haze)

    grid = extract_patches(img.shape, cfg.patch, cfg.stride)
    positions = grid.positions
    mean_t = [float(tmap[grid.window(pos)].mean()) for pos in positions]
    counts = grid.counts()
    threads = threads or worker_count()

    j = initial_state(cfg.seed, s.T, img.shape)
    history = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(s.T, 0, -1):
            t_hats = [int(predictor(m, t, s.T)) for m in mean_t]
            if any(not 1 <= th <= s.T for th in t_hats):
                raise ScheduleError(f"predictor returned a timestep outside 1..{s.T}")
            history.append(t_hats)

            def run(i, j=j, t_hats=t_hats):
                win = grid.window(positions[i])
                side = {"spectrum": dec.spectrum, "window": win}
                return denoiser(cond[win], j[win], float(s.gamma[s.index(t_hats[i])]), side)

            idx = range(len(positions))
            estimates = list(pool.map(run, idx)) if pool else [run(i) for i in idx]
            eps = fuse_noise_estimates(estimates, grid)

            coef = np.zeros((3, grid.height, grid.width))
            for pos, th in zip(positions, t_hats):
                c1, c2, c3 = step_coefficients(s, th)
                if t == 1:
                    c3 = math.sqrt(1.0 - s.alpha[s.index(th)]) if cfg.last_step_noise else 0.0
                win = grid.window(pos)
                coef[0][win] += c1
                coef[1][win] += c2
                coef[2][win] += c3
            coef /= counts
            c1, c2, c3 = (_expand(c, j) for c in coef)
            noise = step_noise(cfg.seed, t, j.shape) if np.any(coef[2]) else None
            j = apply_step(j, eps, c1, c2, c3, noise)
            if snapshot is not None and cfg.snapshot_every and (t - 1) % cfg.snapshot_every == 0:
                snapshot(t - 1, j)
    finally:
        if pool:
            pool.shutdown()
    out = np.clip(j, 0.0, 1.0) if clamp else j
    return RestoreResult(out, j, tmap, cond, dec.spectrum, history)
