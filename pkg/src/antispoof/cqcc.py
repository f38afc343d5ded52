"""Constant-Q transform and CQCC extraction.

The transform is evaluated directly: for every bin ``k`` and hop point the
signal is correlated with a Hamming-windowed complex exponential at
``f_k`` whose length shrinks geometrically with frequency, so the ratio of
bandwidth to centre frequency stays fixed.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.fft

from . import kernels
from .audio import Waveform, ms_to_samples
from .errors import BandOutOfRange, SignalTooShort
from .features import FeatureMatrix, config_digest
from .spectral import append_deltas, cmvn


@dataclass(frozen=True)
class CqtSpec:
    f_min_hz: float
    f_max_hz: float
    bins_per_octave: int
    sample_rate_hz: int
    q_factor: float
    center_freqs: np.ndarray  # (K,)
    window_lengths: np.ndarray  # (K,) int

    @property
    def num_bins(self) -> int:
        return self.center_freqs.shape[0]

    @functools.cached_property
    def _kernels(self):
        lengths = self.window_lengths
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        re = np.empty(offsets[-1])
        im = np.empty(offsets[-1])
        for k, (f, n) in enumerate(zip(self.center_freqs, lengths)):
            phase = 2.0 * np.pi * f * np.arange(n) / self.sample_rate_hz
            win = np.hamming(n)
            re[offsets[k] : offsets[k + 1]] = win * np.cos(phase)
            im[offsets[k] : offsets[k + 1]] = -win * np.sin(phase)
        return re, im, offsets, (lengths // 2).astype(np.int64)


def quality_factor(bins_per_octave: int) -> float:
    return 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)


@functools.lru_cache(maxsize=16)
def build_cqt_spec(sample_rate_hz: int, f_min: float = 125.0, f_max: float | None = None,
                   bins_per_octave: int = 96) -> CqtSpec:
    nyquist = sample_rate_hz / 2.0
    if f_max is None:
        f_max = nyquist
    if not (0.0 < f_min <= f_max <= nyquist):
        raise BandOutOfRange(
            f"need 0 < f_min <= f_max <= {nyquist} Hz, got [{f_min}, {f_max}]"
        )
    if bins_per_octave < 1:
        raise ValueError("bins_per_octave must be positive")
    b = bins_per_octave
    num_bins = int(math.floor(b * math.log2(f_max / f_min) + 1e-9)) + 1
    while num_bins > 1 and f_min * 2.0 ** ((num_bins - 1) / b) > f_max * (1 + 1e-12):
        num_bins -= 1
    q = quality_factor(b)
    freqs = f_min * 2.0 ** (np.arange(num_bins) / b)
    lengths = np.ceil(q * sample_rate_hz / freqs).astype(np.int64)
    for a in (freqs, lengths):
        a.setflags(write=False)
    return CqtSpec(float(f_min), float(f_max), b, sample_rate_hz, q, freqs, lengths)


def cqt(w: Waveform, spec: CqtSpec, hop_ms: float = 10.0) -> np.ndarray:
    """Magnitude CQT, shape (T, K).

    All bins share hop points ``c_t = N_0//2 + t*H`` and each bin's window
    is centred on ``c_t``. Only positions where the longest window lies
    wholly inside the signal are used, so ``T = (len - N_0)//H + 1``.
    """
    if w.sample_rate_hz != spec.sample_rate_hz:
        raise ValueError(
            f"waveform at {w.sample_rate_hz} Hz, CQT built for {spec.sample_rate_hz} Hz"
        )
    longest = int(spec.window_lengths[0])
    if len(w) < longest:
        raise SignalTooShort(f"{len(w)} samples is shorter than the longest CQT window ({longest})")
    hop = ms_to_samples(hop_ms, w.sample_rate_hz)
    if hop < 1:
        raise ValueError("hop must be at least one sample")
    centers = longest // 2 + hop * np.arange((len(w) - longest) // hop + 1, dtype=np.int64)
    re, im, offsets, half = spec._kernels
    return kernels.cqt_direct(np.ascontiguousarray(w.samples), centers, re, im, offsets, half)


def resample_geometric_to_linear(values: np.ndarray, freqs: np.ndarray, num_points: int) -> np.ndarray:
    """Piecewise-linear resampling from the geometric grid onto a uniform one.

    ``values`` may be one row (K,) or a matrix (T, K); the uniform grid has
    ``num_points`` frequencies spanning ``[freqs[0], freqs[-1]]``.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    if freqs.shape[0] < 2 or num_points < 2:
        raise ValueError("need at least two input and two output points")
    grid = np.linspace(freqs[0], freqs[-1], num_points)
    idx = np.clip(np.searchsorted(freqs, grid, side="right") - 1, 0, freqs.shape[0] - 2)
    frac = (grid - freqs[idx]) / (freqs[idx + 1] - freqs[idx])
    values = np.asarray(values, dtype=np.float64)
    return (1.0 - frac) * values[..., idx] + frac * values[..., idx + 1]


@dataclass(frozen=True)
class CqccConfig:
    kind: str = "CQCC"
    f_min: float = 125.0
    f_max: float | None = None
    bins_per_octave: int = 96
    hop_ms: float = 10.0
    num_uniform: int = 1024
    num_ceps: int = 20
    floor: float = 1e-10
    deltas: bool = True
    delta_window: int = 2
    drop_c0: bool = False
    cmvn: bool = False

    def __post_init__(self):
        if self.kind != "CQCC":
            raise ValueError(f"CqccConfig kind must be CQCC, got {self.kind!r}")

    def digest(self) -> str:
        return config_digest(asdict(self))


def extract_cqcc(w: Waveform, cfg: CqccConfig = CqccConfig()) -> FeatureMatrix:
    """cqt -> floored log power -> uniform resampling -> DCT -> deltas."""
    spec = build_cqt_spec(w.sample_rate_hz, cfg.f_min, cfg.f_max, cfg.bins_per_octave)
    mag = cqt(w, spec, cfg.hop_ms)
    log_power = np.log(np.maximum(mag * mag, cfg.floor))
    uniform = resample_geometric_to_linear(log_power, spec.center_freqs, cfg.num_uniform)
    ceps = scipy.fft.dct(uniform, type=2, norm="ortho", axis=1)[:, : cfg.num_ceps]
    if cfg.drop_c0:
        ceps = ceps[:, 1:]
    feat = FeatureMatrix(ceps, "CQCC")
    if cfg.deltas:
        feat = append_deltas(feat, cfg.delta_window)
    if cfg.cmvn:
        feat = cmvn(feat)
    return replace(feat, config_digest=cfg.digest())
