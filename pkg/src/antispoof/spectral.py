"""STFT filterbank front-ends: LFBE/MFBE/IMFBE energies and LFCC/MFCC/IMFCC cepstra."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.fft

from .audio import FrameMatrix, Waveform, frame_and_window, pre_emphasis
from .errors import BadBand, BadFftSize, DimensionMismatch, TooManyCeps
from .features import FeatureMatrix, config_digest

FILTERBANK_KINDS = ("linear", "mel", "inverse-mel")

ENERGY_KIND = {"linear": "LFBE", "mel": "MFBE", "inverse-mel": "IMFBE"}
CEPSTRUM_OF = {"LFBE": "LFCC", "MFBE": "MFCC", "IMFBE": "IMFCC"}
FILTERBANK_OF = {
    "LFCC": "linear", "MFCC": "mel", "IMFCC": "inverse-mel",
    "LFBE": "linear", "MFBE": "mel", "IMFBE": "inverse-mel",
}
SPECTRAL_KINDS = tuple(FILTERBANK_OF)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FilterbankSpec:
    kind: str
    num_filters: int
    nfft: int
    sample_rate_hz: int
    f_min_hz: float
    f_max_hz: float
    centers_hz: np.ndarray
    weights: np.ndarray  # (M, nfft//2 + 1)

    @property
    def feature_kind(self) -> str:
        return ENERGY_KIND[self.kind]


def _check_nfft(nfft: int, frame_len: int = 0) -> None:
    if nfft < 2 or nfft & (nfft - 1) or nfft < frame_len:
        raise BadFftSize(f"nfft={nfft} must be a power of two >= frame length {frame_len}")


def power_spectrum(frames: FrameMatrix, nfft: int = 512) -> np.ndarray:
    """|DFT|^2 of each frame zero-padded to ``nfft``; shape (T, nfft//2 + 1)."""
    _check_nfft(nfft, frames.frame_len_samples)
    spec = np.fft.rfft(frames.frames, n=nfft, axis=1)
    return spec.real**2 + spec.imag**2


def filter_edges(kind: str, num_filters: int, f_min: float, f_max: float) -> np.ndarray:
    """The ``M + 2`` band edges (left, centers..., right) in Hz."""
    if kind == "linear":
        return np.linspace(f_min, f_max, num_filters + 2)
    if kind == "mel":
        return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_filters + 2))
    if kind == "inverse-mel":
        # mirror of the mel layout about the band midpoint: dense at high frequency
        return (f_min + f_max) - filter_edges("mel", num_filters, f_min, f_max)[::-1]
    raise ValueError(f"unknown filterbank kind {kind!r}")


def build_filterbank(
    kind: str, num_filters: int, nfft: int, sample_rate_hz: int,
    f_min: float = 0.0, f_max: float | None = None,
) -> FilterbankSpec:
    """Triangular filterbank, each row scaled to a peak of exactly 1."""
    if f_max is None:
        f_max = sample_rate_hz / 2.0
    if num_filters < 2:
        raise ValueError("need at least two filters")
    if not 0.0 <= f_min < f_max <= sample_rate_hz / 2.0:
        raise BadBand(f"band [{f_min}, {f_max}] Hz invalid for fs={sample_rate_hz}")
    _check_nfft(nfft)
    edges = filter_edges(kind, num_filters, f_min, f_max)
    freqs = np.arange(nfft // 2 + 1) * (sample_rate_hz / nfft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - left) / (center - left)
    down = (right - freqs) / (right - center)
    weights = np.maximum(0.0, np.minimum(up, down))
    for m in np.flatnonzero(weights.max(axis=1) == 0.0):
        # band narrower than a bin: keep the nearest bin so the row is not empty
        weights[m, np.argmin(np.abs(freqs - center[m, 0]))] = 1.0
    weights /= weights.max(axis=1, keepdims=True)
    weights.setflags(write=False)
    centers = edges[1:-1].copy()
    centers.setflags(write=False)
    return FilterbankSpec(kind, num_filters, nfft, sample_rate_hz, float(f_min),
                          float(f_max), centers, weights)


def filterbank_log_energies(powspec: np.ndarray, fb: FilterbankSpec,
                            floor: float = 1e-10) -> FeatureMatrix:
    powspec = np.atleast_2d(powspec)
    if powspec.shape[1] != fb.weights.shape[1]:
        raise DimensionMismatch(
            f"spectrum has {powspec.shape[1]} bins, filterbank expects {fb.weights.shape[1]}"
        )
    energies = powspec @ fb.weights.T
    return FeatureMatrix(np.log(np.maximum(energies, floor)), fb.feature_kind)


def dct_cepstra(log_energies: FeatureMatrix, num_ceps: int) -> FeatureMatrix:
    """Orthonormal DCT-II over the filter axis, keeping coefficients ``0..C-1``."""
    m = log_energies.dim
    if num_ceps > m:
        raise TooManyCeps(f"{num_ceps} cepstra requested from {m} filters")
    ceps = scipy.fft.dct(log_energies.values, type=2, norm="ortho", axis=1)[:, :num_ceps]
    kind = CEPSTRUM_OF.get(log_energies.kind, log_energies.kind)
    return FeatureMatrix(ceps, kind, log_energies.config_digest)


def deltas(x: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas with edge-frame replication."""
    if window < 1:
        raise ValueError("delta window must be >= 1")
    t = x.shape[0]
    padded = np.pad(x, ((window, window), (0, 0)), mode="edge")
    num = np.zeros_like(x)
    for tau in range(1, window + 1):
        num += tau * (padded[window + tau : window + tau + t] - padded[window - tau : window - tau + t])
    return num / (2.0 * sum(tau * tau for tau in range(1, window + 1)))


def append_deltas(f: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    d1 = deltas(f.values, window)
    d2 = deltas(d1, window)
    return FeatureMatrix(np.hstack([f.values, d1, d2]), f.kind, f.config_digest)


def cmvn(f: FeatureMatrix) -> FeatureMatrix:
    """Per-utterance mean and variance normalisation."""
    std = f.values.std(axis=0)
    std[std < 1e-10] = 1.0
    return FeatureMatrix((f.values - f.values.mean(axis=0)) / std, f.kind, f.config_digest)


@dataclass(frozen=True)
class SpectralConfig:
    kind: str = "MFCC"
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    window: str = "hamming"
    preemph: float = 0.97
    nfft: int = 512
    num_filters: int | None = None  # 20 for cepstra, 40 for energies
    num_ceps: int = 20
    f_min: float = 0.0
    f_max: float | None = None  # Nyquist
    floor: float = 1e-10
    deltas: bool = True
    delta_window: int = 2
    drop_c0: bool = False
    cmvn: bool = False

    def __post_init__(self):
        if self.kind not in SPECTRAL_KINDS:
            raise ValueError(f"{self.kind!r} is not a spectral feature kind")
        if self.num_filters is None:
            object.__setattr__(self, "num_filters", 20 if self.is_cepstral else 40)

    @property
    def is_cepstral(self) -> bool:
        return self.kind.endswith("CC")

    @property
    def filterbank_kind(self) -> str:
        return FILTERBANK_OF[self.kind]

    def digest(self) -> str:
        return config_digest(asdict(self))

    def pipeline_digest(self) -> str:
        """Hash of everything except the filterbank family."""
        d = asdict(self)
        d["kind"] = "CC" if self.is_cepstral else "FBE"
        return config_digest(d)


def extract_spectral_feature(w: Waveform, cfg: SpectralConfig, fb: FilterbankSpec | None = None) -> FeatureMatrix:
    """Full pipeline for one utterance.

    pre-emphasis -> framing -> power spectrum -> log filterbank energies
    [-> DCT cepstra] [-> deltas] [-> CMVN]. A prebuilt ``fb`` may be passed
    to avoid rebuilding the filterbank per utterance.
    """
    frames = frame_and_window(pre_emphasis(w, cfg.preemph), cfg.frame_ms, cfg.hop_ms, cfg.window)
    spec = power_spectrum(frames, cfg.nfft)
    if fb is None:
        fb = build_filterbank(cfg.filterbank_kind, cfg.num_filters, cfg.nfft,
                              w.sample_rate_hz, cfg.f_min, cfg.f_max)
    feat = filterbank_log_energies(spec, fb, cfg.floor)
    if cfg.is_cepstral:
        feat = dct_cepstra(feat, cfg.num_ceps)
        if cfg.drop_c0:
            feat = FeatureMatrix(feat.values[:, 1:], feat.kind)
    if cfg.deltas:
        feat = append_deltas(feat, cfg.delta_window)
    if cfg.cmvn:
        feat = cmvn(feat)
    return replace(feat, config_digest=cfg.digest())
