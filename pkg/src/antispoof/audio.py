"""Waveform I/O, pre-emphasis and framing shared by every front-end."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    MalformedHeader,
    NotFound,
    SignalTooShort,
    UnsupportedChannelLayout,
    UnsupportedEncoding,
)

PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class FrameMatrix:
    frames: np.ndarray  # (T, N)
    frame_len_samples: int
    hop_samples: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def read_wav(path) -> Waveform:
    """Read a mono PCM16 RIFF/WAVE file, scaling samples by 1/32768."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as exc:
        msg = str(exc)
        if msg.startswith("unknown format"):
            raise UnsupportedEncoding(f"{path}: {msg}") from exc
        raise MalformedHeader(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise MalformedHeader(f"{path}: truncated header") from exc
    if channels != 1:
        raise UnsupportedChannelLayout(f"{path}: {channels} channels, expected mono")
    if width != 2:
        raise UnsupportedEncoding(f"{path}: {8 * width}-bit samples, expected PCM16")
    if rate <= 0:
        raise MalformedHeader(f"{path}: sample rate {rate}")
    samples = np.frombuffer(raw, dtype="<i2")
    if samples.size == 0:
        raise MalformedHeader(f"{path}: no sample frames")
    return Waveform(samples.astype(np.float64) / PCM16_SCALE, rate)


def write_wav(path, w: Waveform) -> None:
    """Write ``w`` as mono PCM16, rounding and clipping to the int16 range."""
    pcm = np.clip(np.round(w.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(w.sample_rate_hz))
        wf.writeframes(pcm.tobytes())


def pre_emphasis(w: Waveform, coeff: float = 0.97) -> Waveform:
    if not 0.0 <= coeff < 1.0:
        raise ValueError(f"pre-emphasis coefficient {coeff} outside [0, 1)")
    x = w.samples
    y = x.copy()
    if coeff:
        y[1:] = x[1:] - coeff * x[:-1]
    return Waveform(y, w.sample_rate_hz)


def window_function(kind: str, n: int) -> np.ndarray:
    """Symmetric window of length ``n``."""
    if kind == "hamming":
        return np.hamming(n)
    if kind == "hann":
        return np.hanning(n)
    if kind == "rect":
        return np.ones(n)
    raise ValueError(f"unknown window {kind!r}")


def ms_to_samples(ms: float, sample_rate_hz: int) -> int:
    return int(round(ms * sample_rate_hz / 1000.0))


def num_frames(length: int, frame_len: int, hop: int) -> int:
    return (length - frame_len) // hop + 1


def frame_and_window(
    w: Waveform, frame_ms: float = 25.0, hop_ms: float = 10.0, window: str = "hamming"
) -> FrameMatrix:
    """Slice into overlapping frames and apply the window.

    Frame ``t`` covers samples ``[t*H, t*H + N)``; trailing samples that do
    not fill a whole frame are dropped.
    """
    n = ms_to_samples(frame_ms, w.sample_rate_hz)
    h = ms_to_samples(hop_ms, w.sample_rate_hz)
    if n < 2:
        raise ValueError(f"frame length {n} samples is below 2")
    if h < 1:
        raise ValueError(f"hop {h} samples is below 1")
    if len(w) < n:
        raise SignalTooShort(f"{len(w)} samples is shorter than one {n}-sample frame")
    t = num_frames(len(w), n, h)
    view = np.lib.stride_tricks.sliding_window_view(w.samples, n)[::h][:t]
    return FrameMatrix(view * window_function(window, n), n, h)
