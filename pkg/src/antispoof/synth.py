"""Deterministic two-class corpus standing in for real spoofing data.

Both classes share a speech-like source (glottal pulse train plus
aspiration noise, spectrally tilted, syllable-rate amplitude modulation).
Bonafide audio goes through one pair of resonators; spoofed audio goes
through a different pair, then a 3.4 kHz low-pass and mu-law companding
with coarse quantisation, a crude replay/codec channel.

Each utterance draws from its own RNG stream keyed by ``(seed, subset,
index)``, so output does not depend on the order or parallelism of
generation.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import Waveform, write_wav
from .errors import IoError
from .protocol import SUBSETS, Trial, write_protocol

# LA train/dev sizes scaled by 1/20; eval mirrors dev
DEFAULT_COUNTS = {
    ("train", "bonafide"): 129, ("train", "spoof"): 1140,
    ("dev", "bonafide"): 127, ("dev", "spoof"): 1115,
    ("eval", "bonafide"): 127, ("eval", "spoof"): 1115,
}

NUM_SPEAKERS = 20
NUM_MALE = 8
DISTORTION_BAND_HZ = (3400.0, 8000.0)


@dataclass(frozen=True)
class Recipe:
    formants_hz: tuple
    bandwidths_hz: tuple
    lowpass_hz: float | None = None
    mu: float | None = None
    quant_bits: int | None = None


BONAFIDE_RECIPE = Recipe((700.0, 1800.0), (120.0, 200.0))
SPOOF_RECIPE = Recipe((550.0, 2300.0), (150.0, 250.0), lowpass_hz=3400.0, mu=255.0, quant_bits=8)


@dataclass(frozen=True)
class SynthConfig:
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    sample_rate_hz: int = 16000
    utterance_seconds: float = 2.0
    seed: int = 7
    bonafide: Recipe = BONAFIDE_RECIPE
    spoof: Recipe = SPOOF_RECIPE

    def __post_init__(self):
        if any(n <= 0 for n in self.counts.values()):
            raise ValueError("every subset/label count must be positive")
        if self.bonafide == self.spoof:
            raise ValueError("class recipes must differ")

    def subsets(self) -> list:
        return [s for s in SUBSETS if any(k[0] == s for k in self.counts)]


def _resonator(freq: float, bw: float, fs: int) -> np.ndarray:
    """Second-order resonator as a single SOS row with unit peak gain."""
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    b = np.array([1.0 - r, 0.0, -(1.0 - r)])
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.concatenate([b, a])


def speaker_f0(speaker: int) -> float:
    return (105.0 + 5.0 * speaker) if speaker < NUM_MALE else (185.0 + 4.0 * (speaker - NUM_MALE))


def synthesize(recipe: Recipe, speaker: int, rng: np.random.Generator,
               sample_rate_hz: int = 16000, seconds: float = 2.0) -> np.ndarray:
    fs = sample_rate_hz
    n = int(round(seconds * fs))
    t = np.arange(n) / fs
    # glottal source: jittered pulse train plus aspiration noise
    f0 = speaker_f0(speaker) * (1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t
                                                    + rng.uniform(0, 2 * np.pi)))
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    source = pulses + 0.05 * rng.standard_normal(n)
    source = signal.lfilter([1.0], [1.0, -0.9], source)
    jitter = rng.uniform(0.92, 1.08, size=len(recipe.formants_hz))
    sos = np.stack([_resonator(f * j, bw, fs)
                    for f, j, bw in zip(recipe.formants_hz, jitter, recipe.bandwidths_hz)])
    voiced = signal.sosfilt(sos, source)
    # keep some direct source so the upper band carries energy
    x = voiced / (np.std(voiced) + 1e-12) + 0.3 * source / (np.std(source) + 1e-12)
    x *= 1.0 + 0.6 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    if recipe.lowpass_hz is not None:
        x = signal.sosfilt(signal.butter(6, recipe.lowpass_hz, fs=fs, output="sos"), x)
    x = 0.5 * x / np.max(np.abs(x))
    if recipe.mu is not None:
        mu = recipe.mu
        y = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
        if recipe.quant_bits:
            levels = 2 ** (recipe.quant_bits - 1)
            y = np.round(y * levels) / levels
        x = np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu
    return 0.5 * x / max(np.max(np.abs(x)), 1e-12)


def utterance_id(subset: str, index: int) -> str:
    return f"{subset.upper()}_{index:05d}"


def plan_subset(cfg: SynthConfig, subset: str) -> list:
    """Trial list for one subset (deterministic label order and speakers)."""
    n_b = cfg.counts.get((subset, "bonafide"), 0)
    n_s = cfg.counts.get((subset, "spoof"), 0)
    labels = np.array(["bonafide"] * n_b + ["spoof"] * n_s)
    order = np.random.default_rng([cfg.seed, SUBSETS.index(subset)]).permutation(len(labels))
    trials = []
    n_spoofed = 0
    for i, lab in enumerate(labels[order]):
        if lab == "spoof":
            attack = f"A{1 + n_spoofed % 6:02d}"
            n_spoofed += 1
        else:
            attack = "-"
        trials.append(Trial(f"S{1 + i % NUM_SPEAKERS:02d}", utterance_id(subset, i + 1),
                            attack, str(lab), subset))
    return trials


def render_trial(cfg: SynthConfig, trial: Trial) -> Waveform:
    index = int(trial.utterance_id.rsplit("_", 1)[1])
    rng = np.random.default_rng([cfg.seed, SUBSETS.index(trial.subset), index])
    recipe = cfg.bonafide if trial.is_bonafide else cfg.spoof
    speaker = int(trial.speaker_id[1:]) - 1
    x = synthesize(recipe, speaker, rng, cfg.sample_rate_hz, cfg.utterance_seconds)
    return Waveform(x, cfg.sample_rate_hz)


def _render_and_write(args):
    cfg, trial, path = args
    write_wav(path, render_trial(cfg, trial))
    return path


def band_energy_ratio_db(bonafide: list, spoof: list, fs: int,
                         band=DISTORTION_BAND_HZ) -> float:
    """How much more of its energy bonafide audio keeps in ``band`` than spoofed audio, in dB."""
    def band_fraction(waves):
        total = np.zeros(257)
        for x in waves:
            f, pxx = signal.welch(x, fs=fs, nperseg=512)
            total += pxx
        sel = (f >= band[0]) & (f <= band[1])
        return total[sel].sum() / total.sum()

    return float(10.0 * np.log10(band_fraction(bonafide) / band_fraction(spoof)))


def generate_corpus(cfg: SynthConfig, out_dir, workers: int = 1) -> dict:
    """Write WAVs under ``out_dir/{subset}/`` and ``out_dir/protocols/{subset}.txt``.

    Raises ``ValueError`` if the classes fail the separability check (the
    bonafide/spoof energy ratio in 3.4-8 kHz must exceed 3 dB).
    """
    out = Path(out_dir)
    try:
        (out / "protocols").mkdir(parents=True, exist_ok=True)
        plans = {}
        jobs = []
        for subset in cfg.subsets():
            (out / subset).mkdir(exist_ok=True)
            plans[subset] = plan_subset(cfg, subset)
            jobs += [(cfg, t, out / subset / f"{t.utterance_id}.wav") for t in plans[subset]]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                list(pool.map(_render_and_write, jobs, chunksize=32))
        else:
            for job in jobs:
                _render_and_write(job)
        for subset, trials in plans.items():
            write_protocol(out / "protocols" / f"{subset}.txt", trials)
    except OSError as exc:
        raise IoError(str(exc)) from exc

    probe = plans[cfg.subsets()[0]]
    bona = [render_trial(cfg, t).samples for t in probe if t.is_bonafide][:20]
    spoof = [render_trial(cfg, t).samples for t in probe if not t.is_bonafide][:20]
    ratio = band_energy_ratio_db(bona, spoof, cfg.sample_rate_hz)
    if not ratio > 3.0:
        raise ValueError(f"synthetic classes too similar: {ratio:.2f} dB in the distortion band")
    return plans


def directory_digest(path) -> str:
    """SHA-256 over relative paths and contents of every file under ``path``."""
    h = hashlib.sha256()
    root = Path(path)
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
