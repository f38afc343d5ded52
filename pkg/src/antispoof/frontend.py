"""Feature-kind dispatch and batch extraction over a trial list."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from .audio import Waveform, read_wav
from .cqcc import CqccConfig, extract_cqcc
from .features import FEATURE_KINDS, FeatureArchive, FeatureMatrix
from .spectral import SpectralConfig, extract_spectral_feature


def feature_config(kind: str, **overrides):
    """Config object for ``kind`` (case-insensitive), ignoring overrides it does not define."""
    kind = kind.upper()
    if kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}; choose from {', '.join(FEATURE_KINDS)}")
    cls = CqccConfig if kind == "CQCC" else SpectralConfig
    names = {f.name for f in fields(cls)}
    return cls(kind=kind, **{k: v for k, v in overrides.items() if k in names and v is not None})


def extract(w: Waveform, cfg) -> FeatureMatrix:
    if isinstance(cfg, CqccConfig):
        return extract_cqcc(w, cfg)
    return extract_spectral_feature(w, cfg)


def _extract_file(args):
    path, cfg = args
    return extract(read_wav(path), cfg)


def extract_corpus(trials, wav_dir, cfg, workers: int = 1) -> FeatureArchive:
    """Extract every trial's ``{wav_dir}/{utterance_id}.wav`` into an archive.

    Results are collected in trial order, so the archive is identical for
    any worker count.
    """
    wav_dir = Path(wav_dir)
    jobs = [(wav_dir / f"{t.utterance_id}.wav", cfg) for t in trials]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            feats = list(pool.map(_extract_file, jobs, chunksize=8))
    else:
        feats = [_extract_file(j) for j in jobs]
    archive = FeatureArchive(cfg.kind, cfg.digest())
    for t, f in zip(trials, feats):
        archive.add(t.utterance_id, f)
    return archive
