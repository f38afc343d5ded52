"""Feature matrices and their binary archive format.

Single-utterance record (all little-endian)::

    b"SPFB" | u16 version | u16 len | kind (utf-8) | u32 T | u32 D | T*D f32, row-major

Concatenated archive::

    b"SPFA" | u16 version | u16 len | kind | u16 len | config digest
    | u32 count | count * (u16 len | utt_id | u64 offset | u32 T | u32 D)
    | count * SPFB record

``offset`` is the absolute byte position of the utterance's SPFB record.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyFeatures, MalformedArchive, NotFound

RECORD_MAGIC = b"SPFB"
ARCHIVE_MAGIC = b"SPFA"
FORMAT_VERSION = 1

FEATURE_KINDS = ("CQCC", "LFCC", "MFCC", "IMFCC", "LFBE", "MFBE", "IMFBE")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (T, D)
    kind: str
    config_digest: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] == 0:
            raise EmptyFeatures("feature matrix has no frames")
        if values.shape[1] == 0:
            raise ValueError("feature matrix has zero dimensions")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature matrix contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def config_digest(params: dict) -> str:
    """Stable short hash of a JSON-serialisable parameter dict."""
    blob = json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise MalformedArchive(f"{self.what}: truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def encode_record(f: FeatureMatrix) -> bytes:
    t, d = f.values.shape
    head = RECORD_MAGIC + struct.pack("<H", FORMAT_VERSION) + _pack_str(f.kind)
    head += struct.pack("<II", t, d)
    return head + f.values.astype("<f4").tobytes()


def _decode_record(r: _Reader, digest: str = "") -> FeatureMatrix:
    if r.take(4) != RECORD_MAGIC:
        raise MalformedArchive(f"{r.what}: bad record magic")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise MalformedArchive(f"{r.what}: unsupported record version {version}")
    kind = r.string()
    t, d = r.unpack("<II")
    values = np.frombuffer(r.take(4 * t * d), dtype="<f4").reshape(t, d)
    return FeatureMatrix(values.astype(np.float64), kind, digest)


def decode_record(buf: bytes) -> FeatureMatrix:
    return _decode_record(_Reader(buf, "feature record"))


def write_features(path, f: FeatureMatrix) -> None:
    Path(path).write_bytes(encode_record(f))


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    return _decode_record(_Reader(path.read_bytes(), str(path)))


@dataclass
class FeatureArchive:
    """Ordered mapping of utterance id to :class:`FeatureMatrix`."""

    kind: str
    config_digest: str
    items: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, utt_id):
        return self.items[utt_id]

    def __iter__(self):
        return iter(self.items)

    def add(self, utt_id: str, f: FeatureMatrix) -> None:
        if f.kind != self.kind:
            raise ValueError(f"archive holds {self.kind}, got {f.kind}")
        if utt_id in self.items:
            raise ValueError(f"duplicate utterance id {utt_id}")
        self.items[utt_id] = f

    def to_bytes(self) -> bytes:
        header = ARCHIVE_MAGIC + struct.pack("<H", FORMAT_VERSION)
        header += _pack_str(self.kind) + _pack_str(self.config_digest)
        header += struct.pack("<I", len(self.items))
        records = [encode_record(f) for f in self.items.values()]
        index_size = sum(
            2 + len(u.encode("utf-8")) + 16 for u in self.items
        )
        offset = len(header) + index_size
        index = b""
        for (utt_id, f), rec in zip(self.items.items(), records):
            index += _pack_str(utt_id) + struct.pack("<QII", offset, *f.values.shape)
            offset += len(rec)
        return header + index + b"".join(records)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureArchive":
        path = Path(path)
        if not path.is_file():
            raise NotFound(f"no such file: {path}")
        buf = path.read_bytes()
        r = _Reader(buf, str(path))
        if r.take(4) != ARCHIVE_MAGIC:
            raise MalformedArchive(f"{path}: not a feature archive")
        (version,) = r.unpack("<H")
        if version != FORMAT_VERSION:
            raise MalformedArchive(f"{path}: unsupported archive version {version}")
        arch = cls(r.string(), r.string())
        (count,) = r.unpack("<I")
        index = []
        for _ in range(count):
            utt_id = r.string()
            offset, t, d = r.unpack("<QII")
            index.append((utt_id, offset, t, d))
        for utt_id, offset, t, d in index:
            rec = _Reader(buf, f"{path}:{utt_id}")
            rec.pos = offset
            f = _decode_record(rec, arch.config_digest)
            if f.values.shape != (t, d):
                raise MalformedArchive(f"{path}: index shape mismatch for {utt_id}")
            arch.add(utt_id, f)
        return arch
