"""Trial lists.

One trial per line, space separated: ``speaker_id utterance_id attack_id label``
where ``attack_id`` is ``-`` exactly when ``label`` is ``bonafide``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateUtteranceId, LabelAttackMismatch, MalformedLine, NotFound

LABELS = ("bonafide", "spoof")
SUBSETS = ("train", "dev", "eval")


@dataclass(frozen=True)
class Trial:
    speaker_id: str
    utterance_id: str
    attack_id: str
    label: str
    subset: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if (self.label == "bonafide") != (self.attack_id == "-"):
            raise LabelAttackMismatch(
                f"{self.utterance_id}: label {self.label!r} with attack {self.attack_id!r}"
            )

    @property
    def is_bonafide(self) -> bool:
        return self.label == "bonafide"

    def to_line(self) -> str:
        return f"{self.speaker_id} {self.utterance_id} {self.attack_id} {self.label}"


def parse_protocol(path, subset: str | None = None) -> list:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    if subset is None:
        subset = path.stem if path.stem in SUBSETS else ""
    trials = []
    seen = set()
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise MalformedLine(line_no, f"expected 4 fields, got {len(fields)}: {line!r}")
        speaker, utt, attack, label = fields
        if label not in LABELS:
            raise MalformedLine(line_no, f"unknown label {label!r}")
        if utt in seen:
            raise DuplicateUtteranceId(f"line {line_no}: utterance {utt!r} listed twice")
        seen.add(utt)
        try:
            trials.append(Trial(speaker, utt, attack, label, subset))
        except LabelAttackMismatch as exc:
            raise LabelAttackMismatch(f"line {line_no}: {exc}") from None
    return trials


def write_protocol(path, trials) -> None:
    Path(path).write_text("".join(t.to_line() + "\n" for t in trials))
