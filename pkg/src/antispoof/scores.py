"""Per-trial scores and the tab-separated score file format.

One line per trial: ``trial_id<TAB>score``. Fused files carry a third
column naming the system whose score was chosen. Scores are written with
``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateTrialId, MalformedLine, NotFound


@dataclass(frozen=True)
class TrialScore:
    trial_id: str
    score: float
    system: str = ""

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for trial {self.trial_id!r}")


@dataclass
class ScoreSet:
    """Scores keyed by trial id, in insertion order."""

    system: str = ""
    scores: dict = field(default_factory=dict)
    chosen: dict = field(default_factory=dict)  # fused sets only

    def __len__(self):
        return len(self.scores)

    def __iter__(self):
        return iter(self.scores)

    def __getitem__(self, trial_id):
        return self.scores[trial_id]

    def add(self, trial_id: str, score: float, chosen: str | None = None) -> None:
        if trial_id in self.scores:
            raise DuplicateTrialId(f"duplicate trial id {trial_id!r}")
        self.scores[trial_id] = float(score)
        if chosen is not None:
            self.chosen[trial_id] = chosen

    def trial(self, trial_id: str) -> TrialScore:
        return TrialScore(trial_id, self.scores[trial_id], self.chosen.get(trial_id, self.system))

    def ids(self) -> list:
        return list(self.scores)


def write_scores(path, scores: ScoreSet) -> None:
    lines = []
    for trial_id, s in scores.scores.items():
        if trial_id in scores.chosen:
            lines.append(f"{trial_id}\t{s!r}\t{scores.chosen[trial_id]}")
        else:
            lines.append(f"{trial_id}\t{s!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_scores(path, system: str | None = None) -> ScoreSet:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    out = ScoreSet(system if system is not None else path.stem)
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[0]:
            raise MalformedLine(line_no, f"expected 'trial_id<TAB>score', got {line!r}")
        try:
            value = float(parts[1])
        except ValueError:
            raise MalformedLine(line_no, f"non-numeric score {parts[1]!r}") from None
        if not math.isfinite(value):
            raise MalformedLine(line_no, f"non-finite score {parts[1]!r}")
        try:
            out.add(parts[0], value, parts[2] if len(parts) == 3 else None)
        except DuplicateTrialId as exc:
            raise DuplicateTrialId(f"line {line_no}: {exc}") from None
    return out
