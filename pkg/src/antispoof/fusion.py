"""Decision-level feature switching (DLFS).

For every trial the fused score is the constituent score lying furthest
from the bonafide/spoof boundary, i.e. the one with the largest absolute
value after per-system standardisation. Ties go to the system listed first.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateScores, EmptyInput, TrialIdMismatch, TrialSetMismatch
from .scores import ScoreSet, TrialScore


@dataclass(frozen=True)
class Calibration:
    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DegenerateScores(f"calibration scale must be positive, got {self.scale}")

    def apply(self, s: float) -> float:
        return (s - self.shift) / self.scale


def calibrate(dev_scores) -> Calibration:
    """Zero-mean, unit-variance (population) standardisation estimated on dev scores."""
    values = np.fromiter(
        dev_scores.scores.values() if isinstance(dev_scores, ScoreSet) else dev_scores,
        dtype=np.float64,
    )
    if np.unique(values).size < 2:
        raise DegenerateScores("need at least two distinct scores to calibrate")
    return Calibration(float(values.mean()), float(values.std()))


def dlfs_select(per_system) -> TrialScore:
    """Pick the score with maximum magnitude from ``[(system, TrialScore), ...]``."""
    per_system = list(per_system)
    if not per_system:
        raise EmptyInput("no constituent scores")
    trial_id = per_system[0][1].trial_id
    best_tag, best = per_system[0]
    for tag, ts in per_system:
        if ts.trial_id != trial_id:
            raise TrialIdMismatch(f"scores for {trial_id!r} and {ts.trial_id!r} mixed")
        if abs(ts.score) > abs(best.score):
            best_tag, best = tag, ts
    return TrialScore(trial_id, best.score, best_tag)


@dataclass
class FusedScoreSet:
    scores: ScoreSet
    systems: list
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scores)


def fuse_all(score_sets, calibrations=None, name: str = "DLFS") -> FusedScoreSet:
    """Apply :func:`dlfs_select` trial by trial.

    ``score_sets`` is a list of :class:`ScoreSet` whose ``system`` fields name
    the constituents (in tie-break order). ``calibrations`` maps system name
    to :class:`Calibration`; systems without an entry are used unchanged.
    """
    score_sets = list(score_sets)
    if not score_sets:
        raise EmptyInput("no systems to fuse")
    calibrations = calibrations or {}
    systems = [s.system for s in score_sets]
    if len(set(systems)) != len(systems):
        raise ValueError(f"system names must be distinct: {systems}")
    reference = set(score_sets[0].scores)
    for s in score_sets[1:]:
        ids = set(s.scores)
        if ids != reference:
            diff = sorted(ids ^ reference)
            shown = ", ".join(diff[:5]) + (" ..." if len(diff) > 5 else "")
            raise TrialSetMismatch(
                f"{s.system} and {systems[0]} differ on {len(diff)} trial ids: {shown}"
            )
    fused = ScoreSet(name)
    for trial_id in score_sets[0].scores:
        candidates = []
        for s in score_sets:
            value = s.scores[trial_id]
            cal = calibrations.get(s.system)
            candidates.append((s.system, TrialScore(trial_id, cal.apply(value) if cal else value)))
        choice = dlfs_select(candidates)
        fused.add(trial_id, choice.score, choice.system)
    tally = Counter(fused.chosen.values())
    return FusedScoreSet(fused, systems, {tag: tally.get(tag, 0) for tag in systems})
