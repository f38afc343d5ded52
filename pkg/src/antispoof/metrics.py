"""Countermeasure evaluation: DET sweep, EER, accuracy and min normalised t-DCF.

Convention throughout: a trial is accepted as bonafide when its score is
``>= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DegenerateOperatingPoint, SingleClassScores, TrialSetMismatch


@dataclass(frozen=True)
class LabeledScores:
    trial_ids: tuple
    scores: np.ndarray
    bonafide: np.ndarray  # bool

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        bonafide = np.asarray(self.bonafide, dtype=bool)
        if scores.shape != bonafide.shape or len(self.trial_ids) != scores.shape[0]:
            raise ValueError("trial ids, scores and labels must be parallel")
        if len(set(self.trial_ids)) != len(self.trial_ids):
            raise ValueError("trial ids must be unique")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "bonafide", bonafide)
        object.__setattr__(self, "trial_ids", tuple(self.trial_ids))

    @classmethod
    def from_arrays(cls, bonafide_scores, spoof_scores) -> "LabeledScores":
        b = np.asarray(bonafide_scores, dtype=np.float64).ravel()
        s = np.asarray(spoof_scores, dtype=np.float64).ravel()
        ids = tuple(f"b{i}" for i in range(b.size)) + tuple(f"s{i}" for i in range(s.size))
        return cls(ids, np.concatenate([b, s]), np.r_[np.ones(b.size, bool), np.zeros(s.size, bool)])

    @property
    def bonafide_scores(self) -> np.ndarray:
        return self.scores[self.bonafide]

    @property
    def spoof_scores(self) -> np.ndarray:
        return self.scores[~self.bonafide]


def join_labels(scores, trials) -> LabeledScores:
    """Attach protocol labels to a score set; the trial id sets must match exactly."""
    labels = {t.utterance_id: t.label == "bonafide" for t in trials}
    score_ids = set(scores.scores)
    if score_ids != set(labels):
        missing = sorted(set(labels) - score_ids)
        extra = sorted(score_ids - set(labels))
        raise TrialSetMismatch(
            f"{len(missing)} protocol trials without scores (e.g. {missing[:3]}), "
            f"{len(extra)} scores not in protocol (e.g. {extra[:3]})"
        )
    ids = list(scores.scores)
    return LabeledScores(ids, [scores.scores[i] for i in ids], [labels[i] for i in ids])


def _require_both(s: LabeledScores) -> None:
    if s.bonafide.all() or not s.bonafide.any():
        raise SingleClassScores("need at least one bonafide and one spoof score")


def det_curve(s: LabeledScores):
    """Threshold sweep ``(thresholds, p_miss, p_fa)``.

    Thresholds are the sorted unique scores bracketed by -inf and +inf.
    ``p_miss`` is the fraction of bonafide scores below the threshold and
    ``p_fa`` the fraction of spoof scores at or above it.
    """
    _require_both(s)
    bona = np.sort(s.bonafide_scores)
    spoof = np.sort(s.spoof_scores)
    thresholds = np.concatenate([[-np.inf], np.unique(s.scores), [np.inf]])
    p_miss = np.searchsorted(bona, thresholds, side="left") / bona.size
    p_fa = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    return thresholds, p_miss, p_fa


def eer_from_curve(p_miss: np.ndarray, p_fa: np.ndarray) -> float:
    """Linear interpolation at the first sign change of ``p_miss - p_fa``."""
    diff = p_miss - p_fa
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return float(p_miss[i])
    lam = -diff[i - 1] / (diff[i] - diff[i - 1])
    return float(p_miss[i - 1] + lam * (p_miss[i] - p_miss[i - 1]))


def eer(s: LabeledScores) -> float:
    _, p_miss, p_fa = det_curve(s)
    return eer_from_curve(p_miss, p_fa)


def accuracy(s: LabeledScores, threshold: float = 0.0) -> float:
    """Percentage of trials whose decision (score >= threshold) matches the label."""
    if s.scores.size == 0:
        return 0.0
    return 100.0 * float(np.mean((s.scores >= threshold) == s.bonafide))


@dataclass(frozen=True)
class TDcfParams:
    """Priors, costs and the fixed ASV operating point of the tandem cost.

    The default operating point corresponds to the bundled synthetic ASV:
    unit-variance Gaussian scores with target mean +2, non-target mean -2
    and spoof mean +1, thresholded at the target/non-target EER point (0).
    """

    pi_tar: float = 0.9405
    pi_non: float = 0.0095
    pi_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_miss_asv: float = float(norm.cdf(-2.0))
    p_fa_asv: float = float(norm.cdf(-2.0))
    p_miss_spoof_asv: float = float(norm.cdf(-1.0))

    def __post_init__(self):
        priors = (self.pi_tar, self.pi_non, self.pi_spoof)
        if min(priors) < 0 or abs(sum(priors) - 1.0) > 1e-9:
            raise ValueError(f"priors must be non-negative and sum to 1, got {priors}")
        costs = (self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm)
        if min(costs) <= 0:
            raise ValueError("costs must be positive")
        for p in (self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"ASV error rate {p} outside [0, 1]")


def tdcf_coefficients(p: TDcfParams) -> tuple:
    """``(C1, C2)`` weighting the CM miss and false-alarm rates."""
    c1 = p.pi_tar * (p.c_miss_cm - p.c_miss_asv * p.p_miss_asv) - p.pi_non * p.c_fa_asv * p.p_fa_asv
    c2 = p.c_fa_cm * p.pi_spoof * (1.0 - p.p_miss_spoof_asv)
    if c1 <= 0 or c2 <= 0:
        raise DegenerateOperatingPoint(f"C1={c1}, C2={c2}: both must be positive")
    return c1, c2


def tdcf_curve(s: LabeledScores, p: TDcfParams):
    """Normalised t-DCF at every DET threshold; returns ``(thresholds, tdcf)``."""
    c1, c2 = tdcf_coefficients(p)
    thresholds, p_miss, p_fa = det_curve(s)
    return thresholds, (c1 * p_miss + c2 * p_fa) / min(c1, c2)


def min_tdcf(s: LabeledScores, p: TDcfParams = TDcfParams()) -> float:
    """Minimum normalised t-DCF; accept-all and reject-all both score >= 1."""
    return float(np.min(tdcf_curve(s, p)[1]))


def synthetic_asv_scores(n: int = 10000, seed: int = 0):
    """Gaussian stand-in for ASV scores: ``(target, nontarget, spoof)``."""
    rng = np.random.default_rng(seed)
    return (rng.normal(2.0, 1.0, n), rng.normal(-2.0, 1.0, n), rng.normal(1.0, 1.0, n))


def asv_operating_point(target, nontarget, spoof) -> dict:
    """ASV error rates at its own EER threshold, for :class:`TDcfParams`."""
    s = LabeledScores.from_arrays(target, nontarget)
    thresholds, p_miss, p_fa = det_curve(s)
    i = int(np.argmin(np.abs(p_miss - p_fa)))
    theta = thresholds[i]
    return {
        "p_miss_asv": float(p_miss[i]),
        "p_fa_asv": float(p_fa[i]),
        "p_miss_spoof_asv": float(np.mean(np.asarray(spoof) < theta)),
    }


def evaluate(s: LabeledScores, p: TDcfParams = TDcfParams(), threshold: float = 0.0) -> dict:
    """EER (%), min-t-DCF and accuracy (%) for one system."""
    return {
        "eer_percent": 100.0 * eer(s),
        "min_tdcf": min_tdcf(s, p),
        "acc_percent": accuracy(s, threshold),
        "trials": int(s.scores.size),
    }


def format_table(results: dict) -> str:
    """Human-readable table, one row per system."""
    rows = [f"{'system':<16}{'min-t-DCF':>12}{'EER(%)':>10}{'Acc(%)':>10}"]
    for name, r in results.items():
        rows.append(f"{name:<16}{r['min_tdcf']:>12.4f}{r['eer_percent']:>10.2f}{r['acc_percent']:>10.2f}")
    return "\n".join(rows)


def format_key_values(results: dict) -> str:
    """Machine-readable ``system.metric=value`` lines."""
    lines = []
    for name, r in results.items():
        for key in ("eer_percent", "min_tdcf", "acc_percent", "trials"):
            lines.append(f"{name}.{key}={r[key]!r}")
    return "\n".join(lines)
