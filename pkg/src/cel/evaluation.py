"""Trial scoring, equal error rate, detection cost, and DET reporting.

Scoring is plain cosine between unit embeddings. The error-rate machinery
sweeps every distinct score as an accept-if-greater-or-equal threshold,
building false-accept and false-reject staircases; the equal error rate is
read off at their crossing with linear interpolation between adjacent sweep
points. The detection cost is minimized over the same sweep and normalized
by the better of the two default policies (accept all, reject all).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding import cosine
from .errors import DegenerateTrialsError, TrialParseError, UnknownIdError


@dataclass(frozen=True)
class Trial:
    """One verification trial; score is filled in by score_trials."""

    enroll_id: str
    test_id: str
    is_target: bool
    score: float | None = None


@dataclass(frozen=True)
class DcfParams:
    """Detection cost weights and the target-trial prior."""

    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.05

    def __post_init__(self) -> None:
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise DegenerateTrialsError(
                f"costs must be positive, got c_miss={self.c_miss}, c_fa={self.c_fa}"
            )
        if not 0.0 < self.p_target < 1.0:
            raise DegenerateTrialsError(
                f"p_target must be in (0, 1), got {self.p_target}"
            )


def score_trials(
    embeddings: Mapping[str, np.ndarray], trials: Sequence[Trial]
) -> list[Trial]:
    """Attach cosine scores; preserves trial order."""
    out = []
    for t in trials:
        for key in (t.enroll_id, t.test_id):
            if key not in embeddings:
                raise UnknownIdError(f"no embedding for id {key!r}")
        s = cosine(embeddings[t.enroll_id], embeddings[t.test_id])
        out.append(replace(t, score=s))
    return out


def _split_scores(trials: Sequence[Trial]) -> tuple[np.ndarray, np.ndarray]:
    tgt = [t.score for t in trials if t.is_target]
    non = [t.score for t in trials if not t.is_target]
    if any(s is None for s in tgt + non):
        raise DegenerateTrialsError("trials must be scored before metric computation")
    if not tgt or not non:
        raise DegenerateTrialsError(
            f"need both classes, got {len(tgt)} target and {len(non)} nontarget trials"
        )
    return np.sort(np.asarray(tgt, dtype=np.float64)), np.sort(
        np.asarray(non, dtype=np.float64)
    )


def _staircases(
    targets: np.ndarray, nontargets: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, P_fa, P_miss) over distinct scores plus one sentinel.

    Accept iff score >= threshold; a trial exactly at threshold is accepted.
    The sentinel sits above every score so the sweep always reaches the
    reject-all corner (P_fa 0, P_miss 1).
    """
    distinct = np.unique(np.concatenate([targets, nontargets]))
    thresholds = np.concatenate([distinct, [distinct[-1] + 1.0]])
    p_fa = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    p_miss = np.searchsorted(targets, thresholds, side="left") / targets.size
    return thresholds, p_fa, p_miss


def eer(trials: Sequence[Trial]) -> tuple[float, float]:
    """Equal error rate and the threshold where the staircases cross.

    At the first sweep point where P_miss >= P_fa, either the rates are
    equal (that value is the answer) or the crossing lies strictly between
    this point and the previous one; both staircases are then interpolated
    linearly in sweep position and the common value at the intersection is
    returned.
    """
    targets, nontargets = _split_scores(trials)
    thresholds, p_fa, p_miss = _staircases(targets, nontargets)
    i = int(np.argmax(p_miss >= p_fa))
    if p_miss[i] == p_fa[i] or i == 0:
        return float(p_fa[i]), float(thresholds[i])
    d_fa = p_fa[i] - p_fa[i - 1]
    d_miss = p_miss[i] - p_miss[i - 1]
    u = (p_fa[i - 1] - p_miss[i - 1]) / (d_miss - d_fa)
    value = p_fa[i - 1] + u * d_fa
    threshold = thresholds[i - 1] + u * (thresholds[i] - thresholds[i - 1])
    return float(value), float(threshold)


def min_dcf(trials: Sequence[Trial], params: DcfParams = DcfParams()) -> tuple[float, float]:
    """Minimum normalized detection cost and the threshold attaining it."""
    targets, nontargets = _split_scores(trials)
    thresholds, p_fa, p_miss = _staircases(targets, nontargets)
    dcf = (
        params.c_miss * params.p_target * p_miss
        + params.c_fa * (1.0 - params.p_target) * p_fa
    )
    default_cost = min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target))
    i = int(np.argmin(dcf))
    return float(dcf[i] / default_cost), float(thresholds[i])


def det_points(trials: Sequence[Trial]) -> list[tuple[float, float]]:
    """(P_fa, P_miss) staircase, one point per distinct score plus sentinel."""
    targets, nontargets = _split_scores(trials)
    _, p_fa, p_miss = _staircases(targets, nontargets)
    return [(float(a), float(b)) for a, b in zip(p_fa, p_miss)]


def read_trial_list(path: str | Path) -> list[Trial]:
    """Parse 'label enroll test [score]' lines; label 1 marks a target."""
    trials = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise TrialParseError(
                f"{path}:{lineno}: expected 3 or 4 fields, got {len(parts)}"
            )
        if parts[0] not in ("0", "1"):
            raise TrialParseError(
                f"{path}:{lineno}: label must be 0 or 1, got {parts[0]!r}"
            )
        score = None
        if len(parts) == 4:
            try:
                score = float(parts[3])
            except ValueError as exc:
                raise TrialParseError(
                    f"{path}:{lineno}: bad score field {parts[3]!r}"
                ) from exc
        trials.append(Trial(parts[1], parts[2], parts[0] == "1", score))
    if not trials:
        raise TrialParseError(f"{path}: no trials found")
    return trials


def write_trial_list(path: str | Path, trials: Iterable[Trial]) -> None:
    lines = []
    for t in trials:
        base = f"{1 if t.is_target else 0} {t.enroll_id} {t.test_id}"
        if t.score is not None:
            base += f" {t.score!r}"
        lines.append(base)
    Path(path).write_text("\n".join(lines) + "\n")


def write_det_csv(path: str | Path, points: Sequence[tuple[float, float]]) -> None:
    lines = ["p_fa,p_miss"]
    lines += [f"{a!r},{b!r}" for a, b in points]
    Path(path).write_text("\n".join(lines) + "\n")
