"""Teacher-side rewards: difficulty, similarity penalty, composite reward, format gate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .similarity import similarity_ratio

OPEN_TAG = "<question>"
CLOSE_TAG = "</question>"

MISSING_OPEN = "missing open tag"
MISSING_CLOSE = "missing close tag"
EMPTY_BODY = "empty body"
NESTED = "nested tags"


def _xlogx(x: float) -> float:
    return 0.0 if x == 0.0 else x * math.log(x)


def difficulty_reward(s: float) -> float:
    """Binary entropy of ``s`` in bits; peaks at 1.0 for ``s = 0.5``."""
    if not 0.0 <= s <= 1.0 or math.isnan(s):
        raise ValueError(f"pseudo-correctness score must lie in [0, 1], got {s}")
    return -(_xlogx(s) + _xlogx(1.0 - s)) / math.log(2.0)


def similarity_penalty(candidate: Sequence, others: Sequence[Sequence], tau: float) -> float:
    """Mean thresholded excess similarity of ``candidate`` to every other member."""
    if len(others) == 0:
        raise ValueError("similarity penalty needs at least one other sequence")
    excess = [max(0.0, similarity_ratio(candidate, other) - tau) for other in others]
    return math.fsum(excess) / len(excess)


def teacher_reward(r_diff: float, r_sim: float, lam: float) -> float:
    if not 0.0 <= r_diff <= 1.0:
        raise ValueError(f"r_diff must lie in [0, 1], got {r_diff}")
    if r_sim < 0 or lam < 0:
        raise ValueError("r_sim and lambda must be non-negative")
    return max(0.0, r_diff - lam * r_sim)


@dataclass(frozen=True)
class GateResult:
    text: Optional[str]
    reason: Optional[str] = None

    @property
    def accepted(self) -> bool:
        return self.text is not None


def format_gate(raw_output: str) -> GateResult:
    """Admit only outputs carrying a well-formed ``<question>...</question>`` pair."""
    start = raw_output.find(OPEN_TAG)
    if start < 0:
        return GateResult(None, MISSING_OPEN)
    body_start = start + len(OPEN_TAG)
    end = raw_output.find(CLOSE_TAG, body_start)
    if end < 0:
        return GateResult(None, MISSING_CLOSE)
    body = raw_output[body_start:end]
    if OPEN_TAG in body:
        return GateResult(None, NESTED)
    body = body.strip()
    if not body:
        return GateResult(None, EMPTY_BODY)
    return GateResult(body)


def wrap_question(text: str) -> str:
    return f"{OPEN_TAG}{text}{CLOSE_TAG}"


def batch_similarity_penalties(candidates: Sequence[Sequence], references: Sequence[Sequence],
                               tau: float) -> list[float]:
    """Penalty of each gated candidate against the rest of its generation batch.

    The comparison set for candidate ``i`` is every other candidate plus
    ``references[i]`` (the question it was derived from). Duplicates are kept:
    only the candidate's own slot is removed.
    """
    if len(candidates) != len(references):
        raise ValueError("one reference question per candidate is required")
    penalties = []
    for i, cand in enumerate(candidates):
        others = [c for k, c in enumerate(candidates) if k != i]
        others.append(references[i])
        penalties.append(similarity_penalty(cand, others, tau))
    return penalties


def mean_pairwise_similarity(sequences: Sequence[Sequence]) -> float:
    """Average similarity over ordered pairs; ``nan`` for fewer than two items."""
    n = len(sequences)
    if n < 2:
        return float("nan")
    sims = [similarity_ratio(sequences[i], sequences[j])
            for i in range(n) for j in range(n) if i != j]
    return math.fsum(sims) / len(sims)
