"""Majority-vote pseudo-targets and binary agreement rewards."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

EMPTY = "∅"

_INT_RE = re.compile(r"^[+-]?\d+$")


def _boxed_contents(text: str) -> list[str]:
    """Contents of every ``\\boxed{...}``, honouring nested braces."""
    out = []
    start = 0
    while True:
        idx = text.find("\\boxed{", start)
        if idx < 0:
            return out
        i = idx + len("\\boxed{")
        depth = 1
        j = i
        while j < len(text) and depth:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
            j += 1
        if depth == 0:
            out.append(text[i:j - 1])
        start = j


def canonicalize_answer(raw: str, kind: str = "toy") -> str:
    """Map a raw answer to its canonical comparison form.

    ``kind="toy"`` expects an integer and drops leading zeros and sign noise.
    ``kind="remote"`` takes the last ``\\boxed{}`` or, failing that, the last
    nonempty line, then collapses whitespace and folds case. Anything that
    yields nothing becomes the ``EMPTY`` sentinel.
    """
    if raw is None:
        return EMPTY
    if kind == "toy":
        text = raw.strip()
        if not _INT_RE.match(text):
            return EMPTY
        return str(int(text))
    if kind == "remote":
        text = " ".join(extract_final_answer(raw).split()).lower()
        return text if text else EMPTY
    raise ValueError(f"unknown answer kind {kind!r}")


def extract_final_answer(text: str) -> str:
    """Last ``\\boxed{}`` content, else the last nonempty line."""
    boxed = _boxed_contents(text)
    if boxed:
        return boxed[-1]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    return lines[-1] if lines else ""


@dataclass(frozen=True)
class ConsensusResult:
    pseudo_target: str
    counts: Mapping[str, int]
    tie_flag: bool
    score_s: float


def majority_vote(answers: Sequence[str]) -> ConsensusResult:
    if len(answers) == 0:
        raise ValueError("majority_vote needs at least one answer")
    counts = Counter(answers)
    eligible = {a: c for a, c in counts.items() if a != EMPTY} or dict(counts)
    best = max(eligible.values())
    leaders = sorted(a for a, c in eligible.items() if c == best)
    target = leaders[0]
    return ConsensusResult(target, dict(counts), len(leaders) > 1, counts[target] / len(answers))


def pseudo_reward(answer: str, target: str) -> int:
    return int(answer == target)


def pseudo_correctness_score(rewards: Sequence[int]) -> float:
    if len(rewards) == 0:
        raise ValueError("empty reward list")
    return sum(rewards) / len(rewards)
