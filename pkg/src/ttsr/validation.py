"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

from typing import Iterable

from .backends.toy import parse_toy_question, toy_question
from .types import Question


def check_questions(X, *, require_ground_truth: bool = False, modulus=None) -> list[Question]:
    """Coerce ``X`` into a list of ``Question`` with unique ids.

    Accepts ``Question`` objects, dicts in the ``Question.to_dict`` layout, or
    plain toy-question strings (``"Modulo 97, starting at 0: add 5."``), which
    get ids ``x0, x1, ...``.
    """
    if X is None:
        raise ValueError("expected a sequence of questions, got None")
    if isinstance(X, (str, bytes, dict)) or not isinstance(X, Iterable):
        raise TypeError(f"expected a sequence of questions, got {type(X).__name__}")
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Question):
            q = item
        elif isinstance(item, dict):
            q = Question.from_dict(item)
        elif isinstance(item, str):
            q = toy_question(parse_toy_question(item), f"x{i}")
        else:
            raise TypeError(f"item {i}: cannot interpret {type(item).__name__} as a question")
        if modulus is not None and q.toy_payload is not None and q.toy_payload.modulus != modulus:
            raise ValueError(f"question {q.id}: modulus {q.toy_payload.modulus} != configured {modulus}")
        if require_ground_truth and q.ground_truth is None:
            raise ValueError(f"question {q.id} has no ground truth")
        out.append(q)
    if not out:
        raise ValueError("at least one question is required")
    ids = [q.id for q in out]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValueError(f"duplicate question ids: {dupes}")
    return out


def check_answers(y, n: int) -> list[str]:
    if len(y) != n:
        raise ValueError(f"got {len(y)} answers for {n} questions")
    return [str(v) for v in y]

