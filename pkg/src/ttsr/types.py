"""Shared domain records.

Every record is a frozen dataclass holding tuples rather than arrays so it can
be shared across threads and compared structurally after a JSON round trip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

OPERATORS = ("+", "-", "*")
SOURCES = ("test", "variant")


def fold_op_chain(op_chain: Sequence[Sequence[Any]], modulus: int) -> int:
    """Left fold of ``op_chain`` starting from 0, reduced modulo ``modulus``."""
    value = 0
    for op, operand in op_chain:
        value = apply_op(value, op, operand, modulus)
    return value


def apply_op(value: int, op: str, operand: int, modulus: int) -> int:
    if op == "+":
        return (value + operand) % modulus
    if op == "-":
        return (value - operand) % modulus
    if op == "*":
        return (value * operand) % modulus
    raise ValueError(f"unknown operator {op!r}")


@dataclass(frozen=True)
class ToyQuestionSpec:
    modulus: int
    difficulty: int
    op_chain: tuple[tuple[str, int], ...]

    def __post_init__(self):
        chain = tuple((str(op), int(operand)) for op, operand in self.op_chain)
        object.__setattr__(self, "op_chain", chain)
        if self.modulus < 2:
            raise ValueError("modulus must be >= 2")
        if self.difficulty < 1 or self.difficulty != len(chain):
            raise ValueError("difficulty must equal the op_chain length and be >= 1")
        for op, operand in chain:
            if op not in OPERATORS:
                raise ValueError(f"unknown operator {op!r}")
            if not 0 <= operand < self.modulus:
                raise ValueError(f"operand {operand} outside [0, {self.modulus})")

    def answer(self) -> int:
        return fold_op_chain(self.op_chain, self.modulus)

    def to_dict(self) -> dict:
        return {"modulus": self.modulus, "difficulty": self.difficulty,
                "op_chain": [list(pair) for pair in self.op_chain]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToyQuestionSpec":
        return cls(int(d["modulus"]), int(d["difficulty"]),
                   tuple((op, operand) for op, operand in d["op_chain"]))


@dataclass(frozen=True, slots=True)
class QuestionView:
    """What a reward computation is allowed to see of a question.

    There is deliberately no ``ground_truth`` slot here.
    """

    id: str
    body: str
    source: str
    origin_id: Optional[str]
    toy_payload: Optional[ToyQuestionSpec]


@dataclass(frozen=True)
class Question:
    id: str
    body: str
    source: str = "test"
    origin_id: Optional[str] = None
    toy_payload: Optional[ToyQuestionSpec] = None
    ground_truth: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be nonempty")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.source == "variant" and not self.origin_id:
            raise ValueError(f"variant question {self.id} requires origin_id")
        if self.toy_payload is not None:
            expected = str(self.toy_payload.answer())
            if self.ground_truth is None:
                raise ValueError(f"toy question {self.id} requires ground_truth")
            if self.ground_truth != expected:
                raise ValueError(
                    f"toy question {self.id}: ground_truth {self.ground_truth!r} "
                    f"does not match folded chain {expected!r}")

    def view(self) -> QuestionView:
        return QuestionView(self.id, self.body, self.source, self.origin_id, self.toy_payload)

    def to_dict(self) -> dict:
        return {
            "id": self.id, "body": self.body, "source": self.source,
            "origin_id": self.origin_id,
            "toy_payload": None if self.toy_payload is None else self.toy_payload.to_dict(),
            "ground_truth": self.ground_truth,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Question":
        payload = d.get("toy_payload")
        return cls(
            id=str(d["id"]), body=str(d["body"]), source=d.get("source", "test"),
            origin_id=d.get("origin_id"),
            toy_payload=None if payload is None else ToyQuestionSpec.from_dict(payload),
            ground_truth=None if d.get("ground_truth") is None else str(d["ground_truth"]),
        )


def _as_float_tuple(values) -> Optional[tuple[float, ...]]:
    if values is None:
        return None
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class Trajectory:
    """One sampled response.

    ``old_logprobs``/``old_probs`` are recorded at sampling time (behaviour
    policy). ``old_probs`` holds the full per-position categorical and is only
    available for backends that expose distributions. ``context`` is whatever
    the emitting policy needs to re-score the tokens.
    """
    question_id: str
    token_ids: tuple[int, ...]
    text: str
    answer_raw: str
    answer_canonical: str
    old_logprobs: Optional[tuple[float, ...]] = None
    old_probs: Optional[tuple[tuple[float, ...], ...]] = None
    context: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        object.__setattr__(self, "old_logprobs", _as_float_tuple(self.old_logprobs))
        if self.old_probs is not None:
            object.__setattr__(self, "old_probs", tuple(_as_float_tuple(row) for row in self.old_probs))
        if self.old_logprobs is not None:
            if not self.token_ids:
                raise ValueError("a scored trajectory needs at least one token")
            if len(self.old_logprobs) != len(self.token_ids):
                raise ValueError("old_logprobs length must equal token_ids length")
            if any(v > 0 or math.isnan(v) for v in self.old_logprobs):
                raise ValueError("old_logprobs must all be <= 0")
        if self.old_probs is not None and len(self.old_probs) != len(self.token_ids):
            raise ValueError("old_probs needs one distribution per token")

    @property
    def length(self) -> int:
        return len(self.token_ids)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id, "token_ids": list(self.token_ids),
            "text": self.text, "answer_raw": self.answer_raw,
            "answer_canonical": self.answer_canonical,
            "old_logprobs": None if self.old_logprobs is None else list(self.old_logprobs),
            "old_probs": None if self.old_probs is None else [list(r) for r in self.old_probs],
            "context": _jsonable(self.context),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Trajectory":
        return cls(
            question_id=d["question_id"], token_ids=tuple(d["token_ids"]), text=d["text"],
            answer_raw=d["answer_raw"], answer_canonical=d["answer_canonical"],
            old_logprobs=d.get("old_logprobs"), old_probs=d.get("old_probs"),
            context=_from_jsonable(d.get("context") or {}),
        )


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    return obj


def _from_jsonable(obj):
    # lists come back as tuples so round trips compare equal to tuple-built contexts
    if isinstance(obj, Mapping):
        return {k: _from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return tuple(_from_jsonable(v) for v in obj)
    return obj


@dataclass(frozen=True)
class TrajectoryGroup:
    question_id: str
    trajectories: tuple[Trajectory, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    pseudo_target: str
    tie_flag: bool
    score_s: float

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "rewards", _as_float_tuple(self.rewards))
        object.__setattr__(self, "advantages", _as_float_tuple(self.advantages))
        n = len(self.trajectories)
        if not (len(self.rewards) == len(self.advantages) == n) or n == 0:
            raise ValueError("rewards, advantages and trajectories must have equal nonzero length")
        if any(r not in (0.0, 1.0) for r in self.rewards):
            raise ValueError("student rewards must be 0 or 1")
        if sum(self.rewards) / n != self.score_s:
            raise ValueError("score_s must equal the mean reward")
        if len(set(self.rewards)) == 1:
            if any(a != 0.0 for a in self.advantages):
                raise ValueError("equal rewards imply zero advantages")
        elif abs(sum(self.advantages)) > 1e-9 * max(1, n):
            raise ValueError("advantages must sum to zero")

    @property
    def size(self) -> int:
        return len(self.trajectories)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "trajectories": [t.to_dict() for t in self.trajectories],
            "rewards": list(self.rewards), "advantages": list(self.advantages),
            "pseudo_target": self.pseudo_target, "tie_flag": self.tie_flag,
            "score_s": self.score_s,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrajectoryGroup":
        return cls(
            question_id=d["question_id"],
            trajectories=tuple(Trajectory.from_dict(t) for t in d["trajectories"]),
            rewards=d["rewards"], advantages=d["advantages"],
            pseudo_target=d["pseudo_target"], tie_flag=bool(d["tie_flag"]),
            score_s=float(d["score_s"]),
        )


@dataclass(frozen=True)
class TeacherGroup:
    """Synthesis draws scored with real-valued teacher rewards."""
    trajectories: tuple[Trajectory, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]


@dataclass(frozen=True)
class FailedInstance:
    question: QuestionView
    trajectory: Trajectory
    pseudo_target: str

    def __post_init__(self):
        if self.trajectory.answer_canonical == self.pseudo_target:
            raise ValueError("a failed instance must disagree with its pseudo target")


@dataclass(frozen=True)
class ReflectionRecord:
    reasoning_weakness: str
    trigger_conditions: tuple[str, ...]
    failure_signature: tuple[str, ...]
    localization_summary: str

    def to_dict(self) -> dict:
        return {
            "reasoning_weakness": self.reasoning_weakness,
            "trigger_conditions": list(self.trigger_conditions),
            "failure_signature": list(self.failure_signature),
            "localization_summary": self.localization_summary,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReflectionRecord":
        return cls(d["reasoning_weakness"], tuple(d["trigger_conditions"]),
                   tuple(d["failure_signature"]), d["localization_summary"])


@dataclass(frozen=True)
class ErrorHittingStrategy:
    what_to_avoid: tuple[str, ...]
    what_to_add: tuple[str, ...]
    shortcut_to_block: tuple[str, ...]
    fairness_check: str


@dataclass(frozen=True)
class SelfTest:
    likely_to_trigger_weakness: str
    learnable_frontier: str
    not_surface_paraphrase: str


@dataclass(frozen=True)
class SynthesisRecord:
    anchor_structure: tuple[str, ...]
    error_hitting_strategy: ErrorHittingStrategy
    generated_question: str
    hit_rationale: tuple[str, ...]
    self_test: SelfTest

    def to_dict(self) -> dict:
        s = self.error_hitting_strategy
        return {
            "anchor_structure": list(self.anchor_structure),
            "error_hitting_strategy": {
                "what_to_avoid": list(s.what_to_avoid), "what_to_add": list(s.what_to_add),
                "shortcut_to_block": list(s.shortcut_to_block),
                "fairness_check": s.fairness_check,
            },
            "generated_question": self.generated_question,
            "hit_rationale": list(self.hit_rationale),
            "self_test": {
                "likely_to_trigger_weakness": self.self_test.likely_to_trigger_weakness,
                "learnable_frontier": self.self_test.learnable_frontier,
                "not_surface_paraphrase": self.self_test.not_surface_paraphrase,
            },
        }


@dataclass(frozen=True)
class VariantQuestion:
    question: Question
    s_score: float
    r_diff: float
    r_sim: float
    r_teacher: Optional[float]
    gated: bool = True

    def __post_init__(self):
        if self.gated and self.r_teacher is None:
            raise ValueError("gated variants carry a teacher reward")
        if not self.gated and self.r_teacher is not None:
            raise ValueError("rejected outputs have no teacher reward")
        if self.question.source != "variant":
            raise ValueError("variant questions must have source='variant'")

    def to_dict(self) -> dict:
        return {"question": self.question.to_dict(), "s_score": self.s_score,
                "r_diff": self.r_diff, "r_sim": self.r_sim,
                "r_teacher": self.r_teacher, "gated": self.gated}

    @classmethod
    def from_dict(cls, d: Mapping) -> "VariantQuestion":
        return cls(Question.from_dict(d["question"]), float(d["s_score"]), float(d["r_diff"]),
                   float(d["r_sim"]), None if d["r_teacher"] is None else float(d["r_teacher"]),
                   bool(d["gated"]))


@dataclass(frozen=True)
class IterationSnapshot:
    t: int
    training_set: tuple[str, ...]
    groups: tuple[TrajectoryGroup, ...]
    reflections: tuple[ReflectionRecord, ...]
    variants: tuple[VariantQuestion, ...]
    metrics: Mapping[str, float]
    complete: bool = True

    def __post_init__(self):
        object.__setattr__(self, "training_set", tuple(self.training_set))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "reflections", tuple(self.reflections))
        object.__setattr__(self, "variants", tuple(self.variants))
        ids = set(self.training_set)
        for v in self.variants:
            if v.question.origin_id not in ids:
                raise ValueError(
                    f"variant {v.question.id} derives from {v.question.origin_id}, "
                    f"which is not in the training set of iteration {self.t}")

    def to_dict(self) -> dict:
        return {
            "t": self.t, "training_set": list(self.training_set),
            "groups": [g.to_dict() for g in self.groups],
            "reflections": [r.to_dict() for r in self.reflections],
            "variants": [v.to_dict() for v in self.variants],
            "metrics": dict(self.metrics), "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "IterationSnapshot":
        return cls(
            t=int(d["t"]), training_set=tuple(d["training_set"]),
            groups=tuple(TrajectoryGroup.from_dict(g) for g in d["groups"]),
            reflections=tuple(ReflectionRecord.from_dict(r) for r in d["reflections"]),
            variants=tuple(VariantQuestion.from_dict(v) for v in d["variants"]),
            metrics=dict(d["metrics"]), complete=bool(d.get("complete", True)),
        )
