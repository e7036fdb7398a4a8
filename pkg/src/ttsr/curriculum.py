"""Failed-instance handling, teacher prompts and parsers, and training-set bookkeeping."""
from __future__ import annotations

import json
import re
from typing import Any, Mapping, Sequence

import numpy as np

from . import templates
from .consensus import pseudo_reward
from .types import (ErrorHittingStrategy, FailedInstance, Question, QuestionView, ReflectionRecord,
                    SelfTest, SynthesisRecord, TrajectoryGroup, VariantQuestion)

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A teacher output failed to parse; ``field`` names the offending field."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


# --------------------------------------------------------------------------
# failed instances

def collect_failed_instances(groups: Sequence[TrajectoryGroup],
                             questions: Mapping[str, QuestionView]) -> list[FailedInstance]:
    failed = []
    for group in groups:
        view = questions[group.question_id]
        if not isinstance(view, QuestionView):
            view = view.view()
        for traj, reward in zip(group.trajectories, group.rewards):
            if reward == 0:
                failed.append(FailedInstance(view, traj, group.pseudo_target))
    return failed


def sample_failed(pool: Sequence[FailedInstance], cap: int,
                  rng: np.random.Generator) -> list[FailedInstance]:
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if len(pool) <= cap:
        return list(pool)
    idx = rng.choice(len(pool), size=cap, replace=False)
    return [pool[i] for i in sorted(idx)]


# --------------------------------------------------------------------------
# prompts

def _instance_blocks(failed: Sequence[FailedInstance]) -> str:
    return "".join(templates.INSTANCE_BLOCK.format(question=f.question.body, trace=f.trajectory.text)
                   for f in failed)


def build_reflection_prompt(failed: Sequence[FailedInstance]) -> str:
    if not failed:
        raise ValueError("reflection prompt needs at least one failed instance")
    return templates.REFLECTION_HEADER + _instance_blocks(failed) + templates.REFLECTION_FOOTER


def weakness_json(reflection: ReflectionRecord) -> str:
    return json.dumps({
        "reasoning_weakness": reflection.reasoning_weakness,
        "trigger_conditions": list(reflection.trigger_conditions),
        "failure_signature": list(reflection.failure_signature),
    }, indent=2, ensure_ascii=False)


def build_synthesis_prompt(failed: Sequence[FailedInstance], reflection: ReflectionRecord) -> str:
    if not failed:
        raise ValueError("synthesis prompt needs at least one failed instance")
    if not isinstance(reflection, ReflectionRecord):
        raise TypeError("reflection must be a parsed ReflectionRecord")
    return (templates.SYNTHESIS_HEADER + _instance_blocks(failed)
            + templates.WEAKNESS_BLOCK.format(weakness_json=weakness_json(reflection))
            + templates.SYNTHESIS_STEPS + templates.SYNTHESIS_OUTPUT_REQUIREMENTS)


# --------------------------------------------------------------------------
# parsing

_FENCE_RE = re.compile(r"^```(?:json)?\s*\n(.*)\n```\s*$", re.DOTALL)


def _load_object(raw: str) -> dict:
    text = raw.strip()
    m = _FENCE_RE.match(text)
    if m:
        text = m.group(1)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<document>", f"malformed JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise SchemaError("<document>", "top level must be an object")
    return doc


def _text(doc: Mapping[str, Any], key: str, path: str = "") -> str:
    name = path + key
    if key not in doc:
        raise SchemaError(name, "missing field")
    value = doc[key]
    if not isinstance(value, str):
        raise SchemaError(name, "expected a string")
    if not value.strip():
        raise SchemaError(name, "empty value")
    return value


def _text_list(doc: Mapping[str, Any], key: str, path: str = "") -> tuple[str, ...]:
    name = path + key
    if key not in doc:
        raise SchemaError(name, "missing field")
    value = doc[key]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(name, "expected a list of strings")
    if not value or not any(v.strip() for v in value):
        raise SchemaError(name, "empty value")
    return tuple(value)


def _object(doc: Mapping[str, Any], key: str) -> Mapping[str, Any]:
    if key not in doc:
        raise SchemaError(key, "missing field")
    value = doc[key]
    if not isinstance(value, dict):
        raise SchemaError(key, "expected an object")
    return value


def parse_reflection(raw: str) -> ReflectionRecord:
    doc = _load_object(raw)
    return ReflectionRecord(
        reasoning_weakness=_text(doc, "reasoning_weakness"),
        trigger_conditions=_text_list(doc, "trigger_conditions"),
        failure_signature=_text_list(doc, "failure_signature"),
        localization_summary=_text(doc, "localization_summary"),
    )


def _verdict(doc: Mapping[str, Any], key: str) -> str:
    value = _text(doc, key, "self_test.")
    if not value.lstrip().upper().startswith(("YES", "NO")):
        raise SchemaError("self_test." + key, "must begin with YES or NO")
    return value


def parse_synthesis(raw: str) -> SynthesisRecord:
    doc = _load_object(raw)
    anchor = _text_list(doc, "anchor_structure")
    strat = _object(doc, "error_hitting_strategy")
    p = "error_hitting_strategy."
    strategy = ErrorHittingStrategy(
        what_to_avoid=_text_list(strat, "what_to_avoid", p),
        what_to_add=_text_list(strat, "what_to_add", p),
        shortcut_to_block=_text_list(strat, "shortcut_to_block", p),
        fairness_check=_text(strat, "fairness_check", p),
    )
    question = _text(doc, "generated_question").strip()
    rationale = _text_list(doc, "hit_rationale")
    st = _object(doc, "self_test")
    self_test = SelfTest(
        likely_to_trigger_weakness=_verdict(st, "likely_to_trigger_weakness"),
        learnable_frontier=_verdict(st, "learnable_frontier"),
        not_surface_paraphrase=_verdict(st, "not_surface_paraphrase"),
    )
    return SynthesisRecord(anchor, strategy, question, rationale, self_test)


# --------------------------------------------------------------------------
# training set

def build_training_set(x_test: Sequence[Question], x_var_prev: Sequence[Question]) -> tuple[Question, ...]:
    seen = set()
    out = []
    for q in list(x_test) + list(x_var_prev):
        if q.id in seen:
            raise ValueError(f"duplicate question id {q.id!r} in training set")
        seen.add(q.id)
        out.append(q)
    return tuple(out)


def admit_variants(scored: Sequence[VariantQuestion], M: int) -> tuple[VariantQuestion, ...]:
    """Keep the ``M`` highest teacher rewards; ties go to the smaller id."""
    if any(not v.gated for v in scored):
        raise ValueError("only gated variants can be admitted")
    ranked = sorted(scored, key=lambda v: (-v.r_teacher, v.question.id))
    return tuple(ranked[:M])


def failure_is_consistent(instance: FailedInstance) -> bool:
    return pseudo_reward(instance.trajectory.answer_canonical, instance.pseudo_target) == 0
