"""Desk-scale policy pair on a modular-arithmetic task family.

A toy question is a chain of ``(operator, operand)`` steps folded from 0
modulo ``p``. The student answers by choosing, at every step, one of a fixed
set of *procedures*. Three procedures compute the step correctly, the rest are
characteristic slips (skipping the step, copying the operand, applying the
wrong operator, ...). Procedure logits are a linear function of indicator
features of the step, so the student is a softmax-linear policy with a closed
form log-probability gradient.

The initial weights play the role of a pretrained model. The correct
procedures jointly hold most of the mass, but a single slip can outrank each of
them individually. Greedy decoding then goes wrong while a majority vote over
sampled answers is still right, which gives label-free self-consistency
training something to fix.

The teacher is a logit table over perturbation actions (difficulty shift and
operand reseeding style), indexed by the bucketed pseudo-correctness score of
the failed source question.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from typing import Mapping, Optional, Sequence

import numpy as np

from ..consensus import canonicalize_answer
from ..teacher import wrap_question
from ..types import (OPERATORS, FailedInstance, Question, QuestionView, ReflectionRecord,
                     ToyQuestionSpec, Trajectory, apply_op)

PROCEDURES = ("exact", "exact_regroup", "exact_recheck", "skip_step", "copy_operand",
              "wrong_operator", "off_by_one", "apply_twice")
N_CORRECT = 3
CONFUSED_OP = {"+": "*", "-": "+", "*": "+"}
OP_WORDS = {"+": "add", "-": "subtract", "*": "multiply by"}
WORD_OPS = {v: k for k, v in OP_WORDS.items()}

# pretrained prior: each correct procedure gets CORRECT_BIAS; one slip per
# operator is stronger than any single correct procedure but weaker than all three
CORRECT_BIAS = 1.5
OPERATOR_SLIPS = {"*": ("wrong_operator", 2.0), "-": ("skip_step", 1.8), "+": ("off_by_one", 1.6)}

N_OPERAND_BUCKETS = 4
# bias, operator (3), operand bucket (4), step position: first / middle / last
N_FEATURES = 1 + len(OPERATORS) + N_OPERAND_BUCKETS + 3

DIFFICULTY_SHIFTS = (-2, -1, 0, 1, 2)
RESEED_STYLES = ("keep_operands", "reseed_one", "reseed_all")
TEACHER_ACTIONS = tuple((dk, style) for style in RESEED_STYLES for dk in DIFFICULTY_SHIFTS)
N_SCORE_BUCKETS = 4

_QUESTION_RE = re.compile(r"^Modulo (\d+), starting at 0: (.+)\.$")
_STEP_RE = re.compile(r"^(add|subtract|multiply by) (\d+)$")


# --------------------------------------------------------------------------
# task family

def render_toy_question(spec: ToyQuestionSpec) -> str:
    steps = ", ".join(f"{OP_WORDS[op]} {operand}" for op, operand in spec.op_chain)
    return f"Modulo {spec.modulus}, starting at 0: {steps}."


def parse_toy_question(text: str) -> ToyQuestionSpec:
    m = _QUESTION_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a toy question: {text!r}")
    chain = []
    for part in m.group(2).split(", "):
        sm = _STEP_RE.match(part)
        if not sm:
            raise ValueError(f"cannot parse step {part!r}")
        chain.append((WORD_OPS[sm.group(1)], int(sm.group(2))))
    return ToyQuestionSpec(int(m.group(1)), len(chain), tuple(chain))


def toy_question(spec: ToyQuestionSpec, qid: str, source: str = "test",
                 origin_id: Optional[str] = None) -> Question:
    return Question(id=qid, body=render_toy_question(spec), source=source, origin_id=origin_id,
                    toy_payload=spec, ground_truth=str(spec.answer()))


def gen_toy_question(difficulty: int, modulus: int, rng: np.random.Generator,
                     qid: str = "q0") -> Question:
    if difficulty < 1 or modulus < 2:
        raise ValueError("need difficulty >= 1 and modulus >= 2")
    ops = rng.integers(len(OPERATORS), size=difficulty)
    operands = rng.integers(modulus, size=difficulty)
    chain = tuple((OPERATORS[o], int(c)) for o, c in zip(ops, operands))
    return toy_question(ToyQuestionSpec(modulus, difficulty, chain), qid)


def gen_toy_set(n: int, modulus: int, min_k: int, max_k: int, rng: np.random.Generator,
                prefix: str = "q") -> list[Question]:
    width = len(str(max(n - 1, 0)))
    out = []
    for i in range(n):
        k = int(rng.integers(min_k, max_k + 1))
        out.append(gen_toy_question(k, modulus, rng, qid=f"{prefix}{i:0{width}d}"))
    return out


def procedure_value(procedure: int, value: int, op: str, operand: int, modulus: int) -> int:
    if procedure < N_CORRECT:
        return apply_op(value, op, operand, modulus)
    name = PROCEDURES[procedure]
    if name == "skip_step":
        return value
    if name == "copy_operand":
        return operand % modulus
    if name == "wrong_operator":
        return apply_op(value, CONFUSED_OP[op], operand, modulus)
    if name == "off_by_one":
        return (apply_op(value, op, operand, modulus) + 1) % modulus
    if name == "apply_twice":
        return apply_op(apply_op(value, op, operand, modulus), op, operand, modulus)
    raise ValueError(f"unknown procedure {procedure}")


def step_features(op_chain: Sequence[Sequence], modulus: int) -> np.ndarray:
    k = len(op_chain)
    x = np.zeros((k, N_FEATURES))
    x[:, 0] = 1.0
    for t, (op, operand) in enumerate(op_chain):
        x[t, 1 + OPERATORS.index(op)] = 1.0
        x[t, 1 + len(OPERATORS) + min(operand * N_OPERAND_BUCKETS // modulus, N_OPERAND_BUCKETS - 1)] = 1.0
        pos = 0 if t == 0 else (2 if t == k - 1 else 1)
        x[t, 1 + len(OPERATORS) + N_OPERAND_BUCKETS + pos] = 1.0
    return x


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    return min(idx, len(probs) - 1)


# --------------------------------------------------------------------------
# parameters

class ToyPolicyParams:
    """Student weight matrix and teacher logit table."""

    def __init__(self, student: np.ndarray, teacher: np.ndarray):
        self.student = np.array(student, dtype=float)
        self.teacher = np.array(teacher, dtype=float)
        if self.student.shape != (len(PROCEDURES), N_FEATURES):
            raise ValueError(f"student weights must have shape {(len(PROCEDURES), N_FEATURES)}")
        if self.teacher.shape != (N_SCORE_BUCKETS, len(TEACHER_ACTIONS)):
            raise ValueError(f"teacher table must have shape {(N_SCORE_BUCKETS, len(TEACHER_ACTIONS))}")
        if not (np.all(np.isfinite(self.student)) and np.all(np.isfinite(self.teacher))):
            raise ValueError("parameters must be finite")

    @classmethod
    def pretrained(cls, rng: np.random.Generator, noise: float = 0.4) -> "ToyPolicyParams":
        w = np.zeros((len(PROCEDURES), N_FEATURES))
        w[:N_CORRECT, 0] = CORRECT_BIAS
        op_col = {op: 1 + i for i, op in enumerate(OPERATORS)}
        for op, (name, strength) in OPERATOR_SLIPS.items():
            w[PROCEDURES.index(name), op_col[op]] = strength
        w = w + noise * rng.standard_normal(w.shape)
        return cls(w, np.zeros((N_SCORE_BUCKETS, len(TEACHER_ACTIONS))))

    def copy(self) -> "ToyPolicyParams":
        return ToyPolicyParams(self.student.copy(), self.teacher.copy())

    def __eq__(self, other):
        return (isinstance(other, ToyPolicyParams) and np.array_equal(self.student, other.student)
                and np.array_equal(self.teacher, other.teacher))

    def save(self, path):
        np.savez(path, student=self.student, teacher=self.teacher)

    @classmethod
    def load(cls, path) -> "ToyPolicyParams":
        with np.load(path) as data:
            return cls(data["student"], data["teacher"])


# --------------------------------------------------------------------------
# student

class ToyStudentPolicy:
    """Softmax-linear procedure chooser. Shares its weight array with ``params``."""

    name = "student"

    def __init__(self, params: ToyPolicyParams, modulus: int, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive; use greedy() for argmax decoding")
        self._holder = params
        self.modulus = modulus
        self.temperature = temperature

    @property
    def params(self) -> np.ndarray:
        return self._holder.student

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=float)
        if value.shape != self._holder.student.shape:
            raise ValueError("student parameter shape mismatch")
        self._holder.student = value

    def describe_index(self, idx) -> str:
        return f"student.weights[procedure={PROCEDURES[idx[0]]}, feature={idx[1]}]"

    def _chain_of(self, traj_or_question) -> tuple:
        if isinstance(traj_or_question, Trajectory):
            return traj_or_question.context["op_chain"]
        payload = traj_or_question.toy_payload
        if payload is None:
            raise ValueError(f"question {traj_or_question.id} is not a toy question")
        return payload.op_chain

    def step_distributions(self, op_chain) -> np.ndarray:
        x = step_features(op_chain, self.modulus)
        return _softmax(x @ self.params.T / self.temperature)

    def distributions(self, trajectory: Trajectory) -> np.ndarray:
        return self.step_distributions(self._chain_of(trajectory))

    def score_logprobs(self, trajectory: Trajectory) -> np.ndarray:
        x = step_features(self._chain_of(trajectory), self.modulus)
        logp = _log_softmax(x @ self.params.T / self.temperature)
        return logp[np.arange(trajectory.length), np.asarray(trajectory.token_ids)]

    def logprob_gradient(self, trajectory: Trajectory, weights) -> np.ndarray:
        chain = self._chain_of(trajectory)
        x = step_features(chain, self.modulus)
        probs = _softmax(x @ self.params.T / self.temperature)
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1:
            if w.shape[0] != trajectory.length:
                raise ValueError("one weight per token is required")
            coef = np.zeros_like(probs)
            coef[np.arange(trajectory.length), np.asarray(trajectory.token_ids)] = w
        else:
            if w.shape != probs.shape:
                raise ValueError(f"weights shape {w.shape} does not match {probs.shape}")
            coef = w
        delta = coef - coef.sum(axis=1, keepdims=True) * probs
        return delta.T @ x / self.temperature

    def _trajectory(self, question: QuestionView, actions: Sequence[int],
                    probs: np.ndarray) -> Trajectory:
        chain = question.toy_payload.op_chain
        value = 0
        parts = []
        for a, (op, operand) in zip(actions, chain):
            value = procedure_value(int(a), value, op, operand, self.modulus)
            parts.append(f"{OP_WORDS[op]} {operand} -> {value}")
        answer = str(value)
        logp = np.log(probs[np.arange(len(actions)), np.asarray(actions)])
        return Trajectory(
            question_id=question.id, token_ids=tuple(int(a) for a in actions),
            text="; ".join(parts) + f"; answer {answer}", answer_raw=answer,
            answer_canonical=canonicalize_answer(answer, "toy"),
            old_logprobs=tuple(logp), old_probs=tuple(map(tuple, probs)),
            context={"op_chain": chain},
        )

    def sample(self, question: QuestionView, rng: np.random.Generator) -> Trajectory:
        probs = self.step_distributions(self._chain_of(question))
        actions = [_draw(row, rng) for row in probs]
        return self._trajectory(question, actions, probs)

    def sample_group(self, question: QuestionView, G: int, rng: np.random.Generator) -> list[Trajectory]:
        return [self.sample(question, rng) for _ in range(G)]

    def greedy(self, question: QuestionView) -> Trajectory:
        probs = self.step_distributions(self._chain_of(question))
        return self._trajectory(question, [int(np.argmax(row)) for row in probs], probs)


def toy_sample_group(params: ToyPolicyParams, question: QuestionView, G: int,
                     temperature: float, rng: np.random.Generator, modulus: Optional[int] = None):
    modulus = modulus or question.toy_payload.modulus
    return ToyStudentPolicy(params, modulus, temperature).sample_group(question, G, rng)


def toy_logprob_gradient(params: ToyPolicyParams, question: QuestionView, trajectory: Trajectory,
                         per_token_weights, temperature: float = 1.0) -> np.ndarray:
    if trajectory.context.get("op_chain") != question.toy_payload.op_chain:
        raise ValueError("trajectory was not sampled for this question")
    policy = ToyStudentPolicy(params, question.toy_payload.modulus, temperature)
    return policy.logprob_gradient(trajectory, per_token_weights)


# --------------------------------------------------------------------------
# teacher

def score_bucket(s: float) -> int:
    return min(int(s * N_SCORE_BUCKETS), N_SCORE_BUCKETS - 1)


def perturb_chain(spec: ToyQuestionSpec, dk: int, style: str,
                  rng: np.random.Generator) -> ToyQuestionSpec:
    """Variant of ``spec`` with difficulty ``k + dk`` (at least 1).

    Operators are drawn from the source's operators: a shorter chain keeps a
    subsequence, a longer one inserts extra copies. ``keep_operands`` changes
    nothing else, so with ``dk=0`` it re-emits the source verbatim (the
    trivial-paraphrase case). ``reseed_one`` changes one operand and keeps the
    order; ``reseed_all`` redraws every operand and shuffles the operator order.
    """
    p = spec.modulus
    ops = [op for op, _ in spec.op_chain]
    operands = [c for _, c in spec.op_chain]
    k = len(ops)
    new_k = max(1, k + dk)
    if new_k < k:
        keep = sorted(rng.choice(k, size=new_k, replace=False))
        ops = [ops[i] for i in keep]
        operands = [operands[i] for i in keep]
    for _ in range(new_k - k):
        pos = int(rng.integers(len(ops) + 1))
        ops.insert(pos, spec.op_chain[int(rng.integers(k))][0])
        operands.insert(pos, int(rng.integers(p)))
    if style == "keep_operands":
        pass
    elif style == "reseed_one":
        idx = int(rng.integers(new_k))
        operands[idx] = (operands[idx] + int(rng.integers(1, p))) % p
    elif style == "reseed_all":
        perm = rng.permutation(new_k)
        ops = [ops[i] for i in perm]
        operands = [int(c) for c in rng.integers(p, size=new_k)]
        if new_k == k and tuple(zip(ops, operands)) == spec.op_chain:
            operands[0] = (operands[0] + 1) % p
    else:
        raise ValueError(f"unknown reseed style {style!r}")
    return ToyQuestionSpec(p, new_k, tuple(zip(ops, operands)))


class ToyTeacherPolicy:
    """Perturbation-action table conditioned on the source's score bucket."""

    name = "teacher"

    def __init__(self, params: ToyPolicyParams):
        self._holder = params

    @property
    def params(self) -> np.ndarray:
        return self._holder.teacher

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=float)
        if value.shape != self._holder.teacher.shape:
            raise ValueError("teacher parameter shape mismatch")
        self._holder.teacher = value

    def describe_index(self, idx) -> str:
        return f"teacher.table[bucket={idx[0]}, action={TEACHER_ACTIONS[idx[1]]}]"

    def action_distribution(self, bucket: int) -> np.ndarray:
        return _softmax(self.params[bucket])

    def distributions(self, trajectory: Trajectory) -> np.ndarray:
        return self.action_distribution(trajectory.context["bucket"])[None, :]

    def score_logprobs(self, trajectory: Trajectory) -> np.ndarray:
        logp = _log_softmax(self.params[trajectory.context["bucket"]])
        return logp[np.asarray(trajectory.token_ids)]

    def logprob_gradient(self, trajectory: Trajectory, weights) -> np.ndarray:
        bucket = trajectory.context["bucket"]
        probs = self.action_distribution(bucket)
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1:
            if w.shape[0] != 1:
                raise ValueError("teacher trajectories have a single token")
            coef = np.zeros_like(probs)
            coef[trajectory.token_ids[0]] = w[0]
        else:
            if w.shape != (1, probs.shape[0]):
                raise ValueError("weights shape mismatch")
            coef = w[0]
        grad = np.zeros_like(self.params)
        grad[bucket] = coef - coef.sum() * probs
        return grad

    def synthesize(self, failed: Sequence[FailedInstance], M: int, rng: np.random.Generator,
                   source_scores: Mapping[str, float], variant_prefix: str = "v"):
        """Draw ``M`` tag-wrapped candidate questions from one anchor.

        The anchor is a single failed question drawn from ``failed`` (so a
        question with more failed traces is more likely), and every candidate
        perturbs it. Candidates and anchor then form one comparison group for
        the similarity penalty.

        Returns ``(raw_text, trajectory, source_view)`` triples; ``trajectory``
        records the sampled action and its log-probability for later updates.
        """
        if not failed:
            raise ValueError("synthesis needs at least one failed instance")
        src = failed[int(rng.integers(len(failed)))].question
        if src.toy_payload is None:
            raise ValueError(f"question {src.id} is not a toy question")
        bucket = score_bucket(source_scores.get(src.id, 0.0))
        probs = self.action_distribution(bucket)
        out = []
        for j in range(M):
            action = _draw(probs, rng)
            dk, style = TEACHER_ACTIONS[action]
            spec = perturb_chain(src.toy_payload, dk, style, rng)
            raw = wrap_question(render_toy_question(spec))
            traj = Trajectory(
                question_id=f"{variant_prefix}{j:02d}", token_ids=(action,), text=raw,
                answer_raw="", answer_canonical=canonicalize_answer("", "toy"),
                old_logprobs=(float(np.log(probs[action])),), old_probs=(tuple(probs),),
                context={"bucket": bucket, "source_id": src.id},
            )
            out.append((raw, traj, src))
        return out


def toy_synthesize_variants(params: ToyPolicyParams, failed: Sequence[FailedInstance], M: int,
                            rng: np.random.Generator, source_scores: Mapping[str, float] = None):
    return ToyTeacherPolicy(params).synthesize(failed, M, rng, source_scores or {})


# --------------------------------------------------------------------------
# reflection

_TRACE_STEP_RE = re.compile(r"^(add|subtract|multiply by) (\d+) -> (\d+)$")

_WEAKNESS_TEXT = {
    "+": "Additions are carried out with a slip instead of the exact sum.",
    "-": "Subtraction steps are dropped or misapplied, so the running value is not updated.",
    "*": "Multiplication steps are executed as a different operation.",
}


def locate_first_slip(question: QuestionView, trace: str) -> Optional[int]:
    """Index of the first trace step whose shown arithmetic does not check out."""
    spec = question.toy_payload
    value = 0
    steps = [s for s in trace.split("; ") if "->" in s]
    for t, (step, (op, operand)) in enumerate(zip(steps, spec.op_chain)):
        m = _TRACE_STEP_RE.match(step)
        if not m:
            return t
        shown = int(m.group(3))
        if shown != apply_op(value, op, operand, spec.modulus):
            return t
        value = shown
    return None


def toy_reflect(failed: Sequence[FailedInstance]) -> str:
    """Schema-shaped reflection document for a failed set, checked step by step."""
    if not failed:
        raise ValueError("reflection needs at least one failed instance")
    slips = []
    for inst in failed:
        t = locate_first_slip(inst.question, inst.trajectory.text)
        if t is not None:
            slips.append((inst.question.toy_payload.op_chain[t][0], t, len(inst.question.toy_payload.op_chain)))
    if slips:
        op_counts = Counter(op for op, _, _ in slips)
        worst = sorted(op_counts, key=lambda o: (-op_counts[o], o))[0]
        weakness = _WEAKNESS_TEXT[worst]
        late = sum(1 for _, t, k in slips if t > 0)
        summary = (f"{len(slips)} of {len(failed)} traces break at a checkable step; "
                   f"the most frequent failing step is '{OP_WORDS[worst]}'"
                   f"{' and most slips happen after the first step' if late * 2 > len(slips) else ''}.")
        triggers = [f"Chains containing '{OP_WORDS[worst]}' steps", "Long operation chains"]
        signature = [f"Result of a '{OP_WORDS[worst]}' step does not follow from its inputs",
                     "Later steps build on an unchecked intermediate value"]
    else:
        weakness = "The final answer is unstable even though every shown step checks out."
        summary = "No shown step is arithmetically wrong; the disagreement comes from inconsistent step choices."
        triggers = ["Long operation chains"]
        signature = ["Different samples take different valid-looking routes"]
    record = ReflectionRecord(weakness, tuple(triggers), tuple(signature), summary)
    return json.dumps(record.to_dict())
