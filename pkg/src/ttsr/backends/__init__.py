"""Backend adapters giving the control loop one surface over toy and remote policies."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Optional, Sequence

import numpy as np

from ..curriculum import build_reflection_prompt, build_synthesis_prompt, parse_synthesis, SchemaError
from ..similarity import text_similarity
from ..teacher import OPEN_TAG, wrap_question
from ..types import FailedInstance, Question, QuestionView, ReflectionRecord, Trajectory
from .remote import RemoteEndpoint, RemoteError
from .toy import (ToyPolicyParams, ToyStudentPolicy, ToyTeacherPolicy, gen_toy_set,
                  parse_toy_question, toy_question, toy_reflect)

log = logging.getLogger(__name__)

# rng stream tags; every random draw in a run comes from default_rng([seed, tag, ...])
STREAM_INIT = 0
STREAM_TEST_SET = 1
STREAM_EVAL_SET = 2
STREAM_BATCH = 3
STREAM_STUDENT = 4
STREAM_FAILED = 5
STREAM_TEACHER = 6
STREAM_SCORING = 7
STREAM_EVAL = 8


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


class ToyBackend:
    kind = "toy"
    can_update = True

    def __init__(self, cfg, params: Optional[ToyPolicyParams] = None):
        self.cfg = cfg
        self.params = params if params is not None else ToyPolicyParams.pretrained(
            stream(cfg.seed, STREAM_INIT), cfg.init_noise)
        self.student = ToyStudentPolicy(self.params, cfg.modulus, cfg.temperature)
        self.teacher = ToyTeacherPolicy(self.params)

    def test_set(self) -> list[Question]:
        cfg = self.cfg
        return gen_toy_set(cfg.n_test, cfg.modulus, cfg.min_difficulty, cfg.max_difficulty,
                           stream(cfg.seed, STREAM_TEST_SET), prefix="q")

    def eval_set(self) -> list[Question]:
        cfg = self.cfg
        return gen_toy_set(cfg.n_eval, cfg.modulus, cfg.min_difficulty, cfg.max_difficulty,
                           stream(cfg.seed, STREAM_EVAL_SET), prefix="e")

    def sample_groups(self, views: Sequence[QuestionView], G: int, *keys: int) -> list[list[Trajectory]]:
        """One independent rng stream per group, so worker count never changes results."""
        seed = self.cfg.seed

        def one(i):
            return self.student.sample_group(views[i], G, stream(seed, *keys, i))

        if self.cfg.workers > 1 and len(views) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(one, range(len(views))))
        return [one(i) for i in range(len(views))]

    def reflect(self, failed: Sequence[FailedInstance]) -> str:
        return toy_reflect(failed)

    def synthesize(self, failed: Sequence[FailedInstance], reflection: ReflectionRecord, M: int,
                   t: int, source_scores: Mapping[str, float]):
        rng = stream(self.cfg.seed, STREAM_TEACHER, t)
        return self.teacher.synthesize(failed, M, rng, source_scores, variant_prefix=f"v{t:03d}-")

    def variant_question(self, text: str, vid: str, source: QuestionView) -> Question:
        return toy_question(parse_toy_question(text), vid, source="variant",
                            origin_id=source.origin_id or source.id)

    def snapshot_params(self) -> ToyPolicyParams:
        return self.params.copy()


class RemoteBackend:
    """Sampling and curriculum generation against a chat-completions endpoint."""

    kind = "remote"
    can_update = False

    def __init__(self, cfg, endpoint: Optional[RemoteEndpoint] = None):
        self.cfg = cfg
        self.endpoint = endpoint or RemoteEndpoint.from_config(cfg)
        self.student = self.endpoint
        self.teacher = None

    def test_set(self) -> list[Question]:
        from ..persistence import read_questions
        return read_questions(self.cfg.questions_path)

    def eval_set(self) -> list[Question]:
        return [q for q in self.test_set() if q.ground_truth is not None]

    def sample_groups(self, views: Sequence[QuestionView], G: int, *keys: int) -> list[list[Trajectory]]:
        return self.endpoint.sample_groups(views, G)

    def reflect(self, failed: Sequence[FailedInstance]) -> str:
        return self.endpoint.teacher_call(build_reflection_prompt(failed), n=1)[0]

    def synthesize(self, failed: Sequence[FailedInstance], reflection: ReflectionRecord, M: int,
                   t: int, source_scores: Mapping[str, float]):
        """``M`` samples of one synthesis prompt.

        Schema-valid outputs contribute their ``generated_question``; anything
        else is handed to the format gate as free text. Each candidate is
        attributed to the failed question it most resembles.
        """
        prompt = build_synthesis_prompt(failed, reflection)
        outputs = self.endpoint.teacher_call(prompt, n=M)
        sources = {f.question.id: f.question for f in failed}
        out = []
        for j, raw in enumerate(outputs):
            try:
                question = parse_synthesis(raw).generated_question
                candidate = question if OPEN_TAG in question else wrap_question(question)
            except SchemaError as exc:
                log.info("synthesis output %d is not schema-valid (%s); gating as free text", j, exc)
                candidate = raw
            src = min(sources.values(), key=lambda q: (-text_similarity(candidate, q.body), q.id))
            out.append((candidate, None, src))
        return out

    def variant_question(self, text: str, vid: str, source: QuestionView) -> Question:
        return Question(id=vid, body=text, source="variant", origin_id=source.origin_id or source.id)

    def snapshot_params(self):
        return None


def make_backend(cfg, endpoint: Optional[RemoteEndpoint] = None, params: Optional[ToyPolicyParams] = None):
    if cfg.backend == "toy":
        return ToyBackend(cfg, params)
    if cfg.backend == "remote":
        return RemoteBackend(cfg, endpoint)
    raise ValueError(f"unknown backend {cfg.backend!r}")


__all__ = ["ToyBackend", "RemoteBackend", "RemoteEndpoint", "RemoteError", "make_backend", "stream"]
