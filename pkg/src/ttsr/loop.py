"""The Student/Teacher control loop, evaluation and run driver."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backends import (STREAM_BATCH, STREAM_EVAL, STREAM_FAILED, STREAM_SCORING, STREAM_STUDENT,
                       make_backend, stream)
from .config import RunConfig, config_hash, validate_config
from .consensus import majority_vote, pseudo_reward
from .curriculum import (SchemaError, admit_variants, build_training_set, collect_failed_instances,
                         parse_reflection, sample_failed)
from .grpo import compute_group_advantages, grpo_step
from .similarity import similarity_ratio, tokenize_question
from .teacher import batch_similarity_penalties, difficulty_reward, format_gate, teacher_reward
from .types import (IterationSnapshot, Question, TeacherGroup, Trajectory,
                    TrajectoryGroup, VariantQuestion)

log = logging.getLogger(__name__)

METRIC_KEYS = (
    "training_set_size", "batch_size", "mean_reward", "mean_s", "tie_rate",
    "objective", "clip_fraction", "kl",
    "n_failed", "n_candidates", "n_gated", "acceptance_rate", "n_admitted",
    "mean_r_diff", "mean_r_sim", "mean_r_teacher", "mean_variant_sim", "mean_source_sim",
    "mean_variant_difficulty", "teacher_objective",
)


class IterationError(RuntimeError):
    def __init__(self, t: int, cause: BaseException):
        self.t = t
        self.cause = cause
        super().__init__(f"iteration {t} failed: {cause}")


@dataclass
class RunState:
    t: int
    x_test: tuple[Question, ...]
    x_var: tuple[Question, ...] = ()


@dataclass
class RunReport:
    iterations: list = field(default_factory=list)
    initial_eval: dict = field(default_factory=dict)
    final_eval: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    seed: int = 0
    config_hash: str = ""
    mode: str = "ttsr"

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "initial_eval": self.initial_eval,
                "final_eval": self.final_eval, "wall_clock": self.wall_clock, "seed": self.seed,
                "config_hash": self.config_hash, "mode": self.mode}

    @classmethod
    def from_dict(cls, d) -> "RunReport":
        return cls(list(d["iterations"]), dict(d["initial_eval"]), dict(d["final_eval"]),
                   float(d["wall_clock"]), int(d["seed"]), d["config_hash"], d["mode"])


def _mean(values) -> Optional[float]:
    values = list(values)
    return math.fsum(values) / len(values) if values else None


def score_group(question_id: str, trajectories: Sequence[Trajectory], delta: float) -> TrajectoryGroup:
    """Majority vote, binary agreement rewards and group-normalised advantages."""
    vote = majority_vote([t.answer_canonical for t in trajectories])
    rewards = [pseudo_reward(t.answer_canonical, vote.pseudo_target) for t in trajectories]
    if len(trajectories) >= 2:
        adv = compute_group_advantages(rewards, delta)
    else:
        adv = np.zeros(len(trajectories))
    return TrajectoryGroup(question_id, tuple(trajectories), tuple(float(r) for r in rewards),
                           tuple(float(a) for a in adv), vote.pseudo_target, vote.tie_flag,
                           vote.score_s)


def teacher_phase_enabled(cfg: RunConfig) -> bool:
    return cfg.mode not in ("ttrl", "frozen")


def updates_enabled(cfg: RunConfig, backend) -> bool:
    return backend.can_update and cfg.mode != "frozen"


def run_iteration(state: RunState, cfg: RunConfig, backend, writer=None):
    """Advance one test-time iteration; returns ``(next_state, snapshot)``.

    On failure the partial snapshot is persisted (when a writer is given) and
    an ``IterationError`` is raised.
    """
    t = state.t + 1
    metrics = {k: None for k in METRIC_KEYS}
    part = {"training_set": (), "groups": (), "reflections": (), "variants": ()}
    try:
        d_t = build_training_set(state.x_test, state.x_var)
        part["training_set"] = tuple(q.id for q in d_t)
        metrics["training_set_size"] = len(d_t)

        n_batch = min(cfg.batch_size, len(d_t))
        picked = sorted(stream(cfg.seed, STREAM_BATCH, t).choice(len(d_t), size=n_batch, replace=False))
        batch = [d_t[i] for i in picked]
        views = [q.view() for q in batch]
        metrics["batch_size"] = n_batch

        samples = backend.sample_groups(views, cfg.group_size, STREAM_STUDENT, t)
        groups = [score_group(v.id, trajs, cfg.adv_eps) for v, trajs in zip(views, samples)]
        part["groups"] = tuple(groups)
        metrics["mean_reward"] = _mean(r for g in groups for r in g.rewards)
        metrics["mean_s"] = _mean(g.score_s for g in groups)
        metrics["tie_rate"] = _mean(float(g.tie_flag) for g in groups)

        if updates_enabled(cfg, backend):
            report = grpo_step(backend.student, groups, learning_rate=cfg.learning_rate,
                               epsilon=cfg.clip_eps, beta=cfg.kl_coef)
            metrics["objective"] = report.objective
            metrics["clip_fraction"] = report.clip_fraction
            metrics["kl"] = report.kl_value

        x_var = ()
        if teacher_phase_enabled(cfg):
            x_var, variants, reflections = _teacher_phase(t, cfg, backend, groups, views, metrics)
            part["variants"] = variants
            part["reflections"] = reflections

        snapshot = IterationSnapshot(t, part["training_set"], part["groups"], part["reflections"],
                                     part["variants"], metrics)
    except Exception as exc:
        if writer is not None:
            partial = IterationSnapshot(t, part["training_set"], part["groups"], part["reflections"],
                                        part["variants"], metrics, complete=False)
            writer.write_snapshot(partial)
        raise IterationError(t, exc) from exc

    if writer is not None:
        writer.write_snapshot(snapshot)
    return RunState(t, state.x_test, x_var), snapshot


def _teacher_phase(t, cfg, backend, groups, views, metrics):
    by_id = {v.id: v for v in views}
    failed = collect_failed_instances(groups, by_id)
    metrics["n_failed"] = len(failed)
    if not failed:
        return (), (), ()
    sampled = sample_failed(failed, cfg.max_failed, stream(cfg.seed, STREAM_FAILED, t))

    raw_reflection = backend.reflect(sampled)
    try:
        reflection = parse_reflection(raw_reflection)
    except SchemaError as exc:
        log.warning("iteration %d: reflection output rejected (%s); no variants this round", t, exc)
        return (), (), ()

    scores = {g.question_id: g.score_s for g in groups}
    candidates = backend.synthesize(sampled, reflection, cfg.n_variants, t, scores)
    metrics["n_candidates"] = len(candidates)

    gated = []
    for j, (raw, traj, src) in enumerate(candidates):
        verdict = format_gate(raw)
        if not verdict.accepted:
            log.info("iteration %d: candidate %d rejected (%s)", t, j, verdict.reason)
            continue
        try:
            question = backend.variant_question(verdict.text, f"v{t:03d}-{j:02d}", src)
        except ValueError as exc:
            log.info("iteration %d: candidate %d unusable (%s)", t, j, exc)
            continue
        gated.append((question, traj, src))
    metrics["n_gated"] = len(gated)
    metrics["acceptance_rate"] = len(gated) / len(candidates) if candidates else None
    if not gated:
        return (), (), (reflection,)

    # difficulty from fresh rollouts under the updated student
    rollouts = backend.sample_groups([q.view() for q, _, _ in gated], cfg.group_size, STREAM_SCORING, t)
    s_scores = [majority_vote([tr.answer_canonical for tr in trajs]).score_s for trajs in rollouts]
    r_diff = [difficulty_reward(s) for s in s_scores]

    cand_tokens = [tokenize_question(q.body) for q, _, _ in gated]
    src_tokens = [tokenize_question(src.body) for _, _, src in gated]
    r_sim = batch_similarity_penalties(cand_tokens, src_tokens, cfg.sim_threshold)
    lam = 0.0 if cfg.mode == "no_sim_penalty" else cfg.sim_penalty
    r_t = [teacher_reward(d, s, lam) for d, s in zip(r_diff, r_sim)]

    variants = tuple(VariantQuestion(q, s, d, p, r, True)
                     for (q, _, _), s, d, p, r in zip(gated, s_scores, r_diff, r_sim, r_t))
    metrics["mean_r_diff"] = _mean(r_diff)
    metrics["mean_r_sim"] = _mean(r_sim)
    metrics["mean_r_teacher"] = _mean(r_t)
    metrics["mean_source_sim"] = _mean(similarity_ratio(c, s) for c, s in zip(cand_tokens, src_tokens))
    if len(cand_tokens) >= 2:
        metrics["mean_variant_sim"] = _mean(similarity_ratio(cand_tokens[i], cand_tokens[j])
                                            for i in range(len(cand_tokens))
                                            for j in range(len(cand_tokens)) if i != j)
    payloads = [q.toy_payload for q, _, _ in gated if q.toy_payload is not None]
    if payloads:
        metrics["mean_variant_difficulty"] = _mean(p.difficulty for p in payloads)

    teacher_trajs = [traj for _, traj, _ in gated]
    if (backend.can_update and cfg.mode != "no_teacher_update" and len(gated) >= 2
            and all(tr is not None for tr in teacher_trajs)):
        adv = compute_group_advantages(r_t, cfg.adv_eps)
        group = TeacherGroup(tuple(teacher_trajs), tuple(r_t), tuple(float(a) for a in adv))
        report = grpo_step(backend.teacher, [group], learning_rate=cfg.teacher_learning_rate,
                           epsilon=cfg.clip_eps, beta=cfg.kl_coef)
        metrics["teacher_objective"] = report.objective

    admitted = admit_variants(variants, cfg.n_variants)
    metrics["n_admitted"] = len(admitted)
    return tuple(v.question for v in admitted), variants, (reflection,)


def evaluate(policy, eval_set: Sequence[Question], mode: str = "greedy", k: int = 1,
             rng: Optional[np.random.Generator] = None) -> float:
    """Accuracy against ground truth: greedy pass@1 or mean@k over ``k`` samples."""
    if not eval_set:
        raise ValueError("empty evaluation set")
    missing = [q.id for q in eval_set if q.ground_truth is None]
    if missing:
        raise ValueError(f"evaluation needs ground truth; missing for {missing[:5]}")
    if mode == "greedy":
        hits = [policy.greedy(q.view()).answer_canonical == q.ground_truth for q in eval_set]
        return sum(hits) / len(hits)
    if mode in ("mean@k", "mean"):
        if k < 1:
            raise ValueError("k must be at least 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        fractions = []
        for q in eval_set:
            trajs = policy.sample_group(q.view(), k, rng)
            fractions.append(sum(t.answer_canonical == q.ground_truth for t in trajs) / k)
        return math.fsum(fractions) / len(fractions)
    raise ValueError(f"unknown evaluation mode {mode!r}")


def evaluate_all(backend, cfg: RunConfig, eval_set) -> dict:
    if not eval_set:
        return {}
    return {
        "greedy": evaluate(backend.student, eval_set, "greedy"),
        f"mean@{cfg.eval_k}": evaluate(backend.student, eval_set, "mean@k", cfg.eval_k,
                                       stream(cfg.seed, STREAM_EVAL)),
    }


@dataclass
class RunResult:
    report: RunReport
    snapshots: list
    backend: object


def run(cfg: RunConfig, out_dir=None, backend=None, writer=None, x_test=None,
        evaluate_policy: bool = True) -> RunResult:
    """Execute ``cfg.n_iterations`` iterations from the configured seed.

    ``x_test`` overrides the backend's test set. With ``evaluate_policy``
    false the held-out evaluation is skipped and both evaluations are empty.
    """
    from .persistence import RunWriter

    cfg = validate_config(cfg)
    backend = backend or make_backend(cfg)
    if writer is None and out_dir is not None:
        writer = RunWriter(out_dir)
    if writer is not None:
        writer.write_config(cfg)

    started = time.perf_counter()
    x_test = tuple(backend.test_set() if x_test is None else x_test)
    eval_set = backend.eval_set() if evaluate_policy else []
    report = RunReport(seed=cfg.seed, config_hash=config_hash(cfg), mode=cfg.mode)
    report.initial_eval = evaluate_all(backend, cfg, eval_set)

    state = RunState(0, x_test)
    snapshots = []
    try:
        for _ in range(cfg.n_iterations):
            state, snap = run_iteration(state, cfg, backend, writer)
            snapshots.append(snap)
            report.iterations.append(dict(snap.metrics))
            log.info("iteration %d: mean_s=%.3f n_admitted=%s", snap.t,
                     snap.metrics["mean_s"] or 0.0, snap.metrics["n_admitted"])
        report.final_eval = evaluate_all(backend, cfg, eval_set)
    finally:
        report.wall_clock = time.perf_counter() - started
        if writer is not None:
            writer.write_report(report, backend.snapshot_params())
    return RunResult(report, snapshots, backend)
