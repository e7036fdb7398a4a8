import dataclasses

import numpy as np
import pytest

from ttsr.backends import STREAM_INIT, ToyBackend, stream
from ttsr.backends.toy import PROCEDURES, TEACHER_ACTIONS, ToyPolicyParams, gen_toy_set
from ttsr.config import RunConfig, validate_config
from ttsr.loop import (METRIC_KEYS, IterationError, RunState, evaluate, run, run_iteration, score_group)
from ttsr.persistence import load_snapshots
from ttsr.types import QuestionView, Trajectory


def cfg_of(**kw):
    base = dict(n_iterations=4, n_test=10, n_eval=20, group_size=6, batch_size=8, eval_k=4)
    base.update(kw)
    return validate_config(RunConfig(**base))


def metrics_stream(result):
    return [s.metrics for s in result.snapshots]


def _traj(ans):
    return Trajectory("q", (0,), ans, ans, ans, old_logprobs=(-0.1,))


def test_score_group():
    g = score_group("q", [_traj(a) for a in "7737"], 1e-4)
    assert g.pseudo_target == "7" and g.rewards == (1.0, 1.0, 0.0, 1.0) and g.score_s == 0.75
    assert abs(sum(g.advantages)) < 1e-12
    single = score_group("q", [_traj("3")], 1e-4)
    assert single.advantages == (0.0,) and single.score_s == 1.0


def test_snapshot_invariants_default_run():
    cfg = cfg_of(n_iterations=6)
    result = run(cfg)
    x_test = {f"q{i}" for i in range(cfg.n_test)}
    prev_variants = set()
    for snap in result.snapshots:
        ids = set(snap.training_set)
        assert x_test <= ids
        # only the previous iteration's admitted variants are present
        assert ids - x_test == prev_variants
        admitted = sorted(snap.variants, key=lambda v: (-v.r_teacher, v.question.id))[:cfg.n_variants]
        prev_variants = {v.question.id for v in admitted}
        assert len(prev_variants) <= cfg.n_variants
        assert all(v.question.origin_id in x_test for v in snap.variants)
        assert set(snap.metrics) == set(METRIC_KEYS)
    assert len(result.report.iterations) == cfg.n_iterations
    assert any(s.variants for s in result.snapshots)


def test_frozen_keeps_parameters_bit_identical():
    cfg = cfg_of(mode="frozen")
    backend = ToyBackend(cfg)
    initial = backend.snapshot_params()
    state = RunState(0, tuple(backend.test_set()))
    for _ in range(cfg.n_iterations):
        state, snap = run_iteration(state, cfg, backend)
        assert backend.params == initial
        assert snap.variants == () and snap.metrics["objective"] is None
    assert initial == ToyPolicyParams.pretrained(stream(cfg.seed, STREAM_INIT), cfg.init_noise)


def test_ttrl_has_no_variants():
    result = run(cfg_of(mode="ttrl"))
    for snap in result.snapshots:
        assert snap.variants == () and snap.reflections == ()
        assert snap.training_set == tuple(f"q{i}" for i in range(10))
        assert snap.metrics["n_admitted"] is None and snap.metrics["mean_r_teacher"] is None


def test_zero_failures_yield_no_variants():
    cfg = cfg_of()
    w = np.zeros((len(PROCEDURES), 11))
    w[0, 0] = 60.0  # the exact procedure always wins
    backend = ToyBackend(cfg, ToyPolicyParams(w, np.zeros((4, len(TEACHER_ACTIONS)))))
    state = RunState(0, tuple(backend.test_set()))
    state, snap = run_iteration(state, cfg, backend)
    assert snap.metrics["n_failed"] == 0
    assert snap.variants == () and state.x_var == ()
    state, snap = run_iteration(state, cfg, backend)
    assert snap.training_set == tuple(q.id for q in state.x_test)


def test_training_never_reads_ground_truth():
    cfg = cfg_of()
    honest = ToyBackend(cfg).test_set()
    poisoned = []
    for q in honest:
        q2 = dataclasses.replace(q)
        object.__setattr__(q2, "ground_truth", "-1")
        poisoned.append(q2)
    a = run(cfg, x_test=honest, evaluate_policy=False)
    b = run(cfg, x_test=poisoned, evaluate_policy=False)
    assert metrics_stream(a) == metrics_stream(b)
    assert a.backend.params == b.backend.params


def test_backend_only_sees_views():
    cfg = cfg_of(n_iterations=2)
    backend = ToyBackend(cfg)
    seen = []
    original = backend.sample_groups

    def spy(views, G, *keys):
        seen.extend(views)
        return original(views, G, *keys)

    backend.sample_groups = spy
    run(cfg, backend=backend, evaluate_policy=False)
    assert seen and all(type(v) is QuestionView for v in seen)


def test_deterministic_across_reruns_and_worker_counts():
    cfg = cfg_of()
    a = run(cfg)
    b = run(cfg)
    c = run(cfg.replace(workers=4))
    for other in (b, c):
        assert metrics_stream(a) == metrics_stream(other)
        assert [s.groups for s in a.snapshots] == [s.groups for s in other.snapshots]
        assert [s.variants for s in a.snapshots] == [s.variants for s in other.snapshots]
        assert a.backend.params == other.backend.params
        assert a.report.final_eval == other.report.final_eval


def test_zero_iterations_is_frozen_evaluation():
    cfg = cfg_of(n_iterations=0)
    result = run(cfg)
    assert result.report.iterations == []
    assert result.report.final_eval == result.report.initial_eval
    frozen = run(cfg_of(n_iterations=3, mode="frozen"))
    assert frozen.report.initial_eval == result.report.final_eval
    assert frozen.report.final_eval == result.report.final_eval


def test_no_sim_penalty_matches_ttsr_when_penalty_vanishes():
    cfg = cfg_of(sim_threshold=0.999, n_iterations=3)
    table = np.full((4, len(TEACHER_ACTIONS)), -60.0)
    table[:, [i for i, (_, style) in enumerate(TEACHER_ACTIONS) if style == "reseed_all"]] = 0.0

    def go(mode):
        c = cfg.replace(mode=mode)
        params = ToyPolicyParams.pretrained(stream(c.seed, STREAM_INIT), c.init_noise)
        params.teacher = table.copy()
        return run(c, backend=ToyBackend(c, params), evaluate_policy=False)

    full, nsp = go("ttsr"), go("no_sim_penalty")
    assert all(v.r_sim == 0.0 for s in full.snapshots for v in s.variants)
    assert any(s.variants for s in full.snapshots)
    assert metrics_stream(full) == metrics_stream(nsp)


def test_no_teacher_update_freezes_teacher_only():
    cfg = cfg_of(mode="no_teacher_update")
    result = run(cfg, evaluate_policy=False)
    init = ToyPolicyParams.pretrained(stream(cfg.seed, STREAM_INIT), cfg.init_noise)
    assert np.array_equal(result.backend.params.teacher, init.teacher)
    assert not np.array_equal(result.backend.params.student, init.student)
    assert all(s.metrics["teacher_objective"] is None for s in result.snapshots)
    full = run(cfg.replace(mode="ttsr"), evaluate_policy=False)
    assert not np.array_equal(full.backend.params.teacher, init.teacher)


def test_failure_persists_partial_snapshot(tmp_path):
    cfg = cfg_of()
    backend = ToyBackend(cfg)

    def broken(failed):
        raise RuntimeError("reflection exploded")

    backend.reflect = broken
    with pytest.raises(IterationError, match="iteration 1 failed: reflection exploded"):
        run(cfg, out_dir=tmp_path / "run", backend=backend)
    snaps = load_snapshots(tmp_path / "run")
    assert len(snaps) == 1
    assert snaps[0].complete is False and snaps[0].groups
    assert snaps[0].metrics["n_failed"] > 0 and snaps[0].metrics["n_candidates"] is None


class Perfect:
    def greedy(self, q):
        return _traj(str(q.toy_payload.answer()))

    def sample_group(self, q, k, rng):
        return [self.greedy(q)] * k


class RandomDigit:
    def greedy(self, q):
        return _traj("0")

    def sample_group(self, q, k, rng):
        return [_traj(str(d)) for d in rng.integers(10, size=k)]


def test_evaluate_reference_policies():
    qs = gen_toy_set(25, 10, 1, 4, np.random.default_rng(0))
    assert evaluate(Perfect(), qs, "greedy") == 1.0
    assert evaluate(Perfect(), qs, "mean@k", 8) == 1.0
    acc = evaluate(RandomDigit(), qs, "mean@k", 2000, np.random.default_rng(1))
    assert abs(acc - 0.1) < 0.02


def test_evaluate_errors_and_determinism():
    cfg = cfg_of()
    backend = ToyBackend(cfg)
    qs = backend.eval_set()
    assert evaluate(backend.student, qs, "greedy") == evaluate(backend.student, qs, "greedy")
    unlabeled = [dataclasses.replace(qs[0], id="x", toy_payload=None, ground_truth=None)]
    with pytest.raises(ValueError, match="ground truth"):
        evaluate(backend.student, unlabeled, "greedy")
    with pytest.raises(ValueError):
        evaluate(backend.student, [], "greedy")
    with pytest.raises(ValueError):
        evaluate(backend.student, qs, "pass@k")
