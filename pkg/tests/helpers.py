"""Small builders shared by several test modules."""
from __future__ import annotations

import numpy as np

from ttsr.backends.toy import ToyPolicyParams, ToyStudentPolicy, gen_toy_set
from ttsr.types import TrajectoryGroup

from oracles import scalar_advantages


def toy_policy(seed=0, modulus=11, noise=0.4):
    params = ToyPolicyParams.pretrained(np.random.default_rng(seed), noise)
    return ToyStudentPolicy(params, modulus)


def group_from(trajs, rewards, delta=1e-4):
    rewards = tuple(int(r) for r in rewards)
    adv = tuple(scalar_advantages(rewards, delta))
    return TrajectoryGroup(trajs[0].question_id, tuple(trajs), rewards, adv, "0", False,
                           sum(rewards) / len(rewards))


def random_toy_groups(policy, rng, n_groups=3, G=4, max_k=4):
    """Groups sampled from ``policy`` with random, non-constant binary rewards."""
    questions = gen_toy_set(n_groups, policy.modulus, 1, max_k, rng)
    groups = []
    for q in questions:
        trajs = policy.sample_group(q.view(), G, rng)
        rewards = rng.integers(0, 2, size=G)
        if rewards.min() == rewards.max():
            rewards[0] = 1 - rewards[0]
        groups.append(group_from(trajs, rewards))
    return groups


def golden_inputs(data_dir):
    """Failed set and reflection used to render the golden prompts."""
    import json

    from ttsr.curriculum import parse_reflection
    from ttsr.types import FailedInstance, Question, Trajectory

    spec = json.loads((data_dir / "golden" / "inputs.json").read_text(encoding="utf-8"))
    failed = []
    for item in spec["failed"]:
        q = Question(id=item["id"], body=item["question"]).view()
        traj = Trajectory(question_id=q.id, token_ids=(), text=item["trace"],
                          answer_raw=item["answer"], answer_canonical=item["answer"])
        failed.append(FailedInstance(q, traj, item["pseudo_target"]))
    reflection = parse_reflection((data_dir / "reflection_example_output.json").read_text(encoding="utf-8"))
    return failed, reflection
