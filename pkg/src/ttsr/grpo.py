"""Group-relative advantages and the clipped surrogate objective with exact gradients.

Any policy works here as long as it provides:

``params``
    a numpy array (readable and assignable),
``distributions(trajectory)``
    the current categorical distribution at each token position,
    shape ``(len, n_actions)``,
``logprob_gradient(trajectory, weights)``
    the gradient of ``sum_t weights[t] * log pi(y_t)`` when ``weights`` is
    1-D, or of ``sum_{t,a} weights[t, a] * log pi(a | t)`` when 2-D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np


class GradientPolicy(Protocol):
    params: np.ndarray

    def distributions(self, trajectory) -> np.ndarray: ...

    def logprob_gradient(self, trajectory, weights) -> np.ndarray: ...


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, block: str):
        self.block = block
        super().__init__(f"non-finite gradient in parameter block {block}; step aborted")


def compute_group_advantages(rewards: Sequence[float], delta: float = 1e-4) -> np.ndarray:
    """``(R_i - mean) / (std + delta)`` with the population standard deviation."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("group too small: advantages need at least two rewards")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    centered = r - r.mean()
    return centered / (r.std() + delta)


def token_ratio(new_logprob: float, old_logprob: float) -> float:
    if not (math.isfinite(new_logprob) and math.isfinite(old_logprob)):
        raise ValueError("log-probabilities must be finite")
    return math.exp(new_logprob - old_logprob)


def clipped_term(ratio: float, advantage: float, epsilon: float) -> float:
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def _check_distribution(p: np.ndarray, name: str):
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError(f"{name} rows must be probability vectors")


def _kl_rows(new: np.ndarray, old: np.ndarray) -> np.ndarray:
    """Row-wise KL(new || old) with 0 log 0 = 0."""
    if np.any((old == 0) & (new > 0)):
        raise ValueError("absolute continuity violated: old has zero mass where new is positive")
    pos = new > 0
    terms = np.zeros_like(new)
    terms[pos] = new[pos] * (np.log(new[pos]) - np.log(old[pos]))
    return terms.sum(axis=-1)


def kl_divergence(new_dist, old_dist) -> float:
    """Exact categorical KL(new || old); averaged over positions for 2-D input."""
    new = np.atleast_2d(np.asarray(new_dist, dtype=float))
    old = np.atleast_2d(np.asarray(old_dist, dtype=float))
    if new.shape != old.shape:
        raise ValueError("distributions must share the same support size")
    _check_distribution(new, "new_dist")
    _check_distribution(old, "old_dist")
    return float(_kl_rows(new, old).mean())


@dataclass
class SurrogateReport:
    objective: float
    surrogate: float
    per_token_terms: list  # groups -> trajectories -> per-token array
    clip_fraction: float
    kl_value: float
    gradient: np.ndarray
    n_tokens: int


def grpo_objective(groups: Sequence, policy: GradientPolicy, epsilon: float,
                   beta: float) -> SurrogateReport:
    """Clipped surrogate minus ``beta`` times KL to the sampling policy.

    Each token is weighted by ``1 / (n_groups * G * |y_i|)`` so the objective is
    the mean over groups of the per-group average of per-response token means.
    """
    if not groups:
        raise ValueError("no groups to optimise")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    grad = np.zeros_like(policy.params, dtype=float)
    surrogate = 0.0
    kl_total = 0.0
    n_tokens = 0
    n_clipped = 0
    per_token = []
    n_groups = len(groups)
    lo, hi = 1.0 - epsilon, 1.0 + epsilon

    for group in groups:
        trajs = group.trajectories
        g_size = len(trajs)
        group_terms = []
        for traj, adv in zip(trajs, group.advantages):
            if traj.old_logprobs is None:
                raise ValueError(f"trajectory for {traj.question_id} has no behaviour log-probs")
            probs = np.asarray(policy.distributions(traj), dtype=float)
            tokens = np.asarray(traj.token_ids, dtype=int)
            if probs.shape[0] != len(tokens) or len(traj.old_logprobs) != len(tokens):
                raise ValueError(
                    f"token count mismatch for {traj.question_id}: "
                    f"{probs.shape[0]} new vs {len(traj.old_logprobs)} old")
            old_lp = np.asarray(traj.old_logprobs)
            new_lp = np.log(probs[np.arange(len(tokens)), tokens])
            ratio = np.exp(new_lp - old_lp)
            unclipped = ratio * adv
            clipped = np.clip(ratio, lo, hi) * adv
            terms = np.minimum(unclipped, clipped)
            clip_active = clipped < unclipped
            weight = 1.0 / (n_groups * g_size * len(tokens))

            surrogate += weight * float(terms.sum())
            n_tokens += len(tokens)
            n_clipped += int(clip_active.sum())
            group_terms.append(terms)

            # d(ratio)/d(theta) = ratio * dlogpi; clipped branch has zero slope
            w_tok = np.where(clip_active, 0.0, weight * adv * ratio)
            if np.any(w_tok != 0):
                grad += policy.logprob_gradient(traj, w_tok)

            if beta != 0.0 or traj.old_probs is not None:
                if traj.old_probs is None:
                    raise ValueError("KL term needs the sampling-time distributions")
                old = np.asarray(traj.old_probs)
                if old.shape != probs.shape:
                    raise ValueError(f"token count mismatch for {traj.question_id} distributions")
                kl_rows = _kl_rows(probs, old)
                kl_total += weight * float(kl_rows.sum())
                if beta != 0.0:
                    # grad KL_t = sum_a pi_a (log pi_a - log old_a) grad log pi_a
                    log_ratio = np.zeros_like(probs)
                    pos = probs > 0
                    log_ratio[pos] = np.log(probs[pos]) - np.log(old[pos])
                    coef = -beta * weight * probs * log_ratio
                    if np.any(coef != 0):
                        grad += policy.logprob_gradient(traj, coef)
        per_token.append(group_terms)

    return SurrogateReport(
        objective=surrogate - beta * kl_total,
        surrogate=surrogate,
        per_token_terms=per_token,
        clip_fraction=n_clipped / n_tokens if n_tokens else 0.0,
        kl_value=kl_total,
        gradient=grad,
        n_tokens=n_tokens,
    )


def _locate_nonfinite(policy, grad: np.ndarray) -> str:
    idx = tuple(int(i) for i in np.unravel_index(int(np.flatnonzero(~np.isfinite(grad))[0]), grad.shape))
    name = getattr(policy, "name", "params")
    describe = getattr(policy, "describe_index", None)
    return describe(idx) if describe else f"{name}{list(idx)}"


def grpo_step(policy: GradientPolicy, groups: Sequence, *, learning_rate: float,
              epsilon: float, beta: float) -> SurrogateReport:
    """One plain gradient-ascent step; the report describes the pre-step point."""
    report = grpo_objective(groups, policy, epsilon, beta)
    grad = report.gradient
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(_locate_nonfinite(policy, grad))
    if learning_rate != 0.0 and np.any(grad != 0):
        policy.params = policy.params + learning_rate * grad
    return report
