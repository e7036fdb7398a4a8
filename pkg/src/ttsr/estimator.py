"""scikit-learn style wrapper around a toy test-time run."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig, validate_config
from .loop import evaluate, run
from .validation import check_answers, check_questions


class TTSRSolver(BaseEstimator):
    """Adapts a toy policy to unlabeled questions, then answers them.

    ``fit(X)`` treats ``X`` as the unlabeled test set (ground truth, if
    present, is never read by training). Without ``X`` the configured toy
    test set is generated from ``seed``. ``predict`` returns greedy answers;
    ``score`` returns greedy accuracy against ``y`` or the questions' own
    ground truth.

    Examples
    --------
    >>> solver = TTSRSolver(n_iterations=2, n_test=8, seed=0).fit()
    >>> len(solver.report_.iterations)
    2
    """

    def __init__(self, group_size=8, n_variants=4, n_iterations=20, batch_size=16,
                 clip_eps=0.2, kl_coef=0.001, sim_penalty=1.0, sim_threshold=0.75,
                 learning_rate=1.0, teacher_learning_rate=None, mode="ttsr", seed=0,
                 temperature=1.0, modulus=97, n_test=32, min_difficulty=1, max_difficulty=6,
                 init_noise=0.4, workers=1):
        self.group_size = group_size
        self.n_variants = n_variants
        self.n_iterations = n_iterations
        self.batch_size = batch_size
        self.clip_eps = clip_eps
        self.kl_coef = kl_coef
        self.sim_penalty = sim_penalty
        self.sim_threshold = sim_threshold
        self.learning_rate = learning_rate
        self.teacher_learning_rate = teacher_learning_rate
        self.mode = mode
        self.seed = seed
        self.temperature = temperature
        self.modulus = modulus
        self.n_test = n_test
        self.min_difficulty = min_difficulty
        self.max_difficulty = max_difficulty
        self.init_noise = init_noise
        self.workers = workers

    def _config(self) -> RunConfig:
        params = self.get_params()
        return validate_config(RunConfig(backend="toy", n_eval=1, **params))

    def fit(self, X=None, y=None, out_dir=None):
        """Run the test-time loop; ``y`` is accepted for API symmetry and ignored."""
        cfg = self._config()
        x_test = None if X is None else check_questions(X, modulus=cfg.modulus)
        if x_test is not None and any(q.toy_payload is None for q in x_test):
            raise ValueError("TTSRSolver trains the toy policy and needs toy questions")
        result = run(cfg, out_dir=out_dir, x_test=x_test, evaluate_policy=False)
        self.config_ = cfg
        self.report_ = result.report
        self.snapshots_ = result.snapshots
        self.policy_ = result.backend.student
        self.params_ = result.backend.snapshot_params()
        self.n_features_in_ = 1
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        questions = check_questions(X, modulus=self.config_.modulus)
        return np.array([self.policy_.greedy(q.view()).answer_canonical for q in questions],
                        dtype=object)

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "policy_")
        questions = check_questions(X, require_ground_truth=y is None, modulus=self.config_.modulus)
        if y is None:
            return evaluate(self.policy_, questions, "greedy")
        truth = check_answers(y, len(questions))
        pred = self.predict(questions)
        return float(np.mean([p == t for p, t in zip(pred, truth)]))
