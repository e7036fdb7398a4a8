import json
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
DATA = TESTS / "data"
sys.path.insert(0, str(TESTS))


def load_json(name):
    return json.loads((DATA / name).read_text(encoding="utf-8"))


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def small_cfg():
    from ttsr.config import RunConfig, validate_config
    return validate_config(RunConfig(n_iterations=3, n_test=8, n_eval=20, group_size=4,
                                     batch_size=6, eval_k=4))
