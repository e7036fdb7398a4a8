"""Rewrite the golden reflection/synthesis prompts under tests/data/golden.

Run only when a template change is intended; the tests compare byte for byte.
"""
import json
from pathlib import Path

from ttsr.curriculum import build_reflection_prompt, build_synthesis_prompt, parse_reflection
from ttsr.types import FailedInstance, Question, Trajectory

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden"


def golden_inputs():
    spec = json.loads((GOLDEN / "inputs.json").read_text())
    failed = []
    for item in spec["failed"]:
        q = Question(id=item["id"], body=item["question"]).view()
        traj = Trajectory(question_id=q.id, token_ids=(), text=item["trace"],
                          answer_raw=item["answer"], answer_canonical=item["answer"])
        failed.append(FailedInstance(q, traj, item["pseudo_target"]))
    reflection = parse_reflection((GOLDEN.parent / "reflection_example_output.json").read_text())
    return failed, reflection


def main():
    failed, reflection = golden_inputs()
    (GOLDEN / "reflection_prompt.txt").write_text(build_reflection_prompt(failed), encoding="utf-8")
    (GOLDEN / "synthesis_prompt.txt").write_text(build_synthesis_prompt(failed, reflection),
                                                 encoding="utf-8")


if __name__ == "__main__":
    main()
