"""Remote adapter against a loopback stub server; no external network."""
import json
import logging

import pytest

from ttsr.backends import RemoteBackend, RemoteEndpoint, RemoteError
from ttsr.backends.remote import API_KEY_ENV, remote_sample_group, remote_teacher_call
from ttsr.config import RunConfig, validate_config
from ttsr.curriculum import SchemaError, build_reflection_prompt, parse_reflection, parse_synthesis
from ttsr.loop import IterationError, run
from ttsr.types import Question
from conftest import DATA
from helpers import golden_inputs
from stub_server import StubServer, completion_body


def stub(name):
    path = DATA / "stub" / name
    return path.read_text(encoding="utf-8") if path.suffix == ".txt" else json.loads(path.read_text(encoding="utf-8"))


def endpoint(server, **kw):
    kw.setdefault("api_key", "sk-test")
    kw.setdefault("sleep", lambda s: None)
    return RemoteEndpoint(server.url, "stub-model", max_tokens=256, **kw)


QUESTION = Question("r0", "Let x and y be real numbers such that x + y = 10 and x^2 + y^2 = 58. "
                          "Find the maximum possible value of x.").view()


def test_wire_format_round_trip():
    with StubServer([(200, stub("student_g1.json"))]) as server:
        ep = endpoint(server, temperature=0.7)
        group = remote_sample_group(ep, QUESTION, 1)
    assert len(group) == 1
    assert group[0].answer_canonical == "7"
    assert group[0].question_id == "r0"
    req = server.requests[0]
    assert req["path"] == "/v1/chat/completions"
    assert req["headers"]["Authorization"] == "Bearer sk-test"
    body = req["json"]
    assert body["model"] == "stub-model"
    assert body["n"] == 1 and body["temperature"] == 0.7 and body["max_tokens"] == 256
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert body["messages"][1]["content"] == QUESTION.body


def test_group_answers_are_canonicalised():
    with StubServer([(200, stub("student_g4.json"))]) as server:
        group = endpoint(server).sample_group(QUESTION, 4)
    assert [t.answer_canonical for t in group] == ["7", "7", "the answer is 3", "3"]


def test_choice_count_must_match_group_size():
    with StubServer([(200, stub("student_g1.json"))]) as server:
        with pytest.raises(RemoteError, match="expected 4 choices"):
            endpoint(server).sample_group(QUESTION, 4)


def test_api_key_from_environment(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sk-env")
    with StubServer([(200, stub("student_g1.json"))]) as server:
        RemoteEndpoint(server.url, "m").sample_group(QUESTION, 1)
    assert server.requests[0]["headers"]["Authorization"] == "Bearer sk-env"
    monkeypatch.delenv(API_KEY_ENV)
    with StubServer([(200, stub("student_g1.json"))]) as server:
        RemoteEndpoint(server.url, "m").sample_group(QUESTION, 1)
    assert "Authorization" not in server.requests[0]["headers"]


def test_retries_then_succeeds(caplog):
    sleeps = []
    script = [(500, stub("error_500.json")), (500, stub("error_500.json")), (200, stub("student_g1.json"))]
    with StubServer(script) as server, caplog.at_level(logging.WARNING):
        ep = endpoint(server, sleep=sleeps.append, backoff=0.5)
        group = ep.sample_group(QUESTION, 1)
    assert group[0].answer_canonical == "7"
    assert ep.retry_count == 2
    assert len(server.requests) == 3
    assert sleeps == [0.5, 1.0]
    assert sum("retry" in r.getMessage() for r in caplog.records) == 2


def test_retries_exhausted():
    script = [(503, stub("error_500.json"))] * 3
    with StubServer(script) as server:
        ep = endpoint(server, max_retries=2)
        with pytest.raises(RemoteError, match="HTTP 503") as info:
            ep.sample_group(QUESTION, 1)
    assert info.value.question_id == "r0"
    assert len(server.requests) == 3


def test_client_errors_are_not_retried():
    with StubServer([(401, {"error": "bad key"})]) as server:
        with pytest.raises(RemoteError, match="HTTP 401"):
            endpoint(server).sample_group(QUESTION, 1)
    assert len(server.requests) == 1


def test_timeout_carries_question_id():
    with StubServer([(200, stub("student_g1.json"), 1.0)]) as server:
        ep = endpoint(server, timeout=0.2, max_retries=0)
        with pytest.raises(RemoteError, match="timed out") as info:
            ep.sample_group(QUESTION, 1)
    assert info.value.question_id == "r0"
    assert "[r0]" in str(info.value)


def test_malformed_body():
    with StubServer([(200, stub("malformed_body.txt"))]) as server:
        with pytest.raises(RemoteError, match="malformed response body"):
            endpoint(server).sample_group(QUESTION, 1)


def test_reflection_parse_path():
    failed, _ = golden_inputs(DATA)
    with StubServer([(200, stub("reflection.json"))]) as server:
        raw = remote_teacher_call(endpoint(server), build_reflection_prompt(failed))
    rec = parse_reflection(raw)
    assert rec.reasoning_weakness.startswith("When multiple valid solutions exist")
    msgs = server.requests[0]["json"]["messages"]
    assert msgs == [{"role": "user", "content": build_reflection_prompt(failed)}]


def test_non_schema_reply_fails_to_parse():
    with StubServer([(200, stub("non_schema.json"))]) as server:
        raw = remote_teacher_call(endpoint(server), "prompt")
    with pytest.raises(SchemaError):
        parse_reflection(raw)


def test_empty_completion_is_an_error():
    with StubServer([(200, stub("empty_completion.json"))]) as server:
        with pytest.raises(RemoteError, match="empty completion"):
            remote_teacher_call(endpoint(server), "prompt")


def test_synthesis_outputs_go_through_the_gate():
    failed, reflection = golden_inputs(DATA)
    synth = stub("synthesis.json")["choices"][0]["message"]["content"]
    free = stub("synthesis_tagged_free_text.json")["choices"][0]["message"]["content"]
    reply = completion_body([synth, free, "no question at all"])
    cfg = validate_config(RunConfig(backend="remote", endpoint_url="http://unused", model_name="m",
                                    questions_path=str(DATA / "remote_questions.jsonl")))
    with StubServer([(200, reply)]) as server:
        backend = RemoteBackend(cfg, endpoint(server))
        out = backend.synthesize(failed, reflection, 3, 1, {})
    assert server.requests[0]["json"]["n"] == 3
    assert out[0][0] == f"<question>{parse_synthesis(synth).generated_question}</question>"
    assert out[1][0] == free
    assert all(src.id == "ex0" and traj is None for _, traj, src in out)


def _responder(student_answers):
    synth = stub("synthesis.json")["choices"][0]["message"]["content"]
    reflection = stub("reflection.json")["choices"][0]["message"]["content"]

    def respond(body):
        msgs = body["messages"]
        n = body["n"]
        if msgs[0]["role"] == "system":
            if body["temperature"] == 0.0:
                return 200, completion_body(["\\boxed{7}"])
            return 200, completion_body([f"\\boxed{{{student_answers[i % len(student_answers)]}}}"
                                         for i in range(n)])
        if "extract a generalizable reasoning weakness" in msgs[0]["content"]:
            return 200, completion_body([reflection])
        return 200, completion_body([synth] * n)
    return respond


def _remote_cfg(server, **kw):
    return validate_config(RunConfig(
        backend="remote", endpoint_url=server.url, model_name="stub-model",
        questions_path=str(DATA / "remote_questions.jsonl"), n_iterations=2, group_size=4,
        n_variants=2, batch_size=3, eval_k=2, max_retries=0, **kw))


def test_remote_run_end_to_end(tmp_path):
    with StubServer(responder=_responder(["7", "7", "7", "3"])) as server:
        result = run(_remote_cfg(server), out_dir=tmp_path / "run")
    report = result.report
    assert len(report.iterations) == 2
    # r0 and r1 carry ground truth; the stub's greedy reply is always 7
    assert report.final_eval["greedy"] == 0.5
    snap = result.snapshots[0]
    assert snap.metrics["n_failed"] == 3
    assert snap.reflections[0].reasoning_weakness.startswith("When multiple")
    assert snap.metrics["n_candidates"] == 2 and snap.metrics["n_gated"] == 2
    assert snap.metrics["teacher_objective"] is None
    assert all(v.question.origin_id in {"r0", "r1", "r2"} for v in snap.variants)
    assert len(result.snapshots[1].training_set) == 3 + min(len(snap.variants), 2)
    assert set(("r0", "r1", "r2")) <= set(result.snapshots[1].training_set)


def test_remote_run_survives_non_schema_reflection(tmp_path):
    base = _responder(["7", "3"])
    non_schema = stub("non_schema.json")

    def respond(body):
        if "extract a generalizable reasoning weakness" in body["messages"][0]["content"]:
            return 200, non_schema
        return base(body)

    with StubServer(responder=respond) as server:
        result = run(_remote_cfg(server), out_dir=tmp_path / "run")
    assert all(s.variants == () for s in result.snapshots)
    assert all(s.complete for s in result.snapshots)


def test_remote_failure_aborts_iteration_with_partial_snapshot(tmp_path):
    from ttsr.persistence import load_snapshots

    ok = _responder(["7", "3"])
    served = []

    def respond(body):
        # the initial evaluation (two greedy and two mean@k requests) succeeds
        served.append(1)
        return ok(body) if len(served) <= 4 else (503, {"error": "down"})

    with StubServer(responder=respond) as server:
        with pytest.raises(IterationError) as info:
            run(_remote_cfg(server), out_dir=tmp_path / "run")
    assert isinstance(info.value.cause, RemoteError)
    snaps = load_snapshots(tmp_path / "run")
    assert len(snaps) == 1 and snaps[0].complete is False
    assert snaps[0].training_set == ("r0", "r1", "r2")
