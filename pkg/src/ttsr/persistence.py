"""Run-directory layout: append-only JSONL artifacts, a metrics CSV, and replay."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Iterable

from .config import RunConfig, config_from_mapping
from .types import IterationSnapshot, Question

SCHEMA_VERSION = 1

CONFIG_FILE = "config.json"
ITERATIONS_FILE = "iterations.jsonl"
TRAJECTORIES_FILE = "trajectories.jsonl"
CURRICULUM_FILE = "curriculum.jsonl"
METRICS_FILE = "metrics.csv"
EVALUATION_FILE = "evaluation.json"
PARAMS_FILE = "params_final.npz"


class PersistenceError(OSError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, allow_nan=False)


class RunWriter:
    """Owns one run directory. Refuses to write into a directory that already holds a run."""

    def __init__(self, run_dir):
        from .loop import METRIC_KEYS

        self.run_dir = Path(run_dir)
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"cannot create run directory {self.run_dir}: {exc}") from exc
        if any(self.run_dir.iterdir()):
            raise PersistenceError(f"run directory {self.run_dir} is not empty")
        self.metric_keys = ("t", "complete") + tuple(METRIC_KEYS)

    def _append(self, name: str, lines: Iterable[str]):
        try:
            with open(self.run_dir / name, "a", encoding="utf-8") as fh:
                for line in lines:
                    fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise PersistenceError(f"failed writing {name} in {self.run_dir}: {exc}") from exc

    def write_config(self, cfg: RunConfig):
        from .config import config_hash
        doc = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "config_hash": config_hash(cfg)}
        self._write_whole(CONFIG_FILE, json.dumps(doc, indent=2, sort_keys=True))

    def _write_whole(self, name: str, text: str):
        try:
            (self.run_dir / name).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise PersistenceError(f"failed writing {name} in {self.run_dir}: {exc}") from exc

    def write_snapshot(self, snap: IterationSnapshot):
        record = snap.to_dict()
        groups = record.pop("groups")
        traj_lines = []
        for gi, group in enumerate(groups):
            for ti, traj in enumerate(group.pop("trajectories")):
                traj_lines.append(_dumps({"schema_version": SCHEMA_VERSION, "t": snap.t,
                                          "group": gi, "index": ti, "trajectory": traj}))
        record["groups"] = groups
        record["schema_version"] = SCHEMA_VERSION
        self._append(TRAJECTORIES_FILE, traj_lines)
        self._append(CURRICULUM_FILE, [_dumps({"schema_version": SCHEMA_VERSION, "t": snap.t, **v})
                                       for v in record["variants"]])
        self._append(ITERATIONS_FILE, [_dumps(record)])
        self._append_metrics(snap)

    def _append_metrics(self, snap: IterationSnapshot):
        path = self.run_dir / METRICS_FILE
        new = not path.exists()
        row = {"t": snap.t, "complete": int(snap.complete)}
        row.update({k: ("" if v is None else repr(float(v))) for k, v in snap.metrics.items()})
        try:
            with open(path, "a", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=self.metric_keys)
                if new:
                    writer.writeheader()
                writer.writerow(row)
        except OSError as exc:
            raise PersistenceError(f"failed writing {METRICS_FILE}: {exc}") from exc

    def write_report(self, report, params=None):
        doc = report.to_dict()
        doc.pop("iterations")
        doc["schema_version"] = SCHEMA_VERSION
        self._write_whole(EVALUATION_FILE, json.dumps(doc, indent=2, sort_keys=True))
        if params is not None:
            params.save(self.run_dir / PARAMS_FILE)


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PersistenceError(f"{path.name} line {n}: {exc.msg}") from exc
            version = rec.get("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise PersistenceError(f"{path.name} line {n}: unsupported schema version {version}")
            out.append(rec)
    return out


def load_config(run_dir) -> RunConfig:
    path = Path(run_dir) / CONFIG_FILE
    if not path.exists():
        raise PersistenceError(f"{run_dir} has no {CONFIG_FILE}; not a run directory")
    doc = json.loads(path.read_text(encoding="utf-8"))
    return config_from_mapping(doc["config"])


def load_snapshots(run_dir) -> list[IterationSnapshot]:
    run_dir = Path(run_dir)
    records = _read_jsonl(run_dir / ITERATIONS_FILE)
    trajs: dict = {}
    for rec in _read_jsonl(run_dir / TRAJECTORIES_FILE):
        trajs.setdefault((rec["t"], rec["group"]), []).append((rec["index"], rec["trajectory"]))
    snaps = []
    for rec in records:
        for gi, group in enumerate(rec["groups"]):
            group["trajectories"] = [t for _, t in sorted(trajs.get((rec["t"], gi), []),
                                                          key=lambda item: item[0])]
        snaps.append(IterationSnapshot.from_dict(rec))
    return snaps


def load_report(run_dir):
    """Rebuild the RunReport from the iteration records and the evaluation file."""
    from .loop import RunReport

    run_dir = Path(run_dir)
    path = run_dir / EVALUATION_FILE
    if not path.exists():
        raise PersistenceError(f"{run_dir} has no {EVALUATION_FILE}; the run did not finish")
    doc = json.loads(path.read_text(encoding="utf-8"))
    iterations = [rec["metrics"] for rec in _read_jsonl(run_dir / ITERATIONS_FILE)]
    doc.pop("schema_version", None)
    return RunReport.from_dict({**doc, "iterations": iterations})


def load_params(run_dir):
    from .backends.toy import ToyPolicyParams

    path = Path(run_dir) / PARAMS_FILE
    if not path.exists():
        return None
    return ToyPolicyParams.load(path)


def read_questions(path) -> list[Question]:
    """Questions from a JSONL file; bare ``{"id", "body"}`` lines default to source=test."""
    if path is None:
        raise PersistenceError("no questions file configured")
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"questions file {path} does not exist")
    out = []
    for rec in _read_jsonl(path):
        rec.pop("schema_version", None)
        rec.setdefault("source", "test")
        out.append(Question.from_dict(rec))
    if not out:
        raise PersistenceError(f"questions file {path} is empty")
    return out


def write_questions(path, questions: Iterable[Question]):
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(_dumps(q.to_dict()) + "\n")
