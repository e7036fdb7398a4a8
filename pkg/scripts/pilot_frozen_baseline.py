"""Record the frozen-policy held-out accuracy for the acceptance seeds.

The directional end-to-end check compares adapted runs against these
numbers, so they are produced by a pilot run and committed rather than
asserted from elsewhere.
"""
import json
from pathlib import Path

from ttsr.config import RunConfig, config_hash, validate_config
from ttsr.loop import run

SEEDS = (0, 1, 2, 3, 4)
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "pilot_frozen_baseline.json"


def main():
    rows = {}
    for seed in SEEDS:
        cfg = validate_config(RunConfig(mode="frozen", seed=seed))
        report = run(cfg).report
        rows[str(seed)] = {"config_hash": config_hash(cfg), **report.final_eval}
    doc = {"schema_version": 1, "metric": "held-out accuracy of the unadapted toy policy",
           "seeds": rows}
    OUT.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
