"""Regenerate the frozen oracle outputs under tests/data.

    python3 tests/freeze_oracles.py

The grid-search LP oracle needs about 15 s per 1000 instances, too slow to
run in full on every test run. Its outputs are stored together with the
instances; the test suite re-runs the oracle on a sample to keep the file honest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from oracles import lp_grid_oracle, random_lp

LP_SEED = 12345
LP_COUNT = 1000
OUT = Path(__file__).parent / "data" / "lp_oracle.json"


def freeze_lp() -> None:
    rng = np.random.default_rng(LP_SEED)
    cases = []
    for _ in range(LP_COUNT):
        n, obj, bounds, cons = random_lp(rng)
        cases.append({
            "n": n, "objective": obj, "bounds": [list(b) for b in bounds],
            "constraints": [[list(map(float, a)), rel, float(rhs)] for a, rel, rhs in cons],
            "oracle": lp_grid_oracle(n, obj, bounds, cons),
        })
    OUT.write_text(json.dumps({"seed": LP_SEED, "step": 1e-3, "cases": cases}, indent=None) + "\n")
    print(f"wrote {len(cases)} cases to {OUT}")


if __name__ == "__main__":
    freeze_lp()
