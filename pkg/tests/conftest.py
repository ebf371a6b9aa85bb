"""Shared fixtures: the full-scale seeded experiment used by the acceptance
suite and the CLI pipeline test runs once per session."""

import json
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from rlad.cli import run_cli

# the documented full-scale experiment: 10k points, 0.3% anomalies, seed 7,
# scripted oracle, human-label budget at 1% of the training windows
EXPERIMENT = {
    "n": 10_000,
    "rate": 0.003,
    "data_seed": 7,
    "window_size": 25,
    "split_ratio": 0.8,
    "episodes": 100,
    "config": {
        "window_size": 25,
        "episodes": 100,
        "hidden_size": 16,
        "lp_sigma": 0.15,
        "lp_pool_cap": 1200,
        "max_steps_per_episode": 256,
        "seed": 7,
    },
}


def _budget_cap() -> int:
    n_train = int(math.floor(EXPERIMENT["n"] * EXPERIMENT["split_ratio"]))
    n_train_windows = n_train - EXPERIMENT["window_size"] + 1
    return int(0.01 * n_train_windows)


@dataclass
class BigRun:
    run_dir: Path
    data_path: Path
    preds_path: Path
    train_seconds: float
    budget_cap: int
    evaluate_stdout: str


@pytest.fixture(scope="session")
def big_run(tmp_path_factory) -> BigRun:
    """Full pipeline through the CLI: generate -> train -> predict -> evaluate."""
    root = tmp_path_factory.mktemp("experiment")
    data = root / "series.csv"
    run_dir = root / "run"
    preds = root / "preds.csv"
    budget = _budget_cap()

    assert run_cli([
        "generate", "--kind", "spike",
        "--n", str(EXPERIMENT["n"]),
        "--rate", str(EXPERIMENT["rate"]),
        "--seed", str(EXPERIMENT["data_seed"]),
        "--out", str(data),
    ]) == 0

    cfg_file = root / "config.json"
    cfg = dict(EXPERIMENT["config"])
    cfg["budget_cap"] = budget
    cfg_file.write_text(json.dumps(cfg))

    started = time.time()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = run_cli([
            "train", "--data", str(data), "--format", "yahoo",
            "--oracle", "scripted", "--config", str(cfg_file),
            "--out", str(run_dir), "--quiet",
        ])
    train_seconds = time.time() - started
    assert code == 0

    assert run_cli([
        "predict", "--model", str(run_dir), "--data", str(data), "--out", str(preds),
    ]) == 0

    import io
    import contextlib

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert run_cli(["evaluate", "--preds", str(preds), "--data", str(data)]) == 0

    return BigRun(
        run_dir=run_dir,
        data_path=data,
        preds_path=preds,
        train_seconds=train_seconds,
        budget_cap=budget,
        evaluate_stdout=buf.getvalue(),
    )
