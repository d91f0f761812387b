"""Multi-seed runs, the lambda sweep and the desk budget on the synthetic
detail set; minutes of CPU time.

Run with ``pytest -m slow``.
"""
import time

import numpy as np
import pytest

from mbf_amen.cli import run_command
from mbf_amen.data import gen_synthetic, split
from mbf_amen.parser import parsed_to_config
from mbf_amen.pipeline import SWEEP_LAMBDAS, run_pipeline, sweep_lambda

SEEDS = range(5)


@pytest.fixture(autouse=True)
def all_workers(monkeypatch):
    monkeypatch.delenv("AMEN_THREADS", raising=False)


@pytest.mark.slow
def test_fusion_and_later_scales_do_not_hurt():
    fused_wins = 0
    oa = []
    for seed in SEEDS:
        dataset = gen_synthetic(400, image_size=32, detail_size=5, noise=0.05, seed=seed)
        config = parsed_to_config({"scales": 3, "seed": seed}, "desk")
        train, eval_ = split(dataset, config.eval_fraction, seed)
        result = run_pipeline(train, eval_, config)
        per_scale = [m.oa for m in result.scale_metrics]
        oa.append(per_scale)
        if result.fused_metrics.oa >= per_scale[0]:
            fused_wins += 1
    assert fused_wins >= 4
    mean = np.mean(oa, axis=0)
    assert mean[1] >= mean[0] - 0.02
    assert mean[2] >= mean[1] - 0.02


@pytest.mark.slow
def test_lambda_sweep_is_stable():
    dataset = gen_synthetic(400, image_size=32, detail_size=5, noise=0.05, seed=0)
    config = parsed_to_config({"scales": 3, "seed": 0}, "desk")
    train, eval_ = split(dataset, config.eval_fraction, 0)
    points = sweep_lambda(train, eval_, config)
    assert [lam for lam, _ in points] == list(SWEEP_LAMBDAS)
    oa = [result.fused_metrics.oa for _, result in points]
    assert max(oa) - min(oa) <= 0.10


@pytest.mark.slow
def test_desk_experiment_within_ten_minutes(tmp_path):
    data = str(tmp_path / "data")
    start = time.perf_counter()
    assert run_command(["gen-data", "--out", data]) == 0
    assert run_command(["train", "--data", data, "--out", str(tmp_path / "run")]) == 0
    assert run_command(
        ["ablate", "--data", data, "--out", str(tmp_path / "ablation"), "--repeats", "3"]
    ) == 0
    assert run_command(["sweep-lambda", "--data", data, "--out", str(tmp_path / "sweep")]) == 0
    assert time.perf_counter() - start <= 600
