#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
    Read more about conftest.py under:
    https://pytest.org/latest/plugins.html
"""
import pytest

from mbf_amen.data import gen_synthetic, split
from mbf_amen.pipeline import PipelineConfig

TINY_BACKBONE = {
    "layers": [
        {"kind": "conv", "kernel": 3, "padding": 1, "out_channels": 4},
        {"kind": "relu"},
        {"kind": "maxpool", "kernel": 2},
    ]
}


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("AMEN_THREADS", "1")


@pytest.fixture
def tiny_dataset():
    return gen_synthetic(24, image_size=16, detail_size=3, noise=0.05, seed=1)


@pytest.fixture
def tiny_splits(tiny_dataset):
    return split(tiny_dataset, 0.25, seed=1)


@pytest.fixture
def tiny_config():
    return PipelineConfig(
        scales=2,
        epochs=2,
        image_size=16,
        batch_size=8,
        lr=0.01,
        momentum=0.9,
        backbone=TINY_BACKBONE,
    )
