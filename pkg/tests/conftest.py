"""Shared fixtures: a tiny configuration that trains in seconds on CPU."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest
import torch

from ifusion.config import RunConfig, parse_config
from ifusion.data import Batch, Dataset, generate_synthetic_splits
from ifusion.model import IFusionModel

TINY_DOC: Dict[str, Any] = {
    "data": {
        "synthetic": {
            "n_train": 24,
            "n_valid": 12,
            "n_test": 12,
            "steps": {"l": 6, "a": 5, "v": 5},
            "dims": {"l": 8, "a": 3, "v": 4},
        }
    },
    "model": {
        "seq_len": 4,
        "hidden": 8,
        "heads": 2,
        "ff_mult": 2,
        "dropout": 0.0,
        "embed_depth": 1,
        "integrity_depth": 1,
        "encoder_depth": 1,
        "decoder_depth": 1,
        "dominant_depth": 1,
        "fusion_layers": 2,
        "predict_depth": 1,
    },
    "training": {
        "epochs": 3,
        "stage1_epochs": 1,
        "batch_size": 8,
        "warmup_epochs": 1,
        "early_stop_patience": 5,
    },
    "evaluation": {"plots": False},
}


def tiny_doc(output_dir: Path, **sections: Dict[str, Any]) -> Dict[str, Any]:
    """TINY_DOC with output_dir set and per-section keys merged in."""
    doc = copy.deepcopy(TINY_DOC)
    doc["output_dir"] = str(output_dir)
    for name, values in sections.items():
        doc.setdefault(name, {}).update(values)
    return doc


@pytest.fixture
def tiny_config(tmp_path: Path) -> RunConfig:
    return parse_config(tiny_doc(tmp_path / "run"))


@pytest.fixture
def tiny_splits(tiny_config: RunConfig) -> Dict[str, Dataset]:
    return generate_synthetic_splits(tiny_config.data.synthetic)


@pytest.fixture
def tiny_model(tiny_config: RunConfig) -> IFusionModel:
    torch.manual_seed(0)
    return IFusionModel.from_configs(
        tiny_config.model, tiny_config.training, (6, 5, 5), (8, 3, 4)
    )


def random_batch(n: int, steps=(6, 5, 5), dims=(8, 3, 4), seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    features = {
        m: rng.standard_normal((n, t, d)).astype(np.float32)
        for m, t, d in zip(("l", "a", "v"), steps, dims)
    }
    return Batch(
        indices=np.arange(n),
        ids=tuple(f"s{i}" for i in range(n)),
        features=features,
        labels=rng.uniform(-3, 3, n),
    )
