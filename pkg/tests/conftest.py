from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def square_mask(h=20, w=20, box=(5, 5, 15, 15)) -> np.ndarray:
    m = np.zeros((h, w), dtype=bool)
    y0, x0, y1, x1 = box
    m[y0:y1, x0:x1] = True
    return m


def quick_config(**kw):
    from rpdct import neuralnet as nn
    from rpdct.structure import ModelConfig

    tc = nn.TrainConfig(max_epochs=60, learning_rate=0.01)
    return ModelConfig(stage1=tc, stage2=tc, stage3=tc, rotation_exemplars_per_class=8, **kw)


@pytest.fixture(scope="session")
def small_dataset():
    """Group 1 (no holes), 6 training and 3 test exemplars per class."""
    from rpdct.datagen import DatasetPlan, plan_exemplars
    from rpdct.structure import LabeledImage

    exs = plan_exemplars(DatasetPlan(group=1, train=6, test=3, seed=11))
    train = [LabeledImage(e.render(), str(e.cls), f"{e.cls}-{e.exemplar}", e.base) for e in exs if e.split == "train"]
    test = [e for e in exs if e.split == "test"]
    return train, test


@pytest.fixture(scope="session")
def small_model(small_dataset):
    from rpdct.structure import train_mode_a

    model, report = train_mode_a(small_dataset[0], quick_config(seed=5))
    return model, report


# Acceptance lines collected by tests/test_acceptance.py, printed after the run.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
