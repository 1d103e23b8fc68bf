"""Shared fixtures: one fitted toy model reused across the whole session.

Fitting takes a few seconds, so tests that need a trained model all share
the same session-scoped artifacts. Tests must not mutate them; anything
that prunes or retrains works on a clone.
"""

import numpy as np
import pytest

from revox.pipeline import CompressionConfig, compress
from revox.scene import SceneSpec, init_model, make_synthetic_scene, split_cameras
from revox.train import Adam, evaluate, fit

FIT_EPOCHS = 20
FIT_LR = 0.1


@pytest.fixture(scope="session")
def scene16():
    """Default sphere scene: reference model, all views, train/val split."""
    spec = SceneSpec()
    reference, views = make_synthetic_scene(spec)
    train_cams, val_cams = split_cameras(views)
    return {
        "spec": spec,
        "reference": reference,
        "views": views,
        "train": train_cams,
        "val": val_cams,
    }


@pytest.fixture(scope="session")
def fitted16(scene16):
    """Model trained on the default scene; baseline for compression tests."""
    model = init_model(scene16["spec"])
    opt = Adam(model.store, lr=FIT_LR)
    model, history = fit(model, scene16["train"], FIT_EPOCHS, opt, np.random.default_rng(0))
    report = evaluate(model, scene16["val"])
    return {"model": model, "history": history, "val_report": report}


@pytest.fixture(scope="session")
def compressed16(scene16, fitted16):
    """Default-config compression run on a clone of the fitted model."""
    result = compress(
        fitted16["model"].clone(),
        scene16["train"],
        scene16["val"],
        CompressionConfig(),
    )
    return result
