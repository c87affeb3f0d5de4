from __future__ import annotations

import pytest

from thermaqi.model_lstm import HyperParams
from thermaqi.protocols import ProtocolConfig
from thermaqi.synth import synth_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """3 devices x 2 months; enough rows for windows without slow tests."""
    return synth_corpus(seed=11, n_devices=3, months=2)


@pytest.fixture(scope="session")
def fast_cfg():
    """Protocol config sized for unit tests, not for model quality."""
    return ProtocolConfig(
        window=6,
        seed=5,
        n_estimators=8,
        max_depth=8,
        lstm=HyperParams(hidden=8, epochs=3, batch_size=256, window=6, patience=2),
        max_train_instances=1500,
    )
