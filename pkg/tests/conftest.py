import pytest

from tsfuse.backbone import BackboneConfig
from tsfuse.config import ExperimentConfig


def tiny_config(**changes) -> ExperimentConfig:
    """A backbone and series small enough for sub-second training runs."""
    base = ExperimentConfig(
        backbone=BackboneConfig(layers=1, heads=2, d_model=16, d_ff=32, max_seq=160),
        synth_length=480, context_len=64, horizon=32, epochs=3, batch=8,
    )
    return base.replace(**changes)


@pytest.fixture
def tiny():
    return tiny_config
