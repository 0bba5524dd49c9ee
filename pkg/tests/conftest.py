import hypothesis
import pytest
import torch

torch.set_num_threads(1)

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def labeled_sequence():
    from vicount.simulator import SimConfig, generate

    return generate(
        SimConfig(num_frames=30, seed=7, occlusion_dropout=0.0, group_rate=0.4)
    )
