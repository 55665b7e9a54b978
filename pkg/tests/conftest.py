import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    from igmmgan.bigan import BiGANConfig

    return BiGANConfig(latent_dim=3, data_shape=(4, 4), encoder=[[8, True]], generator=[[8, True]],
                       disc_x=[[8, False]], disc_z=[[4, False]], batch_size=16, total_steps=5, seed=3)
