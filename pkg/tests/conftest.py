import numpy as np
import pytest

import comodal as cm


@pytest.fixture(scope="session")
def tiny_mods():
    return (cm.ModalityConfig("radar", "timeseries", (6, 4)),
            cm.ModalityConfig("optical", "timeseries", (5, 3)))


@pytest.fixture(scope="session")
def tiny_gen(tiny_mods):
    return cm.GeneratorSpec("multiclass", 4, 160, 3, 3, 3, tiny_mods[0], tiny_mods[1],
                            noise_x=0.3)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_gen):
    return cm.generate_synthetic(tiny_gen, seed=7)


@pytest.fixture(scope="session")
def tiny_spec():
    return cm.EncoderSpec("mlp", hidden_units=16, num_layers=1, projection_dim=8)


@pytest.fixture
def fast_config():
    return cm.TrainConfig(batch_size=32, max_epochs=3, patience=2, seed=1)


@pytest.fixture(scope="session")
def tiny_arrays(tiny_dataset):
    return (tiny_dataset.modality_array(1), tiny_dataset.modality_array(2),
            tiny_dataset.target_array())
