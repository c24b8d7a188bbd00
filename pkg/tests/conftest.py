import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model():
    torch.manual_seed(0)
    from pama.model import StyleTransferModel
    model = StyleTransferModel("tiny")
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.npz"
    tiny_model.save(path)
    return path
