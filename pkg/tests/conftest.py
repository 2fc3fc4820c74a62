import pytest
import torch

from FisherPrune.fp_net import INPUT_ID, GraphBuilder
from FisherPrune.utils.data import Dataset


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="运行桌面级端到端实验")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="需要 --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def _randomize_biases(net, seed: int):
    g = torch.Generator().manual_seed(seed)
    for node in net.prunable_nodes():
        key = "bias" if "bias" in node.weights else "b"
        node.weights[key] = 0.1 * torch.randn(node.weights[key].shape, generator=g, dtype=torch.float64)
    return net


def make_tiny_cnn(seed: int = 0):
    """1×8×8 → conv1(4) → pool → conv2(6) → fc1(8) → fc_out(3)"""
    b = GraphBuilder((1, 8, 8), 3, "tiny_cnn", True, seed)
    x = b.conv_relu("conv1", INPUT_ID, 4, 3, pad=1)
    x = b.pool("pool1", x, 2, 2)
    x = b.conv_relu("conv2", x, 6, 3, pad=1)
    return _randomize_biases(b.classifier(x, hidden=8, rate=0.25), seed)


def make_tiny_inception(seed: int = 0):
    """2×8×8 → conv1(4) → inc1(1x1 / 3x3 / 5x5 / pool_proj) → pool → fc1(6) → fc_out(3)"""
    b = GraphBuilder((2, 8, 8), 3, "tiny_inception", True, seed)
    x = b.conv_relu("conv1", INPUT_ID, 4, 3, pad=1)
    x = b.inception("inc1", x, 2, 3, 3, 2, 2, pool_proj=2)
    x = b.pool("pool2", x, 2, 2)
    return _randomize_biases(b.classifier(x, hidden=6, rate=0.25), seed)


def make_random_dataset(n: int, shape, num_classes: int = 3, seed: int = 0) -> Dataset:
    g = torch.Generator().manual_seed(seed)
    images = torch.rand((n, *shape), generator=g, dtype=torch.float64)
    labels = torch.arange(n) % num_classes
    # 让类别可分：每类在不同的行条纹上加亮
    for c in range(num_classes):
        rows = labels == c
        images[rows, :, c % shape[1] :: num_classes, :] += 1.0
    return Dataset(images, labels, num_classes)


@pytest.fixture
def tiny_cnn():
    return make_tiny_cnn()


@pytest.fixture
def tiny_inception():
    return make_tiny_inception()


@pytest.fixture
def cnn_data():
    return make_random_dataset(48, (1, 8, 8))


@pytest.fixture
def inception_data():
    return make_random_dataset(48, (2, 8, 8))
