import math

import pytest
import torch
from conftest import make_tiny_cnn, make_random_dataset

from FisherPrune.fp_net import (
    INPUT_ID,
    NetGraph,
    LayerNode,
    GraphBuilder,
    train,
    vgg16,
    evaluate,
    googlenet,
    load_model,
    save_model,
    build_arch,
    deterministic,
    backward_sgd_step,
)
from FisherPrune.utils.config import TrainConfig
from FisherPrune.utils.models import LayerKind
from FisherPrune.utils.data import load_data, save_dataset
from FisherPrune.utils.errors import DataError, UsageError, NumericalError, ModelFormatError
from FisherPrune.utils.counting import count_flops, layer_table, count_params


def test_tiny_cnn_shapes(tiny_cnn) -> None:
    assert tiny_cnn.shapes["conv1"] == (4, 8, 8)
    assert tiny_cnn.shapes["pool1"] == (4, 4, 4)
    assert tiny_cnn.shapes["flatten"] == (96,)
    assert tiny_cnn.decision_id == "fc_out"
    assert tiny_cnn.softmax_id == "prob"
    assert tiny_cnn.last_hidden == "fc1_relu"


def test_forward_outputs(tiny_cnn) -> None:
    x = torch.rand((5, 1, 8, 8), dtype=torch.float64)
    logits, cache = tiny_cnn.forward(x)
    assert tuple(logits.shape) == (5, 3)
    probs = cache.output("prob")
    assert torch.allclose(probs.sum(dim=1), torch.ones(5, dtype=torch.float64))
    assert "pool1" in cache.switches
    assert cache.num_samples == 5


def test_forward_rejects_wrong_input(tiny_cnn) -> None:
    with pytest.raises(NumericalError):
        tiny_cnn.forward(torch.zeros((2, 1, 9, 9), dtype=torch.float64))


def test_eval_mode_dropout_is_identity(tiny_cnn) -> None:
    x = torch.rand((3, 1, 8, 8), dtype=torch.float64)
    a, _ = tiny_cnn.forward(x)
    b, _ = tiny_cnn.forward(x, train=False)
    assert torch.equal(a, b)


def _chain(*nodes):
    return list(nodes)


def test_validation_errors() -> None:
    conv = LayerNode("c", LayerKind.CONV, [INPUT_ID], {"fn": 2, "cn": 1, "h": 3, "w": 3})
    flat = LayerNode("f", LayerKind.FLATTEN, ["c"])
    dense = LayerNode("d", LayerKind.DENSE, ["f"], {"din": 72, "dout": 2})
    soft = LayerNode("p", LayerKind.SOFTMAX, ["d"])
    NetGraph(_chain(conv, flat, dense, soft), (1, 8, 8), 2, "f")

    with pytest.raises(ModelFormatError):
        NetGraph(_chain(conv, conv, flat, dense, soft), (1, 8, 8), 2, "f")
    with pytest.raises(ModelFormatError):
        NetGraph(_chain(conv, LayerNode("f", LayerKind.FLATTEN, ["x"]), dense, soft), (1, 8, 8), 2, "f")
    with pytest.raises(ModelFormatError):
        NetGraph(_chain(conv, flat, dense, soft), (2, 8, 8), 2, "f")
    with pytest.raises(ModelFormatError):
        NetGraph(_chain(conv, flat, dense), (1, 8, 8), 2, "f")


def test_dropout_only_before_dense() -> None:
    conv = LayerNode("c", LayerKind.CONV, [INPUT_ID], {"fn": 2, "cn": 1, "h": 3, "w": 3})
    drop = LayerNode("drop", LayerKind.DROPOUT, ["c"], {"rate": 0.5})
    conv2 = LayerNode("c2", LayerKind.CONV, ["drop"], {"fn": 2, "cn": 2, "h": 3, "w": 3})
    flat = LayerNode("f", LayerKind.FLATTEN, ["c2"])
    dense = LayerNode("d", LayerKind.DENSE, ["f"], {"din": 32, "dout": 2})
    soft = LayerNode("p", LayerKind.SOFTMAX, ["d"])
    with pytest.raises(ModelFormatError):
        NetGraph([conv, drop, conv2, flat, dense, soft], (1, 8, 8), 2, "f")


def test_save_load_preserves_net(tmp_path, tiny_cnn) -> None:
    tiny_cnn.node("conv1").masks["kernel"] = torch.ones_like(tiny_cnn.node("conv1").weights["kernel"])
    path = save_model(tiny_cnn, str(tmp_path / "m.json"))
    loaded = load_model(str(path))
    assert loaded.equals(tiny_cnn)
    x = torch.rand((2, 1, 8, 8), dtype=torch.float64)
    assert torch.equal(loaded.forward(x)[0], tiny_cnn.forward(x)[0])


def test_load_rejects_bad_documents(tmp_path) -> None:
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 2, "nodes": []}', "utf-8")
    with pytest.raises(ModelFormatError):
        load_model(str(bad))
    with pytest.raises(ModelFormatError):
        load_model(str(tmp_path / "missing.json"))


def test_single_step_matches_hand_update() -> None:
    b = GraphBuilder((1, 2, 2), 2, "lin", True, 0)
    x = b.flatten("flatten", INPUT_ID)
    x = b.dense("fc_out", x, 2)
    b.softmax("prob", x)
    net = b.build("flatten")
    W0 = net.node("fc_out").weights["W"].clone()
    b0 = net.node("fc_out").weights["b"].clone()

    batch = torch.rand((3, 1, 2, 2), dtype=torch.float64)
    labels = torch.tensor([0, 1, 1])
    cfg = TrainConfig(lr=0.1, l2=0.01, dropout=False)
    backward_sgd_step(net, batch, labels, cfg)

    flat = batch.reshape(3, 4)
    p = torch.softmax(flat @ W0.T + b0, dim=1)
    onehot = torch.nn.functional.one_hot(labels, 2).to(torch.float64)
    gW = (p - onehot).T @ flat / 3
    gb = (p - onehot).mean(dim=0)
    assert torch.allclose(net.node("fc_out").weights["W"], W0 - 0.1 * (gW + 0.01 * W0), atol=1e-12)
    assert torch.allclose(net.node("fc_out").weights["b"], b0 - 0.1 * (gb + 0.01 * b0), atol=1e-12)


def test_training_is_deterministic(cnn_data) -> None:
    cfg = TrainConfig(lr=0.05, epochs=2, batch_size=8, seed=3)
    a = train(make_tiny_cnn(), cnn_data, cfg).net
    b = train(make_tiny_cnn(), cnn_data, cfg).net
    assert a.equals(b)


def test_training_reduces_loss(cnn_data) -> None:
    result = train(make_tiny_cnn(), cnn_data, TrainConfig(lr=0.05, epochs=6, batch_size=8, dropout=False))
    losses = [r["loss"] for r in result.history]
    assert losses[-1] < losses[0]
    assert 0.0 <= evaluate(result.net, cnn_data) <= 1.0


def test_masked_weights_stay_zero(cnn_data) -> None:
    net = make_tiny_cnn()
    node = net.node("conv2")
    mask = torch.ones_like(node.weights["kernel"])
    mask[0] = 0.0
    node.masks["kernel"] = mask
    node.weights["kernel"] = node.weights["kernel"] * mask
    train(net, cnn_data, TrainConfig(epochs=1, batch_size=8))
    assert torch.count_nonzero(net.node("conv2").weights["kernel"][0]) == 0


def test_nonfinite_loss_raises() -> None:
    data = make_random_dataset(8, (1, 8, 8))
    net = make_tiny_cnn()
    net.node("fc_out").weights["W"].fill_(float("inf"))
    with pytest.raises(NumericalError):
        train(net, data, TrainConfig(epochs=1, batch_size=8))


def test_build_arch_unknown() -> None:
    with pytest.raises(UsageError):
        build_arch("resnet")


def test_desk_nets_build() -> None:
    for name in ("desk_cnn", "desk_inception"):
        net = build_arch(name)
        logits, _ = net.forward(torch.zeros((2, 1, 28, 28), dtype=torch.float64))
        assert tuple(logits.shape) == (2, 10)
        assert count_params(net) < 1_000_000


# ── 计数 ──────────────────────────────────────────────────────────────────


def test_conv_param_count() -> None:
    node = LayerNode("c", LayerKind.CONV, [INPUT_ID], {"fn": 3, "cn": 2, "h": 3, "w": 3})
    assert node.param_count() == 57


def test_conv_flop_count() -> None:
    b = GraphBuilder((1, 6, 6), 2, "flops", False)
    x = b.conv("c", INPUT_ID, 1, 3)
    x = b.flatten("flatten", x)
    x = b.dense("fc_out", x, 2)
    b.softmax("prob", x)
    net = b.build("flatten")
    assert count_flops(net) == 2 * 9 * 16 + 2 * 16 * 2


def test_vgg16_counts() -> None:
    net = vgg16()
    assert math.isclose(count_params(net), 138e6, rel_tol=0.02)
    assert math.isclose(count_flops(net), 31e9, rel_tol=0.05)


def test_googlenet_counts() -> None:
    net = googlenet()
    assert math.isclose(count_params(net), 6.0e6, rel_tol=0.02)
    assert math.isclose(count_flops(net), 3.2e9, rel_tol=0.05)



def test_layer_table_totals(tiny_cnn) -> None:
    table = layer_table(tiny_cnn)
    assert sum(r["params"] for r in table.values()) == count_params(tiny_cnn)
    assert sum(r["flops"] for r in table.values()) == count_flops(tiny_cnn)
    assert table["conv2"]["channels"] == tiny_cnn.node("conv2").units


def test_dataset_dir_roundtrip(tmp_path) -> None:
    ds = load_data("synthetic:30:3")
    ds.check()
    assert ds.sample_shape == (1, 28, 28)
    save_dataset(ds, str(tmp_path / "shapes"), dtype="<f8")
    back = load_data(str(tmp_path / "shapes"))
    assert torch.equal(back.images, ds.images)
    assert torch.equal(back.labels, ds.labels)
    assert back.num_classes == ds.num_classes


@pytest.mark.parametrize("spec", ["synthetic:x", "idx:only_one", "no/such/dir"])
def test_bad_dataset_specs(spec) -> None:
    with pytest.raises(DataError):
        load_data(spec)


def _all_kinds_net() -> NetGraph:
    """两路卷积拼接 → 池化 → Flatten → Dropout → Dense → Dense → Softmax"""
    b = GraphBuilder((2, 4, 4), 3, "all_kinds", True, seed=7)
    left = b.conv_relu("left", INPUT_ID, 2, 1)
    right = b.conv_relu("right", INPUT_ID, 2, 3, pad=1)
    x = b.pool("pool", b.concat("cat", [left, right]), 2, 2)
    x = b.dropout("drop", b.flatten("flatten", x), 0.5)
    x = b.dense_relu("fc1", x, 4)
    b.softmax("prob", b.dense("fc_out", x, 3))
    net = b.build("fc1_relu")
    g = torch.Generator().manual_seed(8)
    for node in net.prunable_nodes():
        key = "bias" if "bias" in node.weights else "b"
        node.weights[key] = 0.1 * torch.randn(node.weights[key].shape, generator=g, dtype=torch.float64)
    return net


def test_net_gradcheck_covers_every_layer_kind() -> None:
    net = _all_kinds_net()
    assert {n.kind for n in net.nodes} == set(LayerKind)
    assert count_params(net) <= 500
    keys = [(node, key) for node in net.prunable_nodes() for key in sorted(node.weights)]
    params = tuple(node.weights[key].clone().requires_grad_(True) for node, key in keys)
    g = torch.Generator().manual_seed(9)
    x = torch.randn((2, 2, 4, 4), generator=g, dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([0, 2])

    def loss(x, *ps):
        for (node, key), p in zip(keys, ps):
            node.weights[key] = p
        _, cache = net.forward(x)
        probs = cache.output("prob")
        return -torch.log(probs[torch.arange(2), labels]).sum()

    assert torch.autograd.gradcheck(loss, (x, *params), eps=1e-6, atol=1e-5)


def test_training_restores_determinism_flag(cnn_data) -> None:
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(False)
    try:
        train(make_tiny_cnn(), cnn_data, TrainConfig(epochs=1, batch_size=16))
        assert not torch.are_deterministic_algorithms_enabled()
        with pytest.raises(RuntimeError):
            with deterministic():
                assert torch.are_deterministic_algorithms_enabled()
                raise RuntimeError("stop")
        assert not torch.are_deterministic_algorithms_enabled()
    finally:
        torch.use_deterministic_algorithms(prev)


@pytest.mark.parametrize(
    "manifest",
    [
        '{"shape": [1, 2, 2], "num_classes": 3}',
        '{"count": 2, "shape": [1, 2, 2], "num_classes": 3, "dtype": "<i4"}',
        '{"count": 2, "shape": [1, 0, 2], "num_classes": 3}',
        '{"count": "two", "shape": [1, 2, 2], "num_classes": 3}',
        "{",
    ],
)
def test_invalid_dataset_manifest(tmp_path, manifest) -> None:
    root = tmp_path / "ds"
    save_dataset(make_random_dataset(2, (1, 2, 2)), str(root))
    (root / "manifest.json").write_text(manifest, "utf-8")
    with pytest.raises(DataError):
        load_data(str(root))


def test_save_dataset_rejects_dtype(tmp_path) -> None:
    with pytest.raises(DataError):
        save_dataset(make_random_dataset(2, (1, 2, 2)), str(tmp_path / "ds"), dtype="<f2")
    assert not (tmp_path / "ds").exists()
