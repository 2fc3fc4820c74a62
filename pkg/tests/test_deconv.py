import numpy as np
import pytest
import torch

from FisherPrune.fp_lda import scatter, lda_scores, build_firing_matrix
from FisherPrune.fp_net import INPUT_ID, GraphBuilder
from FisherPrune.fp_tensor import DTYPE, conv2d_forward, conv2d_transpose
from FisherPrune.fp_deconv import (
    deconv_step,
    trace_batch,
    dense_as_conv,
    seed_utility,
    trace_utility,
    channel_scores,
    dump_utility_csv,
)
from FisherPrune.utils.config import TraceConfig
from FisherPrune.utils.data import Dataset
from FisherPrune.utils.errors import ShapeError, PruneError


def _trace_single(net, cache, selected, sample):
    """逐样本回溯，作为整批回溯的参照"""
    stop = next(i for i, n in enumerate(net.nodes) if n.id == net.last_hidden)
    pending = {net.last_hidden: seed_utility(selected, None, cache, net, sample)}
    fields = {}
    for node in reversed(net.nodes[: stop + 1]):
        u = pending.pop(node.id, None)
        if u is None:
            continue
        if node.prunable:
            fields[node.id] = u
        for src, v in zip(node.inputs, deconv_step(node, u, cache, sample, net)):
            if src != INPUT_ID:
                pending[src] = pending[src] + v if src in pending else v
    return fields


def test_dense_as_conv_views(tiny_cnn) -> None:
    node = tiny_cnn.node("fc1")
    view = dense_as_conv(node)
    assert tuple(view.kernel.shape) == (8, 96, 1, 1)
    spatial = dense_as_conv(node, (6, 4, 4))
    assert tuple(spatial.kernel.shape) == (8, 6, 4, 4)


def test_seed_keeps_only_selected(tiny_cnn, cnn_data) -> None:
    _, cache = tiny_cnn.forward(cnn_data.images[:4])
    seed = seed_utility([1, 5], None, cache, tiny_cnn)
    act = cache.output(tiny_cnn.last_hidden)
    assert torch.equal(seed[:, [1, 5]], act[:, [1, 5]])
    others = [i for i in range(8) if i not in (1, 5)]
    assert torch.count_nonzero(seed[:, others]) == 0
    with pytest.raises(PruneError):
        seed_utility([], None, cache, tiny_cnn)


def test_seed_lda_weighting(tiny_cnn, cnn_data) -> None:
    fm = build_firing_matrix(tiny_cnn, cnn_data)
    scores = lda_scores(scatter(fm), fm.column_to_neuron)
    n = int(fm.column_to_neuron[0])
    _, cache = tiny_cnn.forward(cnn_data.images[:4])
    plain = seed_utility([n], scores, cache, tiny_cnn)
    weighted = seed_utility([n], scores, cache, tiny_cnn, weighting="activation_lda")
    assert torch.allclose(weighted[:, n], plain[:, n] * float(scores.v[0]))


def test_conv_step_is_transpose(tiny_cnn, cnn_data) -> None:
    _, cache = tiny_cnn.forward(cnn_data.images[:2])
    node = tiny_cnn.node("conv2")
    u = torch.rand((2, 6, 4, 4), dtype=torch.float64)
    (out,) = deconv_step(node, u, cache, None, tiny_cnn)
    assert torch.equal(out, conv2d_transpose(u, node.conv_weights(), in_hw=(4, 4)))


@pytest.mark.parametrize("net_name", ["tiny_cnn", "tiny_inception"])
def test_batched_trace_equals_per_sample(request, net_name) -> None:
    net = request.getfixturevalue(net_name)
    data = request.getfixturevalue("cnn_data" if net_name == "tiny_cnn" else "inception_data")
    _, cache = net.forward(data.images[:5])
    selected = [0, 2, 3]
    sums = trace_batch(net, cache, selected, None)
    reference = {}
    for i in range(5):
        for layer, f in _trace_single(net, cache, selected, i).items():
            reference[layer] = reference[layer] + f if layer in reference else f
    assert sums.keys() == reference.keys()
    for layer in sums:
        assert torch.allclose(sums[layer], reference[layer], atol=1e-10)


def test_inception_branches_all_traced(tiny_inception, inception_data) -> None:
    um = trace_utility(tiny_inception, inception_data, [0, 1, 2, 3, 4, 5], None)
    expected = {
        "conv1",
        "inc1_1x1",
        "inc1_3x3_reduce",
        "inc1_3x3",
        "inc1_5x5_reduce",
        "inc1_5x5",
        "inc1_pool_proj",
        "fc1",
    }
    assert set(um.layers) == expected
    assert tuple(um.fields["inc1_3x3"].shape) == (3, 8, 8)
    for layer in expected:
        assert (um.scores[layer] >= 0).all()


def test_zero_outgoing_weights_give_zero_utility(tiny_cnn, cnn_data) -> None:
    net = tiny_cnn
    # conv2 的第 4 个通道在 fc1 输入中占 flatten 下标 [64, 80)
    net.node("fc1").weights["W"][:, 64:80] = 0.0
    um = trace_utility(net, cnn_data, list(range(8)), None)
    assert um.scores["conv2"][4] == 0.0
    assert um.scores["conv2"].max() > 0.0


def test_channel_scores() -> None:
    field = torch.tensor([[[1.0, -2.0], [0.5, 3.0]], [[-1.0, -1.0], [-2.0, -3.0]]], dtype=torch.float64)
    assert channel_scores(field).tolist() == [3.0, 0.0]
    assert channel_scores(torch.tensor([2.0, -1.0], dtype=torch.float64)).tolist() == [2.0, 0.0]


def test_trace_config_and_sample_cap(tiny_cnn, cnn_data) -> None:
    um = trace_utility(tiny_cnn, cnn_data, [0, 1], None, TraceConfig(batch_size=7), max_samples=20)
    assert um.num_samples == 20
    assert um.source == "fc1_relu"
    assert um.seed_weighting == "activation"
    assert set(um.layers) == {"conv1", "conv2", "fc1"}


def test_dump_utility_csv(tmp_path, tiny_cnn, cnn_data) -> None:
    um = trace_utility(tiny_cnn, cnn_data, [0, 1], None)
    hist, scores = dump_utility_csv(um, str(tmp_path), bins=5)
    assert hist.read_text("utf-8").splitlines()[0] == "layer,lo,hi,count"
    lines = scores.read_text("utf-8").splitlines()
    assert len(lines) == 1 + 4 + 6 + 8
    assert np.isclose(float(lines[1].split(",")[2]), um.scores["conv1"][0])


def _trace_from_seed(net, cache, seed):
    """从给定的末层种子整批回溯，返回各可剪枝层的场（未求和）"""
    stop = next(i for i, n in enumerate(net.nodes) if n.id == net.last_hidden)
    pending = {net.last_hidden: seed}
    fields = {}
    for node in reversed(net.nodes[: stop + 1]):
        u = pending.pop(node.id, None)
        if u is None:
            continue
        if node.prunable:
            fields[node.id] = u
        for src, v in zip(node.inputs, deconv_step(node, u, cache, None, net)):
            if src != INPUT_ID:
                pending[src] = pending[src] + v if src in pending else v
    return fields


@pytest.mark.parametrize("net_name", ["tiny_cnn", "tiny_inception"])
def test_trace_is_linear_in_seed(request, net_name) -> None:
    net = request.getfixturevalue(net_name)
    data = request.getfixturevalue("cnn_data" if net_name == "tiny_cnn" else "inception_data")
    _, cache = net.forward(data.images[:6])
    seed = seed_utility([0, 1, 3], None, cache, net)
    once = _trace_from_seed(net, cache, seed)
    twice = _trace_from_seed(net, cache, 2.0 * seed)
    for layer, f in once.items():
        assert torch.allclose(twice[layer], 2.0 * f, atol=1e-12, rtol=0)


def test_twin_branches_get_identical_scores() -> None:
    b = GraphBuilder((2, 6, 6), 3, "twins", True, seed=4)
    x = b.conv_relu("conv1", INPUT_ID, 3, 3, pad=1)
    x = b.concat("twin_output", [b.conv_relu("left", x, 2, 1), b.conv_relu("right", x, 2, 1)])
    net = b.classifier(b.pool("pool", x, 2, 2), hidden=4, rate=0.0)
    net.node("right").weights = {k: v.clone() for k, v in net.node("left").weights.items()}
    W = net.node("fc1").weights["W"]
    # 拼接后 left 占通道 0..1（flatten 下标 0..17），right 占 2..3（18..35）
    W[:, 18:36] = W[:, 0:18]
    data = Dataset(torch.rand((12, 2, 6, 6), dtype=DTYPE), torch.arange(12) % 3, 3)
    um = trace_utility(net, data, [0, 1, 2, 3], None)
    assert torch.allclose(um.fields["left"], um.fields["right"], atol=1e-12, rtol=0)
    assert np.allclose(um.scores["left"], um.scores["right"], atol=1e-12, rtol=0)


def test_layers_above_last_hidden_do_not_matter(tiny_cnn, cnn_data) -> None:
    before = trace_utility(tiny_cnn, cnn_data, [0, 2, 4, 6], None)
    g = torch.Generator().manual_seed(6)
    head = tiny_cnn.node("fc_out")
    head.weights["W"] = torch.randn(head.weights["W"].shape, generator=g, dtype=DTYPE)
    head.weights["b"] = torch.randn(head.weights["b"].shape, generator=g, dtype=DTYPE)
    after = trace_utility(tiny_cnn, cnn_data, [0, 2, 4, 6], None)
    for layer in before.layers:
        assert torch.equal(before.fields[layer], after.fields[layer])


def test_dense_chain_matches_matrix_product() -> None:
    b = GraphBuilder((5,), 3, "dense_chain", True, seed=2)
    x = b.dense_relu("h1", INPUT_ID, 4)
    x = b.dense_relu("h2", x, 3)
    net = b.classifier(x, hidden=None, rate=0.0)
    # 权重与偏置都为正、输入为正：所有 ReLU 都处在恒等区
    for layer in ("h1", "h2"):
        node = net.node(layer)
        node.weights["W"] = node.weights["W"].abs()
        node.weights["b"] = node.weights["b"].abs() + 0.1
    data = Dataset(torch.rand((9, 5), dtype=DTYPE) + 0.1, torch.arange(9) % 3, 3)
    um = trace_utility(net, data, [0, 1, 2], None)

    W1, b1 = net.node("h1").weights["W"], net.node("h1").weights["b"]
    W2, b2 = net.node("h2").weights["W"], net.node("h2").weights["b"]
    a2 = torch.relu(torch.relu(data.images @ W1.T + b1) @ W2.T + b2)
    assert torch.allclose(um.fields["h2"], a2.mean(dim=0), atol=1e-12, rtol=0)
    assert torch.allclose(um.fields["h1"], (a2 @ W2).mean(dim=0), atol=1e-12, rtol=0)


def test_dense_conv_view_over_feature_maps(tiny_cnn) -> None:
    node = tiny_cnn.node("fc1")
    W, bias = node.weights["W"], node.weights["b"]
    view = dense_as_conv(node, (6, 4, 4))
    for o in range(W.shape[0]):
        assert torch.equal(view.kernel[o], W[o].reshape(6, 4, 4))
    g = torch.Generator().manual_seed(7)
    x = torch.randn((6, 4, 4), generator=g, dtype=DTYPE)
    y = torch.randn(8, generator=g, dtype=DTYPE)
    out = conv2d_forward(x, view)
    assert tuple(out.shape) == (8, 1, 1)
    assert torch.allclose(out.flatten(), W @ x.flatten() + bias, atol=1e-12)
    back = conv2d_transpose(y.view(8, 1, 1), view)
    assert torch.allclose(back, (W.T @ y).reshape(6, 4, 4), atol=1e-12)
    assert float(torch.dot(out.flatten() - bias, y)) == pytest.approx(float(torch.dot(x.flatten(), back.flatten())), rel=1e-10)
    with pytest.raises(ShapeError):
        dense_as_conv(node, (5, 4, 4))


def test_conv_last_hidden_seed_is_one_hot_at_argmax() -> None:
    b = GraphBuilder((1, 6, 6), 3, "conv_head", True, seed=5)
    x = b.pool("pool1", b.conv_relu("conv1", INPUT_ID, 3, 3, pad=1), 2, 2)
    net = b.classifier(x, hidden=None, rate=0.0)
    assert net.last_hidden == "pool1"
    conv = net.node("conv1")
    conv.weights["kernel"] = conv.weights["kernel"].abs()
    conv.weights["bias"] = torch.ones(3, dtype=DTYPE)
    images = torch.rand((4, 1, 6, 6), dtype=DTYPE)
    _, cache = net.forward(images)
    act = cache.output("pool1")
    for sample in range(4):
        seed = seed_utility([1], None, cache, net, sample)
        assert torch.count_nonzero(seed[[0, 2]]) == 0
        assert torch.count_nonzero(seed[1]) == 1
        assert int(seed[1].argmax()) == int(act[sample, 1].argmax())
        assert float(seed[1].max()) == float(act[sample, 1].max())
    batched = seed_utility([1], None, cache, net)
    assert torch.equal(batched[2], seed_utility([1], None, cache, net, 2))
