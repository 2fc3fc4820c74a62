import numpy as np
import pytest

from FisherPrune.fp_lda import (
    LdaConst,
    scatter,
    lda_scores,
    dump_lda_csv,
    clean_columns,
    eta_threshold,
    offdiag_ratio,
    select_neurons,
    build_firing_matrix,
    generalized_eig_oracle,
)
from FisherPrune.utils.config import LdaPolicy
from FisherPrune.utils.errors import DataError, PruneError

LABELS = np.array([0, 0, 1, 1])
X = np.array(
    [
        [1.0, 2.0, 1.0],
        [3.0, 2.0, 2.0],
        [5.0, 4.0, 1.0],
        [7.0, 4.0, 2.0],
    ]
)


@pytest.fixture
def scores():
    fm = clean_columns(X, LABELS)
    return lda_scores(scatter(fm), fm.column_to_neuron)


def test_scatter_hand_example() -> None:
    pair = scatter(clean_columns(X, LABELS))
    assert np.allclose(np.diag(pair.sw), [4.0, 0.0, 1.0])
    assert np.allclose(np.diag(pair.sb), [16.0, 4.0, 0.0])
    assert np.allclose(pair.sa, pair.sw + pair.sb)


def test_scores_and_ranking(scores) -> None:
    assert scores.v[0] == pytest.approx(4.0)
    assert scores.v[2] == pytest.approx(0.0)
    assert scores.separable.tolist() == [False, True, False]
    # 无限可分列排在最前
    assert scores.ranking().tolist() == [1, 0, 2]


@pytest.mark.parametrize(
    "policy, eta, expected",
    [
        (LdaPolicy(kind="topk", k=2), None, [0, 1]),
        (LdaPolicy(kind="topk", k=1), None, [1]),
        (LdaPolicy(kind="threshold", value=0.5), None, [0, 1]),
        (LdaPolicy(kind="eta"), 1.0, [0, 1]),
        (LdaPolicy(kind="eta"), 2.0, [1]),
        (LdaPolicy(kind="eta"), 0.0, [0, 1]),
    ],
)
def test_select_neurons(scores, policy, eta, expected) -> None:
    assert select_neurons(scores, policy, eta).tolist() == expected


def test_eta_policy_needs_eta(scores) -> None:
    with pytest.raises(PruneError):
        select_neurons(scores, LdaPolicy(kind="eta"), None)


def test_degenerate_columns_removed() -> None:
    Xd = np.column_stack([X, X[:, 0], np.full(4, 3.0)])
    fm = clean_columns(Xd, LABELS)
    assert fm.column_to_neuron.tolist() == [0, 1, 2]
    assert fm.removed == {3: "duplicate", 4: "zero-variance"}
    sel = select_neurons(lda_scores(scatter(fm), fm.column_to_neuron), LdaPolicy(kind="topk", k=5))
    assert 3 not in sel and 4 not in sel


def test_scatter_needs_two_classes_with_two_samples() -> None:
    with pytest.raises(DataError):
        scatter(clean_columns(X, np.zeros(4, dtype=int)))
    with pytest.raises(DataError):
        scatter(clean_columns(X, np.array([0, 0, 0, 1])))


def test_eta_threshold_uses_sample_std() -> None:
    assert eta_threshold(np.array([1.0, 3.0]), 1.5) == pytest.approx(1.5 * np.sqrt(2.0))
    with pytest.raises(PruneError):
        eta_threshold(np.array([1.0]), 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_diagonal_shortcut_matches_oracle_on_independent_features(seed) -> None:
    rng = np.random.default_rng(seed)
    m = 6
    sw = np.diag(rng.uniform(0.5, 3.0, m))
    sb = np.diag(rng.uniform(0.0, 5.0, m))
    vals, _ = generalized_eig_oracle(sb, sw)
    v = np.diag(sb) / (np.diag(sw) + LdaConst.EPS)
    assert np.allclose(vals, np.sort(v)[::-1], rtol=1e-8)
    assert offdiag_ratio(sw) == 0.0


def test_firing_matrix_from_net(tiny_cnn, cnn_data) -> None:
    fm = build_firing_matrix(tiny_cnn, cnn_data)
    assert fm.num_neurons == 8
    assert fm.X.shape[0] == 48
    assert fm.X.shape[1] == fm.column_to_neuron.size <= 8
    assert (fm.X >= 0).all()


def test_firing_matrix_respects_sample_cap(tiny_cnn, cnn_data) -> None:
    fm = build_firing_matrix(tiny_cnn, cnn_data, max_samples=12)
    assert fm.X.shape[0] == 12
    assert sorted(set(fm.labels.tolist())) == [0, 1, 2]


def test_dump_lda_csv(tmp_path) -> None:
    fm = clean_columns(X, LABELS)
    dump_lda_csv(fm, lda_scores(scatter(fm), fm.column_to_neuron), str(tmp_path))
    header = (tmp_path / "lda_scores.csv").read_text("utf-8").splitlines()[0]
    assert header == "neuron,sigma_w,sigma_b,v,separable,rank"
    assert (tmp_path / "lda_firing.csv").read_text("utf-8").startswith("label,n0,n1,n2")


def _gaussian_firing(seed: int, m: int = 20, n: int = 1000):
    """两类、对角协方差的高斯发放数据"""
    rng = np.random.default_rng(seed)
    shift = rng.normal(0.0, 2.0, m)
    sd = rng.uniform(0.5, 2.0, m)
    half = n // 2
    X = np.concatenate([rng.normal(0.0, sd, (half, m)), rng.normal(shift, sd, (n - half, m))])
    labels = np.repeat([0, 1], [half, n - half])
    return X, labels


@pytest.mark.parametrize("seed", range(10))
def test_scores_match_oracle_on_gaussian_firing(seed) -> None:
    X, labels = _gaussian_firing(seed)
    fm = clean_columns(X, labels)
    assert fm.X.shape == (1000, 20)
    pair = scatter(fm)
    scores = lda_scores(pair, fm.column_to_neuron)
    assert not scores.separable.any()

    # 对角捷径假设的矩阵束：Σw、Σb 只取对角
    vals, vecs = generalized_eig_oracle(np.diag(np.diag(pair.sb)), np.diag(np.diag(pair.sw)))
    assert np.allclose(vals, np.sort(scores.v)[::-1], rtol=1e-6, atol=1e-12)
    unit = vecs[:, :5] / np.linalg.norm(vecs[:, :5], axis=0)
    oracle_top5 = np.argmax(np.abs(unit), axis=0)
    assert oracle_top5.tolist() == scores.ranking()[:5].tolist()
    assert np.allclose(np.abs(unit), np.eye(20)[:, oracle_top5], atol=1e-6)

    # 完整矩阵束的最大特征值是 Rayleigh 商的上界
    full_vals, _ = generalized_eig_oracle(pair.sb, pair.sw)
    assert full_vals[0] >= scores.v.max() * (1 - 1e-9)


def test_scores_invariant_to_column_scale() -> None:
    X, labels = _gaussian_firing(0)
    scale = np.random.default_rng(1).uniform(0.1, 10.0, X.shape[1])
    base = lda_scores(scatter(clean_columns(X, labels)))
    scaled = lda_scores(scatter(clean_columns(X * scale, labels)))
    assert np.allclose(scaled.v, base.v, rtol=1e-6)
    assert scaled.ranking().tolist() == base.ranking().tolist()


def test_scores_permute_with_columns() -> None:
    X, labels = _gaussian_firing(2)
    perm = np.random.default_rng(3).permutation(X.shape[1])
    base = lda_scores(scatter(clean_columns(X, labels)))
    permuted = lda_scores(scatter(clean_columns(X[:, perm], labels)))
    assert np.allclose(permuted.v, base.v[perm], rtol=1e-12)


def test_one_dimensional_separable_example() -> None:
    X1 = np.array([[0.0, 0.0], [0.0, 1.0], [2.0, 2.0], [2.0, 3.0]])
    labels = np.array([0, 0, 1, 1])
    pair = scatter(clean_columns(X1, labels))
    assert pair.sw[0, 0] == pytest.approx(0.0)
    assert pair.sa[0, 0] == pytest.approx(4.0)
    assert pair.sb[0, 0] == pytest.approx(4.0)
    scores = lda_scores(pair)
    assert scores.separable.tolist() == [True, False]
    assert scores.v[1] == pytest.approx(4.0)
    assert scores.ranking().tolist() == [0, 1]
    assert select_neurons(scores, LdaPolicy(kind="topk", k=1)).tolist() == [0]


def test_duplicate_detection_with_large_activations() -> None:
    big = np.column_stack([X[:, 0], X[:, 1], X[:, 0], X[:, 2]]) * 1e12
    fm = clean_columns(big, LABELS)
    assert fm.removed == {2: "duplicate"}
    assert fm.column_to_neuron.tolist() == [0, 1, 3]
