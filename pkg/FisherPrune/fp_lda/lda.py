"""
末层 LDA 效用

流程：
  1. build_firing_matrix   末层隐层激活取空间最大值 → N×M 发放矩阵，去掉零方差 / 重复列
  2. scatter               类内 Σw、总体 Σa、类间 Σb = Σa − Σw（平方和，不做 1/(n−1) 归一）
  3. lda_scores            v_j = Σb[j,j] / (Σw[j,j] + ε)，对角捷径
  4. select_neurons        按策略保留 v_j 大的神经元

generalized_eig_oracle 只在测试和报告里用来验证对角捷径，不进入剪枝路径。
"""

from pathlib import Path
from dataclasses import field, dataclass
from typing import Dict, List, Tuple, Optional

import numpy as np
import pandas as pd
import scipy.linalg
import torch

from ..fp_net import NetGraph
from ..utils.data import Dataset
from ..utils.config import LdaPolicy
from ..utils.logger import MSG_PREFIX, logger
from ..utils.errors import DataError, PruneError, NumericalError


class LdaConst:
    """LDA 相关容差"""

    EPS = 1e-9  # Σw 对角的除零保护
    ZERO_VARIANCE = 1e-12  # 样本方差低于此视为常数列
    DUPLICATE_QUANTUM = 1e-9  # 重复列判定的相对量化步长（乘以矩阵最大绝对值）


@dataclass
class FiringMatrix:
    X: np.ndarray
    column_to_neuron: np.ndarray
    labels: np.ndarray
    num_neurons: int
    removed: Dict[int, str] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.X.shape


@dataclass
class ScatterPair:
    sw: np.ndarray
    sb: np.ndarray
    sa: np.ndarray


@dataclass
class LDAScores:
    sigma_w: np.ndarray
    sigma_b: np.ndarray
    v: np.ndarray
    separable: np.ndarray
    column_to_neuron: np.ndarray

    def ranking(self) -> np.ndarray:
        """列的效用排序：无限可分列优先，其次 v 降序，并列取小下标"""
        idx = np.arange(self.v.size)
        return np.lexsort((idx, -self.v, ~self.separable))

    def neuron_scores(self) -> Dict[int, float]:
        return {int(n): float(v) for n, v in zip(self.column_to_neuron, self.v)}


# ── 发放矩阵 ──────────────────────────────────────────────────────────────


def firing_vectors(activations: torch.Tensor) -> np.ndarray:
    """N×C×H×W 取每个通道的空间最大值；N×M 原样返回"""
    a = activations.detach()
    if a.dim() > 2:
        a = a.flatten(start_dim=2).max(dim=2).values
    return a.cpu().numpy().astype(np.float64)


def clean_columns(X: np.ndarray, labels: np.ndarray) -> FiringMatrix:
    """去掉零方差列与重复列（重复时保留第一次出现的列）"""
    n, m = X.shape
    removed: Dict[int, str] = {}
    var = X.var(axis=0, ddof=1) if n > 1 else np.zeros(m)
    alive = np.flatnonzero(var >= LdaConst.ZERO_VARIANCE)
    for j in np.setdiff1d(np.arange(m), alive):
        removed[int(j)] = "zero-variance"

    keep = alive
    if alive.size:
        cols = X[:, alive]
        step = LdaConst.DUPLICATE_QUANTUM * max(1.0, float(np.abs(cols).max()))
        quantized = np.round(cols / step).astype(np.int64)
        _, first = np.unique(quantized, axis=1, return_index=True)
        keep = alive[np.sort(first)]
    for j in np.setdiff1d(alive, keep):
        removed[int(j)] = "duplicate"

    if removed:
        logger.warning(
            f"{MSG_PREFIX} [LDA] 去掉 {len(removed)} 个退化列: "
            f"{sorted(removed)[:10]}{'…' if len(removed) > 10 else ''}"
        )
    return FiringMatrix(X[:, keep], keep, np.asarray(labels), m, removed)


def build_firing_matrix(
    net: NetGraph,
    data: Dataset,
    batch_size: int = 256,
    max_samples: Optional[int] = None,
) -> FiringMatrix:
    data = data.head(max_samples)
    data.check()
    rows: List[np.ndarray] = []
    with torch.no_grad():
        for x, _ in data.batches(batch_size):
            _, cache = net.forward(x)
            rows.append(firing_vectors(cache.output(net.last_hidden)))
    fm = clean_columns(np.concatenate(rows, axis=0), data.labels.numpy())
    if fm.X.shape[1] == 0:
        raise NumericalError("末层隐层所有神经元都是退化列（网络已死）", node=net.last_hidden)
    logger.info(
        f"{MSG_PREFIX} [LDA] 发放矩阵 {fm.X.shape[0]}×{fm.X.shape[1]}"
        f"（原始 {fm.num_neurons} 个神经元）"
    )
    return fm


# ── 散度矩阵与得分 ────────────────────────────────────────────────────────


def scatter(fm: FiringMatrix) -> ScatterPair:
    X, labels = fm.X, fm.labels
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise DataError(f"至少需要两个类别，实际 {classes.size}")
    if counts.min() < 2:
        bad = classes[counts < 2].tolist()
        raise DataError(f"类别 {bad} 的样本少于 2 个")

    centered = X - X.mean(axis=0, keepdims=True)
    sa = centered.T @ centered
    sw = np.zeros_like(sa)
    for c in classes:
        Xc = X[labels == c]
        Xc = Xc - Xc.mean(axis=0, keepdims=True)
        sw += Xc.T @ Xc
    sb = sa - sw
    # 去掉浮点误差带来的不对称
    sb = (sb + sb.T) / 2
    return ScatterPair(sw=sw, sb=sb, sa=sa)


def lda_scores(
    pair: ScatterPair,
    column_to_neuron: Optional[np.ndarray] = None,
    eps: float = LdaConst.EPS,
) -> LDAScores:
    sigma_w = np.clip(np.diag(pair.sw).copy(), 0.0, None)
    sigma_b = np.clip(np.diag(pair.sb).copy(), 0.0, None)
    v = sigma_b / (sigma_w + eps)
    separable = (sigma_w < eps) & (sigma_b > eps)
    if column_to_neuron is None:
        column_to_neuron = np.arange(v.size)
    return LDAScores(sigma_w, sigma_b, v, separable, np.asarray(column_to_neuron))


def generalized_eig_oracle(
    sb: np.ndarray, sw: np.ndarray, eps: float = LdaConst.EPS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    求解 Σb e = v (Σw + εI) e 的全部特征对

    Returns:
        (特征值降序, 对应特征向量按列)
    """
    reg = sw + eps * np.eye(sw.shape[0])
    try:
        vals, vecs = scipy.linalg.eigh(sb, reg)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"广义特征值求解失败: {e}") from e
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


# ── 选择 ──────────────────────────────────────────────────────────────────


def eta_threshold(values: np.ndarray, eta: float) -> float:
    """t = η · 样本标准差（1/(N−1)）"""
    if values.size < 2:
        raise PruneError(f"样本数 {values.size} < 2，无法计算标准差")
    return float(eta * np.std(values, ddof=1))


def select_neurons(
    scores: LDAScores, policy: LdaPolicy, eta: Optional[float] = None
) -> np.ndarray:
    """返回保留的神经元下标（原始编号，升序）；被清洗掉的列永远不会被选中"""
    m = scores.v.size
    order = scores.ranking()
    if policy.kind == "topk":
        cols = order[: min(policy.k, m)]
    elif policy.kind == "threshold":
        cols = np.flatnonzero((scores.v >= policy.value) | scores.separable)
    else:
        if eta is None:
            raise PruneError("eta 策略需要给出 η")
        finite = scores.v[~scores.separable]
        t = eta_threshold(finite, eta) if finite.size >= 2 else 0.0
        keep = scores.v >= t
        if t <= 0.0:
            keep &= scores.v > 0.0
        cols = np.flatnonzero(keep | scores.separable)
    if cols.size == 0:
        raise PruneError("末层隐层没有神经元被选中")
    return np.sort(scores.column_to_neuron[cols])


# ── 诊断 ──────────────────────────────────────────────────────────────────


def offdiag_ratio(s: np.ndarray) -> float:
    """‖offdiag(S)‖₁ / ‖diag(S)‖₁，衡量末层表示的去相关程度"""
    diag = np.abs(np.diag(s)).sum()
    off = np.abs(s).sum() - diag
    return float(off / diag) if diag > 0 else float("inf")


def oracle_topk_overlap(pair: ScatterPair, scores: LDAScores, k: int = 5) -> float:
    """对角捷径的前 k 列与前 k 个广义特征向量主分量所在列的重合比例"""
    k = min(k, scores.v.size)
    _, vecs = generalized_eig_oracle(pair.sb, pair.sw)
    oracle_cols = {int(np.argmax(np.abs(vecs[:, i]))) for i in range(k)}
    diag_cols = {int(c) for c in scores.ranking()[:k]}
    return len(oracle_cols & diag_cols) / k


def lda_diagnostics(pair: ScatterPair, scores: LDAScores) -> Dict[str, float]:
    return {
        "offdiag_sw": offdiag_ratio(pair.sw),
        "offdiag_sb": offdiag_ratio(pair.sb),
        "oracle_top5_overlap": oracle_topk_overlap(pair, scores, 5),
        "separable_columns": float(scores.separable.sum()),
    }


def dump_lda_csv(fm: FiringMatrix, scores: LDAScores, out_dir: str) -> None:
    """导出发放矩阵与每列的 σ²w / σ²b / v_j"""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    firing = pd.DataFrame(fm.X, columns=[f"n{int(j)}" for j in fm.column_to_neuron])
    firing.insert(0, "label", fm.labels)
    firing.to_csv(root / "lda_firing.csv", index=False)

    rank = np.empty(scores.v.size, dtype=np.int64)
    rank[scores.ranking()] = np.arange(scores.v.size)
    pd.DataFrame(
        {
            "neuron": scores.column_to_neuron,
            "sigma_w": scores.sigma_w,
            "sigma_b": scores.sigma_b,
            "v": scores.v,
            "separable": scores.separable,
            "rank": rank,
        }
    ).to_csv(root / "lda_scores.csv", index=False)
    logger.info(f"{MSG_PREFIX} [LDA] 已导出 {root}/lda_firing.csv, lda_scores.csv")
