"""
模型文件读写

  <name>.json   ModelDocument：版本、节点列表、输入形状、类别数、末层隐层 id
  <name>.bin    sidecar：所有权重按节点顺序拼接的小端 float64 数据，
                文档中每个节点的 blobs 记录 {键: 偏移 + 形状}

掩码（幅值剪枝基线）以 "mask:<键>" 的形式一并存放。
"""

from pathlib import Path
from typing import Dict, List, Tuple, Optional

import numpy as np
import torch
from pydantic import ValidationError

from .graph import NetGraph, LayerNode
from ..utils.errors import ModelFormatError
from ..utils.logger import MSG_PREFIX, logger
from ..utils.config import BlobRef, NodeDoc, ModelDocument

BLOB_DTYPE = "<f8"
MASK_PREFIX = "mask:"


def dump_model(g: NetGraph, weights_file: Optional[str] = None) -> Tuple[str, bytes]:
    """序列化为 (JSON 文本, sidecar 字节)"""
    chunks: List[bytes] = []
    offset = 0
    nodes: List[NodeDoc] = []
    for node in g.nodes:
        blobs: Dict[str, BlobRef] = {}
        stores = list(node.weights.items()) + [
            (MASK_PREFIX + k, v) for k, v in node.masks.items()
        ]
        for key, t in stores:
            arr = t.detach().cpu().numpy().astype(BLOB_DTYPE)
            blobs[key] = BlobRef(offset=offset, shape=list(arr.shape))
            chunks.append(arr.tobytes())
            offset += arr.size
        nodes.append(
            NodeDoc(
                id=node.id,
                kind=node.kind,
                inputs=list(node.inputs),
                params=dict(node.params),
                blobs=blobs,
            )
        )
    doc = ModelDocument(
        name=g.name,
        input_shape=list(g.input_shape),
        num_classes=g.num_classes,
        last_hidden=g.last_hidden,
        weights_file=weights_file if offset else None,
        nodes=nodes,
    )
    return doc.model_dump_json(indent=2), b"".join(chunks)


def loads_model(text: str, blob: bytes = b"") -> NetGraph:
    try:
        doc = ModelDocument.model_validate_json(text)
    except ValidationError as e:
        raise ModelFormatError(f"模型文档不符合格式: {e}") from e

    data = np.frombuffer(blob, dtype=BLOB_DTYPE) if blob else np.empty(0)
    nodes: List[LayerNode] = []
    for nd in doc.nodes:
        weights: Dict[str, torch.Tensor] = {}
        masks: Dict[str, torch.Tensor] = {}
        for key, ref in nd.blobs.items():
            count = int(np.prod(ref.shape)) if ref.shape else 1
            if ref.offset + count > data.size:
                raise ModelFormatError(f"权重 {key} 超出 sidecar 范围", node=nd.id)
            arr = data[ref.offset : ref.offset + count].reshape(ref.shape)
            t = torch.from_numpy(arr.astype(np.float64))
            if key.startswith(MASK_PREFIX):
                masks[key[len(MASK_PREFIX) :]] = t
            else:
                weights[key] = t
        nodes.append(
            LayerNode(
                id=nd.id,
                kind=nd.kind,
                inputs=list(nd.inputs),
                params=dict(nd.params),
                weights=weights,
                masks=masks,
            )
        )
    return NetGraph(
        nodes, doc.input_shape, doc.num_classes, doc.last_hidden, name=doc.name
    )


def save_model(g: NetGraph, path: str) -> Path:
    """写出 path（.json）与同名 .bin，返回文档路径"""
    doc_path = Path(path).with_suffix(".json")
    doc_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path = doc_path.with_suffix(".bin")
    text, blob = dump_model(g, weights_file=bin_path.name)
    doc_path.write_text(text, "utf-8")
    if blob:
        bin_path.write_bytes(blob)
    logger.info(f"{MSG_PREFIX} [模型] 已保存 {doc_path}（{len(g.nodes)} 层）")
    return doc_path


def load_model(path: str) -> NetGraph:
    doc_path = Path(path)
    try:
        text = doc_path.read_text("utf-8")
    except OSError as e:
        raise ModelFormatError(f"无法读取模型文件 {path}: {e}") from e
    try:
        weights_file = ModelDocument.model_validate_json(text).weights_file
    except ValidationError as e:
        raise ModelFormatError(f"模型文档不符合格式: {e}") from e
    blob = b""
    if weights_file:
        bin_path = doc_path.parent / weights_file
        if not bin_path.exists():
            raise ModelFormatError(f"缺少权重文件 {bin_path}")
        blob = bin_path.read_bytes()
    g = loads_model(text, blob)
    logger.info(f"{MSG_PREFIX} [模型] 已读取 {doc_path}（{len(g.nodes)} 层）")
    return g
