from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geom import LabeledCloud, sample_blocks
from ..segnet import ModelParams, predict
from .config import RunConfig


@dataclass
class EvalReport:
    iou: np.ndarray        # NaN marks a class absent from both labels and predictions
    miou: float
    confusion: np.ndarray  # rows: ground truth, columns: prediction

    def to_json(self) -> str:
        return json.dumps({
            "iou": [None if np.isnan(v) else float(v) for v in self.iou],
            "miou": self.miou,
            "confusion": self.confusion.astype(int).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        iou = np.array([np.nan if v is None else v for v in d["iou"]], dtype=np.float64)
        return cls(iou, float(d["miou"]), np.array(d["confusion"], dtype=np.int64))


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64) * num_classes + np.asarray(preds, dtype=np.int64)
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(confusion: np.ndarray) -> np.ndarray:
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), np.nan)


def mean_iou(per_class: Sequence[float]) -> float:
    """Mean over the defined (non-NaN) per-class IoUs."""
    v = np.asarray(per_class, dtype=np.float64)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


def report_from_confusion(confusion: np.ndarray) -> EvalReport:
    iou = iou_from_confusion(confusion)
    return EvalReport(iou, mean_iou(iou), np.asarray(confusion, dtype=np.int64))


@dataclass
class PreparedCloud:
    cloud: LabeledCloud
    blocks: list


def prepare(clouds: Sequence[LabeledCloud], config: RunConfig) -> list[PreparedCloud]:
    """Deterministic covering blocks per cloud, reusable across evaluations."""
    out = []
    for i, cloud in enumerate(clouds):
        if cloud.labels is None:
            raise ValueError("evaluate needs labeled clouds")
        blocks = sample_blocks(cloud, config.block_xy, config.points_per_block,
                               config.seed * 7919 + i, cover_all=True)
        out.append(PreparedCloud(cloud, blocks))
    return out


def predict_cloud(params: ModelParams, prepared: PreparedCloud) -> np.ndarray:
    """Per-point argmax labels; later blocks win where blocks overlap."""
    pred = np.full(len(prepared.cloud), -1, dtype=np.int64)
    for block in prepared.blocks:
        pred[block.source_indices] = predict(params, block).argmax(axis=1)
    return pred


def evaluate(params: ModelParams, clouds: Sequence[LabeledCloud | PreparedCloud],
             config: RunConfig) -> EvalReport:
    C = params.config.num_classes
    cm = np.zeros((C, C), dtype=np.int64)
    if clouds and not isinstance(clouds[0], PreparedCloud):
        clouds = prepare(clouds, config)
    for item in clouds:
        cm += confusion_matrix(item.cloud.labels, predict_cloud(params, item), C)
    return report_from_confusion(cm)
