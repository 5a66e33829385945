"""Metrics: confusion matrix, f-score, positive-class precision, aggregates,
and the per-parameter gain over a small-model baseline.

The f-score is binary F1 on the positive class. Degenerate cases (no
positive predictions, or no true positives at all) are reported as flagged
zeros so batch evaluation never aborts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentationPolicy, eval_policy
from .datasets import DatasetManifest
from .records import Label
from .storage import ImageStore
from .training import ManifestData, preprocess_batch


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class EvalReport:
    model_id: str
    test_set: str
    confusion: ConfusionMatrix
    accuracy: float          # percentage
    f_score: float           # positive-class F1
    precision_pos: float
    recall_pos: float
    degenerate: bool = False
    skipped_records: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        obj = asdict(self)
        return json.dumps(obj, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        obj = json.loads(text)
        obj["confusion"] = ConfusionMatrix(**obj["confusion"])
        return cls(**obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class GainScore:
    model_id: str
    f_score: float
    parameter_count: int
    baseline_id: str
    gain: float


@dataclass
class Prediction:
    record_id: str
    label: Label
    positive_probability: float


def predict_batch(
    model: nn.Module,
    test_set: DatasetManifest,
    store: ImageStore,
    policy: Optional[AugmentationPolicy] = None,
    batch_size: int = 64,
    device: str = "cpu",
) -> tuple[list[Prediction], list[str]]:
    """Deterministic predictions in manifest order.

    Returns (predictions, skipped_record_ids); unreadable images are skipped
    and reported rather than silently dropped.
    """
    policy = policy or eval_policy()
    rows = []
    skipped = []
    images = []
    for row in test_set.rows:
        try:
            images.append(np.asarray(store.open(row.checksum)))
            rows.append(row)
        except Exception:
            skipped.append(row.record_id)

    model.eval()
    preds: list[Prediction] = []
    from .augment import apply as apply_policy

    with torch.no_grad():
        for start in range(0, len(rows), batch_size):
            chunk = list(range(start, min(start + batch_size, len(rows))))
            xs = [np.transpose(apply_policy(images[i], policy, seed=0), (2, 0, 1)) for i in chunk]
            logits = model(torch.from_numpy(np.stack(xs)).to(device))
            probs = torch.softmax(logits, dim=1)[:, 1].cpu().numpy()
            labels = logits.argmax(dim=1).cpu().numpy()
            for i, p, lab in zip(chunk, probs, labels):
                preds.append(
                    Prediction(
                        record_id=rows[i].record_id,
                        label=Label.POSITIVE if lab == 1 else Label.NEGATIVE,
                        positive_probability=float(p),
                    )
                )
    return preds, skipped


def score(
    predictions: Sequence[Prediction],
    labels: dict[str, Label],
    model_id: str = "model",
    test_set: str = "test",
    skipped: Sequence[str] = (),
) -> EvalReport:
    """Confusion matrix and derived metrics for aligned predictions/labels."""
    missing = [p.record_id for p in predictions if p.record_id not in labels]
    if missing:
        raise ValueError(f"predictions without matching labels: {missing[:5]}")

    tp = fp = fn = tn = 0
    for p in predictions:
        truth = labels[p.record_id]
        if p.label is Label.POSITIVE:
            if truth is Label.POSITIVE:
                tp += 1
            else:
                fp += 1
        else:
            if truth is Label.POSITIVE:
                fn += 1
            else:
                tn += 1
    cm = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)

    degenerate = False
    total = cm.total
    accuracy = 100.0 * (tp + tn) / total if total else 0.0
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f_score = 2 * precision * recall / (precision + recall)
    else:
        f_score, degenerate = 0.0, True

    return EvalReport(
        model_id=model_id,
        test_set=test_set,
        confusion=cm,
        accuracy=accuracy,
        f_score=f_score,
        precision_pos=precision,
        recall_pos=recall,
        degenerate=degenerate,
        skipped_records=list(skipped),
    )


@dataclass
class AggregateSummary:
    test_set: str
    n: int
    mean: dict[str, float]
    std: dict[str, float]
    single_report: bool = False


_AGG_METRICS = ("accuracy", "f_score", "precision_pos", "recall_pos")


def aggregate(reports: Sequence[EvalReport]) -> AggregateSummary:
    """Mean and sample standard deviation (n-1) per metric, one test set."""
    if not reports:
        raise ValueError("need at least one report")
    test_sets = {r.test_set for r in reports}
    if len(test_sets) > 1:
        raise ValueError(f"reports span multiple test sets: {sorted(test_sets)}")
    n = len(reports)
    mean, std = {}, {}
    for metric in _AGG_METRICS:
        values = [getattr(r, metric) for r in reports]
        m = sum(values) / n
        mean[metric] = m
        if n == 1:
            std[metric] = 0.0
        else:
            std[metric] = math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1))
    return AggregateSummary(test_set=reports[0].test_set, n=n, mean=mean, std=std, single_report=(n == 1))


def parameter_gain(
    candidate: tuple[float, int],
    baseline: tuple[float, int],
    model_id: str = "candidate",
    baseline_id: str = "squeezenet",
) -> GainScore:
    """f-score units gained per extra parameter over the baseline model."""
    f_c, p_c = candidate
    f_b, p_b = baseline
    if p_c == p_b:
        raise ZeroDivisionError("candidate and baseline have equal parameter counts")
    return GainScore(
        model_id=model_id,
        f_score=f_c,
        parameter_count=p_c,
        baseline_id=baseline_id,
        gain=(f_c - f_b) / (p_c - p_b),
    )
