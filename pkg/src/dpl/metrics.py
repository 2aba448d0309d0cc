"""Classification metrics and sampled-precision estimators."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    sample_precision: Optional[float] = None
    absolute_recall: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate(predictions, gold) -> EvalReport:
    pred = np.asarray(predictions, dtype=int)
    gold = np.asarray(gold, dtype=int)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {gold.size} gold labels")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    tn = int(np.sum((pred == 0) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport((tp + tn) / n if n else 0.0, precision, recall, f1, tp, fp, tn, fn)


def absolute_recall(sample_precision: float, n_positives: int) -> float:
    return sample_precision * n_positives


def sample_precision(positives, correct, sample_size: int | None = None, seed: int = 0) -> tuple:
    """Estimate precision from a uniform sample of positive outputs.

    ``correct`` judges one sampled positive: a callable, or a mapping /
    sequence indexed like ``positives``' elements. Returns
    ``(sample_precision, absolute_recall)``.
    """
    positives = list(positives)
    if not positives:
        raise ValueError("no positive extractions to sample")
    k = len(positives) if sample_size is None else sample_size
    if not 0 < k <= len(positives):
        raise ValueError(f"sample size {k} not in 1..{len(positives)}")
    judge = correct if callable(correct) else correct.__getitem__
    picked = np.random.default_rng(seed).choice(len(positives), size=k, replace=False)
    precision = sum(bool(judge(positives[i])) for i in picked) / k
    return precision, absolute_recall(precision, len(positives))
