"""Task metrics: accuracy, binary F1, Matthews correlation, Pearson r."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from sklearn.metrics import f1_score, matthews_corrcoef

log = logging.getLogger(__name__)

METRICS = ("accuracy", "f1", "matthews", "pearson")


def compute_metric(
    predictions: Sequence,
    golds: Sequence,
    metric: str,
    positive_label=None,
) -> float:
    """Score predictions against golds.

    F1 is the binary F1 of ``positive_label`` (defaults to the greatest
    label).  Pearson returns 0 with a warning when either side has zero
    variance.
    """
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    if not predictions:
        raise ValueError("cannot score zero predictions")
    if metric == "accuracy":
        return float(np.mean([p == g for p, g in zip(predictions, golds)]))
    if metric == "f1":
        if positive_label is None:
            positive_label = max(set(golds) | set(predictions))
        return float(f1_score(list(golds), list(predictions), pos_label=positive_label))
    if metric == "matthews":
        return float(matthews_corrcoef(list(golds), list(predictions)))
    if metric == "pearson":
        p = np.asarray(predictions, dtype=float)
        g = np.asarray(golds, dtype=float)
        if p.std() == 0.0 or g.std() == 0.0:
            log.warning("degenerate variance in pearson inputs; returning 0")
            return 0.0
        return float(np.corrcoef(p, g)[0, 1])
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
