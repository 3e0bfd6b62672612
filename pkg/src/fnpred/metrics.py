"""Evaluation metrics for predicted function names.

Names are compared as lists of word labels.  By default both the predicted
and the true label lists are deduplicated before counting (set semantics),
so predicting a correct word twice neither helps nor hurts.  With
``literal=True`` the indicator sums run over the raw lists instead, and a
duplicated label is counted once per occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

KL_EPSILON = 1e-9


@dataclass
class EvalCounts:
    """True-positive / false-positive / false-negative label counts."""

    tp: int
    fp: int
    fn: int

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float


def word_level_counts(
    pred: Sequence[str], truth: Sequence[str], literal: bool = False
) -> EvalCounts:
    """Count label matches between one predicted and one true name.

    A predicted label is a true positive when it occurs anywhere in the true
    name, a false positive otherwise; a true label missing from the
    prediction is a false negative.  ``literal`` controls whether duplicate
    labels in either list are counted per occurrence or collapsed first.
    """
    truth_set = set(truth)
    pred_set = set(pred)
    pred_iter: Iterable[str] = pred if literal else pred_set
    truth_iter: Iterable[str] = truth if literal else truth_set
    tp = sum(1 for w in pred_iter if w in truth_set)
    fp = sum(1 for w in pred_iter if w not in truth_set)
    fn = sum(1 for w in truth_iter if w not in pred_set)
    return EvalCounts(tp, fp, fn)


def prf(counts: EvalCounts) -> PRF:
    """Compute precision, recall, F1 from counts; zero denominators yield 0.0."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRF(precision, recall, f1)


def weighted_macro(groups: Sequence[tuple[float, float, float, float]]) -> PRF:
    """Weight-normalized average of per-group (weight, P, R, F1) rows."""
    if not groups:
        raise ValueError("no groups to aggregate")
    weights = np.array([g[0] for g in groups], dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("group weights must be non-negative")
    total = weights.sum()
    if total == 0:
        raise ValueError("all group weights are zero")
    values = np.array([g[1:] for g in groups], dtype=np.float64)
    avg = weights @ values / total
    return PRF(float(avg[0]), float(avg[1]), float(avg[2]))


def evaluate_pairs(
    pairs: Iterable[tuple[Sequence[str], Sequence[str]]], literal: bool = False
) -> tuple[EvalCounts, PRF]:
    """Sum counts over (predicted, truth) pairs and score the totals."""
    total = EvalCounts(0, 0, 0)
    for pred, truth in pairs:
        total = total + word_level_counts(pred, truth, literal=literal)
    return total, prf(total)


def oov_ratio(test_labels: Iterable[str], train_vocab: Iterable[str]) -> float:
    """Fraction of test label occurrences absent from the training vocabulary.

    ``test_labels`` is a flat multiset of label tokens; duplicates count
    once per occurrence.
    """
    vocab = set(train_vocab)
    total = 0
    missing = 0
    for label in test_labels:
        total += 1
        if label not in vocab:
            missing += 1
    if total == 0:
        raise ValueError("empty test label set")
    return missing / total


def kl_divergence(p: np.ndarray, q: np.ndarray, epsilon: float = KL_EPSILON) -> float:
    """KL(p || q) between two distributions over the same support.

    Both inputs are smoothed by ``epsilon`` and renormalized before the
    computation, so zero entries on either side are well-defined.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distributions differ in shape: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be non-negative")
    p = p + epsilon
    q = q + epsilon
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))
