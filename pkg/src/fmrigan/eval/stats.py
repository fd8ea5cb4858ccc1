"""Scalar statistics used by the evaluation protocols."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 20000


def zscore_series(series) -> np.ndarray:
    """Standardize with the population std; a constant series gives zeros."""
    x = np.asarray(series, dtype=np.float64)
    if x.size < 2:
        raise ValueError("z-scoring needs at least 2 samples")
    if np.ptp(x) == 0:
        return np.zeros_like(x)
    centered = x - x.mean()
    return centered / np.sqrt(np.mean(centered**2))


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = _CF_TINY if abs(d) < _CF_TINY else d
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs 0 <= x <= 1")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: float) -> float:
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc_regularized(df / 2.0, 0.5, df / (df + t * t)))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float


def ttest_ind(a, b, welch: bool = False) -> TTestResult:
    """Unpaired two-tailed t-test of mean(a) - mean(b).

    Pooled-variance Student test by default; ``welch=True`` uses separate
    variances with Welch-Satterthwaite degrees of freedom. Two constant
    groups with equal means give t = 0, p = 1.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n1, n2 = a.size, b.size
    if n1 < 2 or n2 < 2:
        raise ValueError("t-test needs at least 2 samples per group")
    m1, m2 = a.mean(), b.mean()
    v1, v2 = a.var(ddof=1), b.var(ddof=1)
    diff = m1 - m2
    if welch:
        se2 = v1 / n1 + v2 / n2
        df = se2**2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1)) if se2 > 0 else float(n1 + n2 - 2)
    else:
        df = float(n1 + n2 - 2)
        se2 = ((n1 - 1) * v1 + (n2 - 1) * v2) / df * (1.0 / n1 + 1.0 / n2)
    if se2 == 0:
        if diff == 0:
            return TTestResult(0.0, 1.0, df)
        return TTestResult(math.copysign(math.inf, diff), 0.0, df)
    t = diff / math.sqrt(se2)
    return TTestResult(float(t), student_t_two_tailed_p(t, df), float(df))


# --------------------------------------------------------------------------
# classification metrics


def auc_pairwise(labels, scores) -> float | None:
    """Mann-Whitney AUC: fraction of (positive, negative) pairs ranked
    correctly, ties counted as one half. ``None`` for single-class input."""
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=np.float64)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        log.warning("AUC undefined: labels contain a single class")
        return None
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def binary_cross_entropy(labels, scores, eps: float = 1e-7) -> float:
    y = np.asarray(labels, dtype=np.float64)
    s = np.clip(np.asarray(scores, dtype=np.float64), eps, 1 - eps)
    return float(np.mean(-(y * np.log(s) + (1 - y) * np.log(1 - s))))


def precision_recall_f1(labels, preds) -> tuple[float, float, float]:
    y = np.asarray(labels).astype(int)
    p = np.asarray(preds).astype(int)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class ClassifierReport:
    method: str
    ce_loss: float
    accuracy: float
    f1: float
    auc: float | None
    n_train: int = 0
    n_test: int = 0


def classification_metrics(labels, scores, threshold: float = 0.5, method: str = "") -> ClassifierReport:
    """CE, accuracy, F1 (positive class = 1 = ASD) and AUC for scores P(ASD)."""
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"labels and scores differ in length ({y.size} vs {s.size})")
    if s.size and (s.min() < 0 or s.max() > 1):
        raise ValueError("scores must lie in [0, 1]")
    preds = (s >= threshold).astype(int)
    _, _, f1 = precision_recall_f1(y, preds)
    return ClassifierReport(
        method=method,
        ce_loss=binary_cross_entropy(y, s),
        accuracy=float(np.mean(preds == y)),
        f1=f1,
        auc=auc_pairwise(y, s),
        n_test=int(y.size),
    )
