"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import MissingClassError, ShapeError


def check_features(X, *, integer_codes=False):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if integer_codes and np.any(X != np.floor(X)):
        raise ShapeError("embedding inputs must be integer category codes")
    return X


def check_labels(y, n_rows, *, min_classes=2):
    """Encode labels as 0..k-1; returns ``(codes, classes)``."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_rows:
        raise ShapeError(f"labels must be a vector of length {n_rows}")
    classes, codes = np.unique(y, return_inverse=True)
    if len(classes) < min_classes:
        raise MissingClassError(f"need at least {min_classes} classes, got {len(classes)}")
    return codes.astype(np.int64), classes


def check_scores(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ShapeError("scores must be a vector")
    if not np.all(np.isfinite(scores)):
        raise ShapeError("scores must be finite")
    return scores
