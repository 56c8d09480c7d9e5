"""Equalized-odds post-processing by per-group (randomized) thresholds.

Each group gets a pair ``t_lo <= t_hi`` and a mixing weight ``p``: scores at
or above ``t_hi`` are positive, scores below ``t_lo`` negative, and scores in
between positive with probability ``p``. That is the same as using
threshold ``t_lo`` with probability ``p`` and ``t_hi`` otherwise, so the
expected ROC point is the ``p``-mixture of the two thresholds' points.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import EmptyCellError, MissingGroupError, ShapeError
from .metrics import PredictionDump


@dataclass
class GroupRule:
    t_lo: float
    t_hi: float
    p: float
    tpr: float
    fpr: float


@dataclass
class GroupThresholds:
    rules: dict = field(default_factory=dict)
    target: tuple = (0.0, 0.0)
    residual: float = 0.0
    val_accuracy: float = 0.0

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "t_lo", "t_hi", "p"])
        for g in sorted(self.rules):
            r = self.rules[g]
            w.writerow([g, repr(r.t_lo), repr(r.t_hi), repr(r.p)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def roc_points(scores, labels):
    """ROC points of the rules ``score >= t`` for every useful cut.

    Returns ``(thresholds, fpr, tpr)`` ordered from the all-negative rule
    (a threshold just above the top score) down to the all-positive rule.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    uniq = np.unique(scores)[::-1]
    cuts = np.concatenate([[np.nextafter(uniq[0], np.inf)], uniq])
    tpr = np.array([np.sum((scores >= t) & (labels == 1)) for t in cuts]) / n_pos
    fpr = np.array([np.sum((scores >= t) & (labels == 0)) for t in cuts]) / n_neg
    return cuts, fpr, tpr


def upper_hull(fpr, tpr):
    """Vertices of the concave upper hull, (0,0) to (1,1), by increasing fpr."""
    pts = sorted(set(zip(np.round(fpr, 15), np.round(tpr, 15))) | {(0.0, 0.0), (1.0, 1.0)})
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    # keep the top of any vertical run
    out = []
    for x, y in hull:
        if out and out[-1][0] == x:
            out[-1] = (x, max(out[-1][1], y))
        else:
            out.append((x, y))
    return np.array(out)


def _hull_value(hull, f):
    return float(np.interp(f, hull[:, 0], hull[:, 1]))


def _candidates(hulls):
    """fpr values where the pointwise minimum of the hulls can have a kink."""
    xs = set()
    for h in hulls:
        xs.update(h[:, 0].tolist())
    for i in range(len(hulls)):
        for j in range(i + 1, len(hulls)):
            a, b = hulls[i], hulls[j]
            grid = np.unique(np.concatenate([a[:, 0], b[:, 0]]))
            d = np.array([_hull_value(a, x) - _hull_value(b, x) for x in grid])
            for k in range(len(grid) - 1):
                if d[k] * d[k + 1] < 0:
                    xs.add(float(grid[k] - d[k] * (grid[k + 1] - grid[k]) / (d[k + 1] - d[k])))
    return sorted(xs)


def nearest_mixture(target, cuts, fpr, tpr):
    """Two-threshold mixture whose expected ROC point is nearest ``target``.

    Returns ``(t_lo, t_hi, p, point, distance)``.
    """
    P = np.column_stack([fpr, tpr])
    tx = np.asarray(target, dtype=np.float64)
    # segment from point i (stricter threshold) to point j (looser)
    A = P[:, None, :]
    B = P[None, :, :]
    d = B - A
    L = np.sum(d * d, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(L > 0, np.sum((tx - A) * d, axis=2) / L, 0.0)
    lam = np.clip(lam, 0.0, 1.0)
    proj = A + lam[..., None] * d
    dist = np.sqrt(np.sum((proj - tx) ** 2, axis=2))
    # restrict to i <= j so t_hi = cuts[i] >= t_lo = cuts[j]
    dist = np.where(np.triu(np.ones_like(dist, dtype=bool)), dist, np.inf)
    # among (near-)exact pairs prefer the narrowest band of randomized scores
    span = np.abs(np.arange(len(P))[None, :] - np.arange(len(P))[:, None])
    ok = dist <= dist.min() + 1e-12
    flat = int(np.argmin(np.where(ok, span, np.iinfo(np.int64).max)))
    i, j = divmod(flat, dist.shape[1])
    p = float(lam[i, j])
    if i == j or p >= 1.0 - 1e-12:
        i, p = j, 1.0
    elif p <= 1e-12:
        j, p = i, 1.0
    return float(cuts[j]), float(cuts[i]), p, P[i] + p * (P[j] - P[i]), float(dist.min())


def fit(dump, groups=None):
    """Per-group rules equalizing (FPR, TPR) at the most accurate common point.

    The common point is searched on the pointwise minimum of the groups'
    ROC upper hulls (where every group can reach it by randomizing), picking
    the highest validation accuracy; ties go to higher TPR, then lower FPR.
    """
    groups = dump.groups if groups is None else np.asarray(groups)
    if len(groups) == 0:
        raise MissingGroupError("no groups to fit")
    rocs, hulls, counts = {}, [], {}
    for g in groups:
        m = dump.group == g
        for y in (0, 1):
            if not np.any(m & (dump.label == y)):
                raise EmptyCellError(f"validation cell (group={int(g)}, label={y}) is empty",
                                     (int(g), y))
        rocs[int(g)] = roc_points(dump.score[m], dump.label[m])
        hulls.append(upper_hull(rocs[int(g)][1], rocs[int(g)][2]))
        counts[int(g)] = (int(np.sum(m & (dump.label == 1))), int(np.sum(m & (dump.label == 0))))
    n_pos = sum(c[0] for c in counts.values())
    n_neg = sum(c[1] for c in counts.values())
    n = n_pos + n_neg
    best = None
    for f in _candidates(hulls):
        t = min(_hull_value(h, f) for h in hulls)
        acc = (n_pos * t + n_neg * (1.0 - f)) / n
        key = (round(acc, 12), round(t, 12), -round(f, 12))
        if best is None or key > best[0]:
            best = (key, f, t, acc)
    _, f, t, acc = best
    rules = {}
    for g, (cuts, fp, tp) in rocs.items():
        t_lo, t_hi, p, point, _ = nearest_mixture((f, t), cuts, fp, tp)
        rules[g] = GroupRule(t_lo, t_hi, p, float(point[1]), float(point[0]))
    achieved = [(r.fpr, r.tpr) for r in rules.values()]
    residual = 0.0
    for a in achieved:
        for b in achieved:
            residual = max(residual, abs(a[0] - b[0]) + abs(a[1] - b[1]))
    return GroupThresholds(rules, (f, t), residual, acc)


def apply(thresholds, dump, *, seed=0):
    """Relabel ``dump`` with the fitted rules; scores are left untouched.

    Rows falling between ``t_lo`` and ``t_hi`` are resolved by seeded
    systematic sampling along the score order: one uniform offset per group,
    then every row is positive with marginal probability ``p`` while the
    realized positive share of the band stays within one row of ``p``.
    """
    unseen = set(np.unique(dump.group).tolist()) - set(thresholds.rules)
    if unseen:
        raise MissingGroupError(f"no thresholds for groups {sorted(unseen)}")
    rng = np.random.default_rng(seed)
    pred = np.zeros(len(dump), dtype=np.int64)
    for g in sorted(thresholds.rules):
        r = thresholds.rules[g]
        offset = rng.random()
        idx = np.flatnonzero(dump.group == g)
        s = dump.score[idx]
        pred[idx[s >= r.t_hi]] = 1
        band = idx[(s >= r.t_lo) & (s < r.t_hi)]
        if len(band):
            band = band[np.argsort(dump.score[band], kind="stable")]
            k = np.arange(len(band) + 1)
            picks = np.diff(np.floor(k * r.p + offset))
            pred[band] = picks.astype(np.int64)
    return dump.with_pred(pred)


class BestThresholdPostprocessor(BaseEstimator):
    """Estimator wrapper: ``fit(scores, y, groups)`` then ``predict(scores, groups)``."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, scores, y, groups):
        dump = _as_dump(scores, groups, y)
        self.thresholds_ = fit(dump)
        return self

    def predict(self, scores, groups):
        check_is_fitted(self, "thresholds_")
        dump = _as_dump(scores, groups)
        return apply(self.thresholds_, dump, seed=self.random_state).pred


def _as_dump(scores, groups, y=None):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        scores = scores[:, -1]
    groups = np.asarray(groups)
    if len(groups) != len(scores):
        raise ShapeError("scores and groups differ in length")
    labels = np.zeros(len(scores), dtype=np.int64) if y is None else np.asarray(y)
    return PredictionDump(scores, np.zeros(len(scores), dtype=np.int64), labels, groups)
