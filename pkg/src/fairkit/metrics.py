"""Group accuracy/AUC metrics, conjunctive improvement scores and empirical
fairness-criterion checks.

Accuracy-family numbers are stored in percent, AUC-family numbers as
fractions, so reports line up with the usual published tables.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._validation import check_scores
from .errors import DomainError, MissingClassError, MissingGroupError, ShapeError

DEFAULT_ALPHAS = (0.5, 0.75)
CRITERIA = ("demographic_parity", "equalized_odds", "equality_of_opportunity")
DUMP_HEADER = ("score", "pred", "label", "group", "synthetic")


@dataclass
class PredictionDump:
    """Per-example positive-class score, predicted label, true label and group."""

    score: np.ndarray
    pred: np.ndarray
    label: np.ndarray
    group: np.ndarray
    synthetic: np.ndarray = None

    def __post_init__(self):
        self.score = check_scores(self.score)
        self.pred = np.asarray(self.pred, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.group = np.asarray(self.group, dtype=np.int64)
        if self.synthetic is None:
            self.synthetic = np.zeros(len(self.score), dtype=bool)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        n = len(self.score)
        if any(len(a) != n for a in (self.pred, self.label, self.group, self.synthetic)):
            raise ShapeError("dump columns differ in length")

    def __len__(self):
        return len(self.score)

    @property
    def groups(self):
        return np.unique(self.group)

    def where(self, mask):
        return PredictionDump(self.score[mask], self.pred[mask], self.label[mask],
                              self.group[mask], self.synthetic[mask])

    def with_pred(self, pred):
        return PredictionDump(self.score, pred, self.label, self.group, self.synthetic)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DUMP_HEADER)
        for row in zip(self.score, self.pred, self.label, self.group, self.synthetic):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2]), int(row[3]), int(row[4])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def read_csv(cls, path_or_text):
        if "\n" in str(path_or_text):
            fh = io.StringIO(path_or_text)
        else:
            fh = open(path_or_text, newline="")
        with fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != DUMP_HEADER:
                raise ShapeError(f"dump header must be {','.join(DUMP_HEADER)}")
            rows = [r for r in reader if r]
        cols = list(zip(*rows)) if rows else [()] * 5
        return cls(np.array(cols[0], dtype=np.float64), np.array(cols[1], dtype=np.int64),
                   np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                   np.array(cols[4], dtype=np.int64).astype(bool))


def auc(scores, labels):
    """Mann-Whitney AUC, ties counted as one half (midranks)."""
    scores = check_scores(scores)
    labels = np.asarray(labels)
    if labels.shape != scores.shape:
        raise ShapeError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MissingClassError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class GroupStats:
    n: int
    acc: float
    auc: float | None = None
    tpr: float | None = None
    fpr: float | None = None


def _rate(mask, pred):
    return float(np.mean(pred[mask] == 1)) if mask.any() else None


def _check_groups(dump, groups):
    groups = dump.groups if groups is None else np.asarray(groups)
    for g in groups:
        if not np.any(dump.group == g):
            raise MissingGroupError(f"group {int(g)} has no examples")
    if len(groups) < 2:
        raise MissingGroupError("gap metrics need at least two groups")
    return groups


def accuracy_metrics(dump, groups=None):
    """Overall accuracy plus per-group accuracy, gap and minimum (percent)."""
    groups = _check_groups(dump, groups)
    correct = dump.pred == dump.label
    per = {}
    for g in groups:
        m = dump.group == g
        per[int(g)] = GroupStats(int(m.sum()), 100.0 * float(correct[m].mean()),
                                 tpr=_rate(m & (dump.label == 1), dump.pred),
                                 fpr=_rate(m & (dump.label == 0), dump.pred))
    accs = {g: s.acc for g, s in per.items()}
    worst = min(accs, key=lambda g: (accs[g], g))
    return {"acc": 100.0 * float(correct.mean()), "acc_gap": max(accs.values()) - accs[worst],
            "acc_min": accs[worst], "acc_min_group": worst, "groups": per}


def auc_metrics(dump, groups=None):
    """Overall and per-group AUC with gap and minimum (fractions)."""
    groups = _check_groups(dump, groups)
    per = {}
    for g in groups:
        m = dump.group == g
        try:
            per[int(g)] = auc(dump.score[m], dump.label[m])
        except MissingClassError as exc:
            raise MissingClassError(f"group {int(g)}: {exc}") from None
    worst = min(per, key=lambda g: (per[g], g))
    return {"auc": auc(dump.score, dump.label), "auc_gap": max(per.values()) - per[worst],
            "auc_min": per[worst], "auc_min_group": worst, "groups": per}


def _pair(obj, first, second):
    if isinstance(obj, (tuple, list)):
        return float(obj[0]), float(obj[1])
    if isinstance(obj, dict):
        return float(obj[first]), float(obj[second])
    return float(getattr(obj, first)), float(getattr(obj, second))


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")


def cai(baseline, debiased, alpha):
    """Conjunctive accuracy improvement of ``debiased`` over ``baseline``.

    Each argument is ``(acc, acc_gap)`` as a tuple, mapping or object with
    those attributes, in consistent units.
    """
    _check_alpha(alpha)
    acc_b, gap_b = _pair(baseline, "acc", "acc_gap")
    acc_d, gap_d = _pair(debiased, "acc", "acc_gap")
    return alpha * (gap_b - gap_d) + (1.0 - alpha) * (acc_d - acc_b)


def cauci(baseline, debiased, alpha):
    """Same form as :func:`cai` on ``(auc, auc_gap)``."""
    _check_alpha(alpha)
    auc_b, gap_b = _pair(baseline, "auc", "auc_gap")
    auc_d, gap_d = _pair(debiased, "auc", "auc_gap")
    return alpha * (gap_b - gap_d) + (1.0 - alpha) * (auc_d - auc_b)


def accuracy_half_width(p, n):
    return 1.96 * math.sqrt(p * (1.0 - p) / n)


def confidence_interval(metric, dump, *, seed=0, resamples=1000):
    """95% half-width for accuracy (normal approximation) or AUC (bootstrap).

    Returns ``None`` when fewer than 10 examples are available. Accuracy
    half-widths come back in percent, AUC half-widths as fractions.
    """
    n = len(dump)
    if n < 10:
        return None
    if metric == "acc":
        return 100.0 * accuracy_half_width(float(np.mean(dump.pred == dump.label)), n)
    if metric != "auc":
        raise DomainError(f"unknown metric {metric!r}")
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        lab = dump.label[idx]
        if lab.min() == lab.max():
            continue
        stats.append(auc(dump.score[idx], lab))
    if not stats:
        return None
    lo, hi = np.percentile(stats, [2.5, 97.5])
    return float((hi - lo) / 2.0)


@dataclass
class FairnessGapReport:
    criterion: str
    max_deviation: float
    table: list = field(default_factory=list)
    empty_cells: list = field(default_factory=list)


def fairness_check(dump, criterion, opportunity_label=None):
    """Largest |P(Yhat=v | S=s, cond) - P(Yhat=v | cond)| over v, s and conditions.

    ``cond`` is empty for demographic parity, each true label for equalized
    odds and ``Y = opportunity_label`` for equality of opportunity. Empty
    conditional cells are skipped and listed in ``empty_cells``.
    """
    if criterion not in CRITERIA:
        raise DomainError(f"criterion must be one of {CRITERIA}")
    if criterion == "demographic_parity":
        conditions = [None]
    elif criterion == "equalized_odds":
        conditions = [int(v) for v in np.unique(dump.label)]
    else:
        if opportunity_label is None:
            raise DomainError("equality of opportunity needs a label value")
        conditions = [int(opportunity_label)]
    values = np.unique(dump.pred)
    table, empty, worst = [], [], 0.0
    for cond in conditions:
        base = np.ones(len(dump), dtype=bool) if cond is None else dump.label == cond
        if not base.any():
            empty.append((cond, None))
            continue
        for s in dump.groups:
            cell = base & (dump.group == s)
            if not cell.any():
                empty.append((cond, int(s)))
                continue
            for v in values:
                p_all = float(np.mean(dump.pred[base] == v))
                p_s = float(np.mean(dump.pred[cell] == v))
                dev = abs(p_s - p_all)
                table.append({"condition": cond, "group": int(s), "pred": int(v),
                              "p_group": p_s, "p_all": p_all, "deviation": dev})
                worst = max(worst, dev)
    return FairnessGapReport(criterion, worst, table, empty)


ROW_ORDER = ("acc", "acc_gap", "acc_min", "CAI_0.5", "CAI_0.75",
             "AUC", "AUC_gap", "AUC_min", "CAUCI_0.5", "CAUCI_0.75")


@dataclass
class EvalReport:
    """Metric table for one method's predictions on one test set."""

    acc: float
    acc_gap: float
    acc_min: float
    acc_min_group: int
    auc: float | None = None
    auc_gap: float | None = None
    auc_min: float | None = None
    auc_min_group: int | None = None
    groups: dict = field(default_factory=dict)
    cai: dict = field(default_factory=dict)
    cauci: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)
    note: str = ""

    def rows(self):
        """Metric rows in table order; absent entries are ``None``."""
        out = {"acc": self.acc, "acc_gap": self.acc_gap, "acc_min": self.acc_min}
        for a in DEFAULT_ALPHAS:
            out[f"CAI_{a:g}"] = self.cai.get(a)
        out.update({"AUC": self.auc, "AUC_gap": self.auc_gap, "AUC_min": self.auc_min})
        for a in DEFAULT_ALPHAS:
            out[f"CAUCI_{a:g}"] = self.cauci.get(a)
        for a, v in self.cai.items():
            out.setdefault(f"CAI_{a:g}", v)
        for a, v in self.cauci.items():
            out.setdefault(f"CAUCI_{a:g}", v)
        out["acc_ci95"] = self.ci.get("acc")
        out["AUC_ci95"] = self.ci.get("auc")
        return out

    def with_baseline(self, baseline, alphas=DEFAULT_ALPHAS):
        self.cai = {a: cai(baseline, self, a) for a in alphas}
        if self.auc is not None and baseline.auc is not None:
            self.cauci = {a: cauci(baseline, self, a) for a in alphas}
        else:
            self.cauci = {}
            self.note = "AUC fields missing; CAUCI rows omitted"
        return self


def evaluate(dump, baseline=None, *, alphas=DEFAULT_ALPHAS, ci_seed=0, with_ci=True):
    """Full :class:`EvalReport` for a dump; CAI/CAUCI filled when a baseline report is given."""
    acc = accuracy_metrics(dump)
    try:
        am = auc_metrics(dump)
    except MissingClassError:
        am = None
    groups = acc["groups"]
    if am is not None:
        for g, v in am["groups"].items():
            groups[g].auc = v
    report = EvalReport(acc["acc"], acc["acc_gap"], acc["acc_min"], acc["acc_min_group"],
                        None if am is None else am["auc"], None if am is None else am["auc_gap"],
                        None if am is None else am["auc_min"],
                        None if am is None else am["auc_min_group"], groups)
    if with_ci:
        report.ci = {"acc": confidence_interval("acc", dump)}
        if am is not None:
            report.ci["auc"] = confidence_interval("auc", dump, seed=ci_seed)
        for g in groups:
            sub = dump.where(dump.group == g)
            report.ci[f"acc[{g}]"] = confidence_interval("acc", sub)
    if baseline is not None:
        report.with_baseline(baseline, alphas)
    return report


def _fmt(name, value):
    if value is None:
        return "-"
    if name.startswith(("AUC", "CAUCI")):
        return f"{value:.3f}"
    return f"{value:.2f}"


def format_table(columns, *, marks=(), best=None):
    """Aligned text table with metrics as rows and methods as columns.

    ``marks`` names columns to tag with ``*`` (methods using extra
    information); ``best`` maps a row name to the column that wins it,
    tagged with ``^``.
    """
    names = list(columns)
    heads = [n + ("*" if n in marks else "") for n in names]
    all_rows = []
    for rep in columns.values():
        for r in rep.rows():
            if r not in all_rows:
                all_rows.append(r)
    width = max([len(h) for h in heads] + [9]) + 2
    lines = ["metric".ljust(12) + "".join(h.rjust(width) for h in heads)]
    for r in all_rows:
        cells = []
        for n in names:
            cell = _fmt(r, columns[n].rows().get(r))
            if best and best.get(r) == n:
                cell += "^"
            cells.append(cell.rjust(width))
        if all(c.strip() == "-" for c in cells):
            continue
        lines.append(r.ljust(12) + "".join(cells))
    notes = [f"{n}: {columns[n].note}" for n in names if columns[n].note]
    if marks:
        notes.append("* uses an additional balanced validation set")
    return "\n".join(lines + notes) + "\n"


def format_csv(columns):
    """Machine-readable twin of :func:`format_table` (full precision)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(["metric"] + names)
    all_rows = []
    for rep in columns.values():
        for r in rep.rows():
            if r not in all_rows:
                all_rows.append(r)
    for r in all_rows:
        vals = [columns[n].rows().get(r) for n in names]
        w.writerow([r] + ["" if v is None else repr(float(v)) for v in vals])
    return buf.getvalue()


def best_per_row(columns, exclude=()):
    """Column that wins each row: highest for acc/AUC/min/CAI rows, lowest for gaps."""
    best = {}
    candidates = [n for n in columns if n not in exclude]
    for r in ROW_ORDER:
        vals = {n: columns[n].rows().get(r) for n in candidates}
        vals = {n: v for n, v in vals.items() if v is not None}
        if not vals:
            continue
        pick = min if r.endswith("_gap") else max
        best[r] = pick(vals, key=lambda n: vals[n])
    return best
