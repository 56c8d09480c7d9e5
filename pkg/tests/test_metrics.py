import numpy as np
import pytest

from fairkit import metrics
from fairkit.errors import DomainError, MissingClassError, MissingGroupError, ShapeError
from fairkit.metrics import PredictionDump

from oracles import brute_auc, within


def dump_from(pred, label, group, score=None):
    pred = np.asarray(pred)
    score = pred.astype(float) if score is None else score
    return PredictionDump(score, pred, label, group)


def test_all_correct_two_groups():
    d = dump_from([0, 1, 0, 1], [0, 1, 0, 1], [0, 0, 1, 1])
    m = metrics.accuracy_metrics(d)
    assert m["acc"] == 100.0 and m["acc_gap"] == 0.0


def test_hand_counted_group_accuracies():
    # group 0: 9/10 correct, group 1: 6/10 correct
    label = np.zeros(20, dtype=int)
    pred = np.zeros(20, dtype=int)
    pred[[0]] = 1
    pred[[10, 11, 12, 13]] = 1
    group = np.repeat([0, 1], 10)
    m = metrics.accuracy_metrics(dump_from(pred, label, group))
    assert m["acc"] == pytest.approx(75.0)
    assert m["acc_gap"] == pytest.approx(30.0)
    assert m["acc_min"] == pytest.approx(60.0)
    assert m["acc_min_group"] == 1


def test_single_group_rejected():
    with pytest.raises(MissingGroupError):
        metrics.accuracy_metrics(dump_from([0, 1], [0, 1], [0, 0]))


def test_overall_accuracy_is_weighted_mean_of_groups():
    rng = np.random.default_rng(3)
    d = dump_from(rng.integers(0, 2, 300), rng.integers(0, 2, 300), rng.integers(0, 3, 300))
    m = metrics.accuracy_metrics(d)
    weighted = sum(s.n * s.acc for s in m["groups"].values()) / len(d)
    assert m["acc"] == pytest.approx(weighted)
    assert m["acc_gap"] >= 0
    assert m["acc_min"] == min(s.acc for s in m["groups"].values())


def test_auc_examples():
    assert metrics.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert metrics.auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5
    rng = np.random.default_rng(0)
    s = rng.random(200)
    y = rng.integers(0, 2, 200)
    assert abs(metrics.auc(s, y) - brute_auc(s, y)) < 1e-12


def test_auc_with_heavy_ties_matches_pairs():
    rng = np.random.default_rng(9)
    s = rng.integers(0, 4, 150) / 4
    y = rng.integers(0, 2, 150)
    assert abs(metrics.auc(s, y) - brute_auc(s, y)) < 1e-12


def test_auc_needs_both_classes():
    with pytest.raises(MissingClassError):
        metrics.auc([0.1, 0.2], [1, 1])


def test_nonfinite_scores_rejected():
    with pytest.raises(Exception):
        metrics.auc([0.1, np.nan], [0, 1])


def test_cai_examples():
    assert within(metrics.cai((71.8, 10.5), (78.8, 0.5), 0.5), 8.5, 0.05)
    assert within(metrics.cai((71.8, 10.5), (78.8, 0.5), 0.75), 9.3, 0.05)
    for a in (0.0, 0.3, 1.0):
        assert metrics.cai((71.8, 10.5), (71.8, 10.5), a) == 0.0


def test_cauci_examples():
    assert within(metrics.cauci((0.771, 0.123), (0.870, 0.011), 0.5), 0.106, 0.001)
    assert within(metrics.cauci((0.771, 0.123), (0.870, 0.011), 0.75), 0.109, 0.001)
    assert metrics.cauci((0.8, 0.1), (0.8, 0.1), 0.5) == 0.0


def test_cai_accepts_mappings_and_reports():
    assert metrics.cai({"acc": 70, "acc_gap": 10}, {"acc": 80, "acc_gap": 0}, 0.5) == 10.0


def test_alpha_out_of_range():
    with pytest.raises(DomainError):
        metrics.cai((1, 1), (1, 1), 1.5)
    with pytest.raises(DomainError):
        metrics.cauci((1, 1), (1, 1), -0.1)


def test_accuracy_half_width():
    assert metrics.accuracy_half_width(0.5, 100) == pytest.approx(0.098)
    assert metrics.accuracy_half_width(1.0, 100) == 0.0


def test_auc_ci_deterministic_and_small_n():
    rng = np.random.default_rng(11)
    d = PredictionDump(rng.random(120), rng.integers(0, 2, 120), rng.integers(0, 2, 120),
                       rng.integers(0, 2, 120))
    a = metrics.confidence_interval("auc", d, seed=11)
    b = metrics.confidence_interval("auc", d, seed=11)
    assert a == b and a > 0
    assert metrics.confidence_interval("acc", d.where(np.arange(120) < 9)) is None


def test_constant_prediction_is_fair_under_every_criterion():
    d = dump_from([1] * 8, [0, 1] * 4, [0, 0, 1, 1] * 2)
    for crit in metrics.CRITERIA:
        assert metrics.fairness_check(d, crit, opportunity_label=1).max_deviation == 0.0


def test_hand_built_eight_rows():
    # y=0: g0 preds (0, 1), g1 preds (0, 0); y=1: g0 preds (1, 1), g1 preds (0, 0)
    label = [0, 0, 0, 0, 1, 1, 1, 1]
    group = [0, 0, 1, 1, 0, 0, 1, 1]
    pred = [0, 1, 0, 0, 1, 1, 0, 0]
    d = dump_from(pred, label, group)
    assert metrics.fairness_check(d, "demographic_parity").max_deviation == pytest.approx(0.375)
    assert metrics.fairness_check(d, "equalized_odds").max_deviation == pytest.approx(0.5)
    assert metrics.fairness_check(d, "equality_of_opportunity", 1).max_deviation == pytest.approx(0.5)
    assert metrics.fairness_check(d, "equality_of_opportunity", 0).max_deviation == pytest.approx(0.25)


def test_parity_without_odds():
    label = [1, 1, 0, 0, 1, 1, 0, 0]
    group = [0, 0, 0, 0, 1, 1, 1, 1]
    pred = [1, 1, 0, 0, 0, 0, 1, 1]
    d = dump_from(pred, label, group)
    assert metrics.fairness_check(d, "demographic_parity").max_deviation == 0.0
    assert metrics.fairness_check(d, "equalized_odds").max_deviation > 0


def test_empty_cells_listed():
    d = dump_from([1, 0, 1], [1, 0, 1], [0, 0, 1])
    rep = metrics.fairness_check(d, "equalized_odds")
    assert (0, 1) in rep.empty_cells
    assert 0.0 <= rep.max_deviation <= 1.0


def test_fairness_criterion_validated():
    with pytest.raises(DomainError):
        metrics.fairness_check(dump_from([0, 1], [0, 1], [0, 1]), "calibration")
    with pytest.raises(DomainError):
        metrics.fairness_check(dump_from([0, 1], [0, 1], [0, 1]), "equality_of_opportunity")


def test_evaluate_rows_and_baseline_identity():
    rng = np.random.default_rng(2)
    s = rng.random(200)
    d = PredictionDump(s, (s > 0.5).astype(int), rng.integers(0, 2, 200), rng.integers(0, 2, 200))
    base = metrics.evaluate(d)
    assert base.rows()["CAI_0.5"] is None
    rep = metrics.evaluate(d, base)
    assert all(rep.rows()[k] == 0.0 for k in ("CAI_0.5", "CAI_0.75", "CAUCI_0.5", "CAUCI_0.75"))
    assert list(rep.rows())[:10] == list(metrics.ROW_ORDER)


def test_evaluate_without_auc_notes_missing_rows():
    d = dump_from([0, 1, 0, 1], [1, 1, 1, 1], [0, 0, 1, 1])
    base = metrics.evaluate(d, with_ci=False)
    rep = metrics.evaluate(d, base, with_ci=False)
    assert rep.auc is None and rep.cauci == {}
    assert "CAUCI" in rep.note


def test_dump_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    d = PredictionDump(rng.random(30), rng.integers(0, 2, 30), rng.integers(0, 2, 30),
                       rng.integers(0, 3, 30), rng.random(30) < 0.2)
    path = tmp_path / "d.csv"
    d.to_csv(path)
    back = PredictionDump.read_csv(path)
    for col in ("score", "pred", "label", "group", "synthetic"):
        assert np.array_equal(getattr(back, col), getattr(d, col))
    assert path.read_text().splitlines()[0] == "score,pred,label,group,synthetic"


def test_dump_length_mismatch():
    with pytest.raises(ShapeError):
        PredictionDump([0.1, 0.2], [0], [0, 1], [0, 1])


def test_table_marks_and_best():
    rng = np.random.default_rng(5)
    s = rng.random(100)
    d = PredictionDump(s, (s > 0.5).astype(int), rng.integers(0, 2, 100), rng.integers(0, 2, 100))
    base = metrics.evaluate(d, with_ci=False)
    cols = {"baseline": base, "BT": metrics.evaluate(d, base, with_ci=False)}
    text = metrics.format_table(cols, marks=["BT"], best={"acc": "BT"})
    assert "BT*" in text and "^" in text
    assert metrics.format_csv(cols).startswith("metric,baseline,BT\n")
