import numpy as np
import pytest

from fairkit import metrics, thresholds
from fairkit.errors import EmptyCellError, MissingGroupError
from fairkit.metrics import PredictionDump

from oracles import HAND_G0, HAND_G1, biased_dump, grid_operating_point, two_group_dump

def rates(dump):
    out = {}
    for g in dump.groups:
        m = dump.group == g
        out[int(g)] = (np.mean(dump.pred[m & (dump.label == 1)]), np.mean(dump.pred[m & (dump.label == 0)]))
    return out


def test_hand_case_matches_grid_oracle():
    fitted = thresholds.fit(two_group_dump([HAND_G0, HAND_G1]))
    f, t, acc = grid_operating_point([HAND_G0, HAND_G1], step=1e-3)
    assert abs(fitted.target[0] - f) <= 2e-3
    assert abs(fitted.target[1] - t) <= 2e-3
    assert abs(fitted.val_accuracy - acc) <= 2e-3


@pytest.mark.parametrize("seed", range(4))
def test_accuracy_matches_grid_oracle_on_random_hand_sets(seed):
    rng = np.random.default_rng(seed)
    g0 = (np.round(rng.random(6), 2), np.array([1, 1, 1, 0, 0, 0]))
    g1 = (np.round(rng.random(6) * 0.8, 2), np.array([1, 1, 0, 1, 0, 0]))
    fitted = thresholds.fit(two_group_dump([g0, g1]))
    _, _, acc = grid_operating_point([g0, g1], step=2e-3)
    assert abs(fitted.val_accuracy - acc) <= 3e-3


def test_identical_groups_identical_rules():
    rng = np.random.default_rng(1)
    s = rng.random(50)
    y = rng.integers(0, 2, 50)
    d = PredictionDump(np.r_[s, s], np.zeros(100), np.r_[y, y], np.r_[[0] * 50, [1] * 50])
    fitted = thresholds.fit(d)
    assert fitted.residual == 0.0
    assert fitted.rules[0] == fitted.rules[1]


def test_single_group_is_accuracy_maximizing_threshold():
    rng = np.random.default_rng(2)
    s = rng.random(80)
    y = (rng.random(80) < s).astype(int)
    d = PredictionDump(s, np.zeros(80), y, np.zeros(80))
    fitted = thresholds.fit(d)
    best = max(np.mean((s >= c) == y) for c in np.r_[np.unique(s), 2.0])
    assert fitted.val_accuracy == pytest.approx(best)


def test_equalizes_rates_on_validation_and_helps_test():
    val = biased_dump(400, seed=0)
    fitted = thresholds.fit(val)
    out = thresholds.apply(fitted, val, seed=0)
    r = rates(out)
    assert abs(r[0][0] - r[1][0]) <= 0.02
    assert abs(r[0][1] - r[1][1]) <= 0.02
    test = biased_dump(400, seed=1)
    before = metrics.accuracy_metrics(test)["acc_gap"]
    after = metrics.accuracy_metrics(thresholds.apply(fitted, test, seed=0))["acc_gap"]
    assert after < before


def test_rules_are_ordered_and_in_range():
    d = biased_dump(200, seed=3)
    for r in thresholds.fit(d).rules.values():
        assert r.t_lo <= r.t_hi
        assert 0.0 <= r.p <= 1.0
        assert r.t_lo >= d.score.min() and r.t_lo <= np.nextafter(d.score.max(), np.inf)


def test_threshold_half_equals_argmax_labels():
    d = biased_dump(100, seed=4)
    rules = thresholds.GroupThresholds({0: thresholds.GroupRule(0.5, 0.5, 1.0, 0, 0),
                                        1: thresholds.GroupRule(0.5, 0.5, 1.0, 0, 0)})
    assert np.array_equal(thresholds.apply(rules, d).pred, (d.score >= 0.5).astype(int))


def test_threshold_zero_is_all_positive():
    d = biased_dump(50, seed=5)
    rules = thresholds.GroupThresholds({g: thresholds.GroupRule(0.0, 0.0, 1.0, 1, 1) for g in (0, 1)})
    assert thresholds.apply(rules, d).pred.all()


def test_apply_deterministic_given_seed():
    d = biased_dump(300, seed=6)
    fitted = thresholds.fit(d)
    a = thresholds.apply(fitted, d, seed=3).pred
    b = thresholds.apply(fitted, d, seed=3).pred
    assert np.array_equal(a, b)


def test_empty_cell_and_unknown_group():
    d = PredictionDump([0.2, 0.8, 0.4], [0, 1, 0], [0, 1, 1], [0, 0, 1])
    with pytest.raises(EmptyCellError):
        thresholds.fit(d)
    fitted = thresholds.fit(two_group_dump([HAND_G0, HAND_G1]))
    with pytest.raises(MissingGroupError):
        thresholds.apply(fitted, PredictionDump([0.5], [0], [0], [7]))


def test_estimator_wrapper_and_csv():
    d = biased_dump(200, seed=7)
    est = thresholds.BestThresholdPostprocessor(random_state=0).fit(d.score, d.label, d.group)
    pred = est.predict(np.column_stack([1 - d.score, d.score]), d.group)
    assert np.array_equal(pred, thresholds.apply(est.thresholds_, d, seed=0).pred)
    assert est.thresholds_.to_csv().splitlines()[0] == "group,t_lo,t_hi,p"


def test_upper_hull_is_concave():
    rng = np.random.default_rng(8)
    s = rng.random(40)
    y = rng.integers(0, 2, 40)
    _, f, t = thresholds.roc_points(s, y)
    h = thresholds.upper_hull(f, t)
    slopes = np.diff(h[:, 1]) / np.diff(h[:, 0])
    assert np.all(np.diff(slopes) <= 1e-12)
    assert h[0][0] == 0.0 and tuple(h[-1]) == (1.0, 1.0)
