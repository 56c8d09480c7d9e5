import numpy as np
import pytest

from fairkit import data, metrics
from fairkit.adversarial import AdvConfig, AdversaryArch, PredictorArch, predict, train
from fairkit.data import CATEGORICAL, NUMERIC, LabeledDataset, PartitionSpec, Schema
from fairkit.errors import ConfigError, EmptyCellError, ShapeError

TOY = "color,size,label,grp\nred,1,yes,a\nblue,2,no,b\nred,3,yes,b\n"
TOY_SCHEMA = Schema((("color", CATEGORICAL), ("size", NUMERIC)), "label", "grp")


def osmi_csv(n, seed=0):
    rng = np.random.default_rng(seed)
    cols = [name for name, _ in data.OSMI_FEATURES] + ["treatment"]
    rows = [",".join(cols)]
    for _ in range(n):
        rows.append(",".join([
            str(rng.integers(20, 60)), rng.choice(["male", "female"]), rng.choice(["yes", "no"]),
            rng.choice(["yes", "no", "not sure"]), rng.choice(["yes", "no"]),
            rng.choice(["never", "rarely", "often"]), rng.choice(["easy", "hard"]),
            rng.choice(["yes", "no", "maybe"]), rng.choice(["yes", "no"])]))
    return "\n".join(rows) + "\n"


def id_dataset(n=2000, seed=0):
    """Rows carry their own index in the single feature so splits can be traced."""
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, n)
    y = (rng.random(n) < np.where(s == 1, 0.3, 0.6)).astype(int)
    schema = Schema((("id", NUMERIC),), "y", "s")
    return LabeledDataset(np.arange(n, dtype=float)[:, None], y, s, np.zeros(n, bool), schema)


def test_toy_csv_three_rows_stable_encoding():
    ds = data.ingest_csv(TOY, TOY_SCHEMA)
    assert len(ds) == 3 and ds.dropped == 0
    assert ds.encodings["color"] == ["blue", "red"]
    assert ds.X[:, 0].tolist() == [1, 0, 1]
    again = data.ingest_csv("color,size,label,grp\nblue,5,no,a\ngreen,1,yes,a\n", TOY_SCHEMA,
                            encodings=ds.encodings)
    assert again.X[:, 0].tolist() == [0, 2]


def test_empty_target_row_dropped():
    ds = data.ingest_csv(TOY + "blue,4,,a\n", TOY_SCHEMA)
    assert len(ds) == 3 and ds.dropped == 1


def test_header_mismatch():
    with pytest.raises(ShapeError):
        data.ingest_csv("a,b\n1,2\n", TOY_SCHEMA)


@pytest.mark.parametrize("sensitive", ["gender", "age"])
def test_osmi_preset(sensitive):
    schema = data.osmi_schema(sensitive)
    assert len(schema.features) == 8
    ds = data.ingest_csv(osmi_csv(40), schema)
    assert ds.X.shape == (40, 8)
    assert set(ds.s.tolist()) <= {0, 1}
    if sensitive == "age":
        ages = ds.X[:, 0]
        raw = np.array([float(ds.encodings["age"][int(c)]) for c in ages])
        assert np.array_equal(ds.s, (raw > 40).astype(int))


def test_ingest_emit_round_trip():
    ds = data.ingest_csv(osmi_csv(30, seed=3), data.osmi_schema("gender"))
    text = data.emit_csv(ds)
    back = data.ingest_csv(text, data.osmi_schema("gender"), encodings=ds.encodings)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert np.array_equal(back.s, ds.s)
    assert data.emit_csv(back) == text


@pytest.mark.parametrize("seed", range(50))
def test_partition_properties(seed):
    ds = id_dataset(seed=seed)
    p = data.partition(ds, PartitionSpec(seed=seed, balanced_val_quota=20 if seed % 2 else None))
    for part in (p.train, p.val):
        assert np.sum((part.y == 1) & (part.s == 1)) == 0
    counts = set(p.test.cell_counts().values())
    assert len(counts) == 1
    ids = [set(part.X[:, 0].tolist()) for part in (p.train, p.val, p.test)]
    if p.balanced_val is not None:
        ids.append(set(p.balanced_val.X[:, 0].tolist()))
        assert set(p.balanced_val.cell_counts().values()) == {20}
    assert sum(len(i) for i in ids) == len(set().union(*ids))
    assert sum(len(i) for i in ids) + p.discarded == len(ds)


def test_partition_deterministic():
    ds = id_dataset()
    a = data.partition(ds, PartitionSpec(seed=4))
    b = data.partition(ds, PartitionSpec(seed=4))
    assert np.array_equal(a.train.X, b.train.X) and np.array_equal(a.test.X, b.test.X)


def test_partition_quota_too_large_names_cell():
    ds = id_dataset(200)
    with pytest.raises(EmptyCellError) as err:
        data.partition(ds, PartitionSpec(test_quota=500))
    assert err.value.cell is not None


def test_partition_fractions_validated():
    with pytest.raises(ConfigError):
        PartitionSpec(fractions=(0.5, 0.2, 0.2))


def test_rho_zero_confound_uncorrelated():
    ds = data.synth_tabular(10_000, rho=0.0, seed=1)
    assert abs(np.corrcoef(ds.s, ds.X[:, -1])[0, 1]) < 0.05


def test_rho_one_confound_is_s():
    ds = data.synth_tabular(2000, rho=1.0, seed=2)
    assert np.array_equal(ds.X[:, -1], ds.s)


def test_rho_validated():
    with pytest.raises(ConfigError):
        data.synth_tabular(10, rho=1.5)


def _baseline_gap(shift, seed, excluded):
    ds = data.synth_tabular(10_000, 0.9, shift, seed=seed)
    p = data.partition(ds, PartitionSpec(excluded_cell=excluded, seed=seed))
    cfg = AdvConfig(seed=seed, max_epochs=30, batch_size=128, learning_rate=3e-3,
                    early_stop_patience=5)
    pair = train(p.train, p.val, PredictorArch((), 4, 2), AdversaryArch((32,)), cfg)
    out = predict(pair, p.test.X)
    dump = metrics.PredictionDump(out.scores[:, 1], out.labels, p.test.y, p.test.s)
    return metrics.accuracy_metrics(dump)["acc_gap"]


def test_no_shift_means_small_gap():
    gaps = [_baseline_gap(0.0, seed, None) for seed in range(5)]
    assert np.median(gaps) < 3.0


def test_merge_synthetic():
    ds = id_dataset(100)
    assert data.merge_synthetic(ds, ds.subset([])) is ds
    syn = ds.subset(np.arange(5))
    merged = data.merge_synthetic(ds, syn)
    assert len(merged) == 105 and merged.synthetic[-5:].all() and not merged.synthetic[:100].any()


def test_manifest_and_fingerprint():
    ds = id_dataset(100)
    text = ds.manifest("[all]")
    assert text.startswith("[all]") and "total 100" in text
    assert ds.fingerprint() == id_dataset(100).fingerprint()


def test_reference_manifest_layout():
    text = data.reference_manifest()
    assert text.splitlines()[1] == id_dataset(10).manifest().splitlines()[0]
    assert "total 20692" in text
