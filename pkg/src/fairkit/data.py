"""Labelled datasets, CSV ingestion, domain-generalisation partitions and
seeded synthetic stand-ins for the tabular experiments."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, EmptyCellError, ShapeError

log = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERIC = "numeric"


@dataclass(frozen=True)
class Schema:
    """Column roles for a dataset.

    ``cutoffs`` binarises a numeric target/sensitive column as
    ``value > cutoff`` (e.g. age 40: younger -> 0, older -> 1).
    """

    features: tuple
    target: str
    sensitive: str | None = None
    cutoffs: tuple = ()

    @property
    def feature_names(self):
        return [name for name, _ in self.features]

    @property
    def all_categorical(self):
        return all(kind == CATEGORICAL for _, kind in self.features)

    def cutoff(self, column):
        return dict(self.cutoffs).get(column)


OSMI_FEATURES = (
    ("age", CATEGORICAL),
    ("gender", CATEGORICAL),
    ("benefits", CATEGORICAL),
    ("care_options", CATEGORICAL),
    ("anonymity", CATEGORICAL),
    ("work_interfere", CATEGORICAL),
    ("leave", CATEGORICAL),
    ("mental_health_consequence", CATEGORICAL),
)


def osmi_schema(sensitive="gender"):
    """Eight-feature OSMI mental-health layout with ``treatment`` as target."""
    if sensitive == "gender":
        return Schema(OSMI_FEATURES, "treatment", "gender")
    if sensitive == "age":
        return Schema(OSMI_FEATURES, "treatment", "age", cutoffs=(("age", 40.0),))
    raise ConfigError(f"OSMI preset has no sensitive column {sensitive!r}")


# Training cell sizes of the published EyePACS domain-generalization split,
# keyed by (y, s) with s = 1 for darker skin; (1, 1) is the excluded cell.
# Kept for reference manifests only; nothing here reproduces that split.
EYEPACS_REFERENCE_CELLS = {(1, 0): 10_346, (0, 0): 5_173, (0, 1): 5_173, (1, 1): 0}


def reference_manifest(cells=EYEPACS_REFERENCE_CELLS, title="[eyepacs reference]"):
    """Cell table in the layout of :meth:`LabeledDataset.manifest` (all rows real)."""
    lines = [title, f"{'y':>3} {'s':>3} {'real':>8} {'synthetic':>10}"]
    for (y, s), n in sorted(cells.items()):
        lines.append(f"{y:>3} {s:>3} {n:>8} {0:>10}")
    lines.append(f"total {sum(cells.values())}")
    return "\n".join(lines) + "\n"


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    s: np.ndarray | None
    synthetic: np.ndarray
    schema: Schema
    encodings: dict = field(default_factory=dict)
    provenance: str = ""
    dropped: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=np.int64)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        n = len(self.y)
        if self.X.shape[0] != n or self.synthetic.shape[0] != n or (
                self.s is not None and self.s.shape[0] != n):
            raise ShapeError("dataset columns differ in length")

    def __len__(self):
        return len(self.y)

    @property
    def cardinalities(self):
        """Declared category counts per feature (categorical schemas only)."""
        cards = []
        for j, (name, kind) in enumerate(self.schema.features):
            if kind != CATEGORICAL:
                raise ConfigError(f"feature {name!r} is not categorical")
            values = self.encodings.get(name)
            cards.append(len(values) if values is not None else int(self.X[:, j].max()) + 1)
        return cards

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return replace(self, X=self.X[idx], y=self.y[idx],
                       s=None if self.s is None else self.s[idx],
                       synthetic=self.synthetic[idx], dropped=0)

    def cell_counts(self):
        counts = {}
        if self.s is None:
            return counts
        for yv in np.unique(self.y):
            for sv in np.unique(self.s):
                counts[(int(yv), int(sv))] = int(np.sum((self.y == yv) & (self.s == sv)))
        return counts

    def manifest(self, title=""):
        """Text table of (y, s) cell counts."""
        lines = [title] if title else []
        lines.append(f"{'y':>3} {'s':>3} {'real':>8} {'synthetic':>10}")
        ys = sorted(set(self.y.tolist()))
        ss = sorted(set(self.s.tolist())) if self.s is not None else []
        for yv in ys:
            for sv in ss:
                m = (self.y == yv) & (self.s == sv)
                lines.append(f"{yv:>3} {sv:>3} {int(np.sum(m & ~self.synthetic)):>8} "
                             f"{int(np.sum(m & self.synthetic)):>10}")
        lines.append(f"total {len(self)}")
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.X, self.y, self.s if self.s is not None else np.empty(0), self.synthetic):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _binarize(values, cutoff):
    return (np.asarray(values, dtype=np.float64) > cutoff).astype(np.int64)


def _sort_key(v):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def ingest_csv(path_or_text, schema, *, encodings=None):
    """Read a CSV into a :class:`LabeledDataset`.

    Rows with an empty required cell or the wrong field count are dropped
    and counted. Categorical codes follow the sorted order of the observed
    values; passing ``encodings`` from a previous ingest keeps codes stable,
    appending unseen categories as new codes.
    """
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        fh = io.StringIO(path_or_text)
    else:
        fh = open(path_or_text, newline="")
    with fh:
        reader = csv.reader(fh)
        header = next(reader)
        required = schema.feature_names + [schema.target]
        if schema.sensitive:
            required.append(schema.sensitive)
        missing = [c for c in required if c not in header]
        if missing:
            raise ShapeError(f"CSV header lacks columns {missing}")
        col = {name: header.index(name) for name in header}
        rows, dropped = [], 0
        for row in reader:
            if not row:
                continue
            if len(row) != len(header) or any(row[col[c]].strip() == "" for c in required):
                dropped += 1
                continue
            rows.append(row)
    if dropped:
        log.info("ingest dropped %d malformed or incomplete rows", dropped)
    encodings = {k: list(v) for k, v in (encodings or {}).items()}

    def encode(name):
        raw = [r[col[name]].strip() for r in rows]
        known = encodings.get(name, [])
        new = sorted(set(raw) - set(known), key=_sort_key)
        encodings[name] = known + new
        lookup = {v: i for i, v in enumerate(encodings[name])}
        return np.array([lookup[v] for v in raw], dtype=np.int64)

    X = np.empty((len(rows), len(schema.features)))
    for j, (name, kind) in enumerate(schema.features):
        if kind == CATEGORICAL:
            X[:, j] = encode(name)
        else:
            X[:, j] = [float(r[col[name]]) for r in rows]

    kinds = dict(schema.features)

    def label(name):
        cutoff = schema.cutoff(name)
        if cutoff is not None:
            return _binarize([r[col[name]] for r in rows], cutoff)
        if kinds.get(name) == CATEGORICAL:
            return X[:, schema.feature_names.index(name)].astype(np.int64)
        return encode(name)

    y = label(schema.target)
    s = label(schema.sensitive) if schema.sensitive else None
    if "synthetic" in col:
        synthetic = np.array([r[col["synthetic"]].strip() in ("1", "true", "True") for r in rows])
    else:
        synthetic = np.zeros(len(rows), dtype=bool)
    return LabeledDataset(X, y, s, synthetic, schema, encodings,
                          provenance=str(path_or_text) if fh.__class__ is not io.StringIO else "inline",
                          dropped=dropped)


def _raw_value(data, name, j):
    kind = dict(data.schema.features)[name]
    v = data.X[:, j]
    if kind == CATEGORICAL and name in data.encodings:
        return [data.encodings[name][int(c)] for c in v]
    return [repr(float(x)) for x in v]


def emit_csv(data, path=None):
    """Write ``data`` back to CSV (raw category values plus a ``synthetic`` column)."""
    schema = data.schema
    names = schema.feature_names
    columns = {name: _raw_value(data, name, j) for j, name in enumerate(names)}
    for role, values in ((schema.target, data.y), (schema.sensitive, data.s)):
        if role is None or role in columns:
            continue
        if role in data.encodings and schema.cutoff(role) is None:
            columns[role] = [data.encodings[role][int(v)] for v in values]
        else:
            columns[role] = [str(int(v)) for v in values]
    header = list(columns) + ["synthetic"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i in range(len(data)):
        writer.writerow([columns[c][i] for c in header[:-1]] + [int(data.synthetic[i])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


@dataclass(frozen=True)
class PartitionSpec:
    """Split fractions, the fully excluded (y, s) cell and test balancing.

    ``test_quota`` rows are drawn per (y, s) cell; ``None`` uses the largest
    quota every cell can meet. ``balanced_val_quota`` (optional) carves an
    extra cell-balanced validation set, drawn from leftovers, reserved for
    post-processing baselines.
    """

    fractions: tuple = (0.7, 0.1, 0.2)
    excluded_cell: tuple | None = (1, 1)
    test_quota: int | None = None
    balanced_val_quota: int | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be three values summing to 1")
        if min(self.fractions) < 0:
            raise ConfigError("split fractions must be non-negative")


@dataclass
class Partition:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    balanced_val: LabeledDataset | None = None
    discarded: int = 0

    def manifest(self):
        parts = [self.train.manifest("[train]"), self.val.manifest("[val]"),
                 self.test.manifest("[test]")]
        if self.balanced_val is not None:
            parts.append(self.balanced_val.manifest("[balanced_val]"))
        parts.append(f"discarded {self.discarded}\n")
        return "\n".join(parts)


def partition(data, spec):
    """Train/val/test split with one (y, s) cell held out of train and val.

    Rows of the excluded cell only ever land in the test set (and, when
    requested, the balanced validation set). The test set is subsampled to
    exactly ``test_quota`` rows per cell; leftovers are discarded and counted.
    """
    if data.s is None:
        raise ConfigError("partitioning needs a sensitive attribute")
    rng = np.random.default_rng(spec.seed)
    n = len(data)
    cells = sorted({(int(a), int(b)) for a, b in zip(data.y, data.s)})
    excluded = np.zeros(n, dtype=bool)
    if spec.excluded_cell is not None:
        ey, es = spec.excluded_cell
        excluded = (data.y == ey) & (data.s == es)
        if not excluded.any():
            raise EmptyCellError(f"excluded cell {spec.excluded_cell} has no rows", spec.excluded_cell)
    rest = rng.permutation(np.flatnonzero(~excluded))
    f_train, f_val, _ = spec.fractions
    n_train = int(round(f_train * len(rest)))
    n_val = int(round(f_val * len(rest)))
    train_idx = np.sort(rest[:n_train])
    val_idx = np.sort(rest[n_train:n_train + n_val])
    pool = np.concatenate([rest[n_train + n_val:], rng.permutation(np.flatnonzero(excluded))])

    by_cell = {c: pool[(data.y[pool] == c[0]) & (data.s[pool] == c[1])] for c in cells}
    quota = spec.test_quota
    extra = spec.balanced_val_quota or 0
    if quota is None:
        quota = min(len(v) for v in by_cell.values()) - extra
    for c, idx in by_cell.items():
        if len(idx) < quota + extra:
            raise EmptyCellError(
                f"cell (y={c[0]}, s={c[1]}) has {len(idx)} rows, needs {quota + extra}", c)
    if quota < 1:
        raise EmptyCellError("test quota would be empty", None)
    test_idx = np.sort(np.concatenate([idx[:quota] for idx in by_cell.values()]))
    bal_idx = None
    if extra:
        bal_idx = np.sort(np.concatenate([idx[quota:quota + extra] for idx in by_cell.values()]))
    discarded = len(pool) - len(test_idx) - (0 if bal_idx is None else len(bal_idx))
    log.info("partition: train %d val %d test %d discarded %d",
             len(train_idx), len(val_idx), len(test_idx), discarded)
    return Partition(data.subset(train_idx), data.subset(val_idx), data.subset(test_idx),
                     None if bal_idx is None else data.subset(bal_idx), discarded)


def synth_tabular(n=10_000, rho=0.9, shift=2.0, *, n_informative=4, levels=5,
                  signal=0.7, include_sensitive=False, seed=0):
    """Categorical stand-in for a biased survey dataset.

    Generative process:

    * ``S ~ Bernoulli(0.5)``
    * confound feature ``= S`` with probability ``rho``, else a fair coin
      (so ``rho = 0`` makes it independent of S)
    * ``n_informative`` features uniform on ``levels`` codes, independent of S
    * ``Y ~ Bernoulli(sigmoid(signal * score - shift * (2S - 1) / 2))``
      where ``score`` is a fixed linear read-out of the informative codes.

    ``shift`` is the group-conditional shift: it lowers the base rate of
    ``Y = 1`` in group ``S = 1`` (making ``(1, 1)`` the smallest cell), which
    a model that can see S through the confound learns as a shortcut.
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, size=n)
    keep = rng.random(n) < rho
    coin = rng.integers(0, 2, size=n)
    confound = np.where(keep, s, coin)
    feats = rng.integers(0, levels, size=(n, n_informative))
    centred = (feats - (levels - 1) / 2.0) / ((levels - 1) / 2.0)
    weights = np.linspace(1.0, 2.0, n_informative)
    score = centred @ weights
    logit = signal * score - shift * (s - 0.5)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)
    columns = [feats, confound[:, None]]
    names = [(f"f{j}", CATEGORICAL) for j in range(n_informative)] + [("confound", CATEGORICAL)]
    if include_sensitive:
        columns.append(s[:, None])
        names.append(("s", CATEGORICAL))
    X = np.hstack(columns).astype(np.float64)
    encodings = {name: [str(v) for v in range(levels if name.startswith("f") else 2)]
                 for name, _ in names}
    schema = Schema(tuple(names), "y", "s")
    encodings["y"] = ["0", "1"]
    return LabeledDataset(X, y, s, np.zeros(n, dtype=bool), schema, encodings,
                          provenance=f"synth_tabular(n={n}, rho={rho}, shift={shift}, seed={seed})")


def merge_synthetic(train, synthetic):
    """Append synthetic rows (flags preserved) to a training set."""
    if synthetic is None or len(synthetic) == 0:
        return train
    if train.X.shape[1] != synthetic.X.shape[1] or (train.s is None) != (synthetic.s is None):
        raise ShapeError("synthetic rows do not match the training schema")
    merged = LabeledDataset(
        np.vstack([train.X, synthetic.X]),
        np.concatenate([train.y, synthetic.y]),
        None if train.s is None else np.concatenate([train.s, synthetic.s]),
        np.concatenate([train.synthetic, np.ones(len(synthetic), dtype=bool)]),
        train.schema, train.encodings, provenance=train.provenance + "+synthetic")
    log.info("merged %d synthetic rows into %d real rows", len(synthetic), len(train))
    return merged
