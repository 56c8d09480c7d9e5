"""Experiment harness: config parsing, method variants and on-disk reports.

A run trains the plain baseline first (it is the CAI/CAUCI reference), then
every requested method on the same partition, and writes::

    out/<run-id>/
        config.txt            normalized key=value config
        report.txt, report.csv
        manifest.txt          partition cell counts, synthetic merges, selections
        dumps/<method>.csv    score,pred,label,group,synthetic
        checkpoints/<method>.{predictor,adversary}.fknt + <method>.json
        plots/*.csv           ROC points, score densities, ascent trajectories
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment, metrics, thresholds
from .adversarial import AdvConfig, AdversaryArch, PredictorArch, predict, train
from .data import (
    PartitionSpec, ingest_csv, merge_synthetic, osmi_schema, partition, synth_tabular,
)
from .errors import ConfigError, IncomparableReportsError
from .nn import checkpoint

log = logging.getLogger(__name__)

METHODS = ("baseline", "Noise", "AD", "ADDP", "Freeze", "IA", "TARA", "TARA+F", "BT")
ADVERSARIAL = ("AD", "ADDP", "Freeze", "TARA", "TARA+F")
AUGMENTED = ("IA", "TARA", "TARA+F")
DATASETS = ("synth_tabular", "synth_images", "csv")
BETA_GRID = (0.5, 1.0)
SEED_ENV = "FAIRKIT_SEED"


def _ints(text):
    text = text.strip()
    return () if text in ("", "none", "()") else tuple(int(v) for v in text.split(","))


def _opt_ints(text):
    return None if text.strip().lower() == "none" else _ints(text)


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _cell(text):
    if text.strip().lower() in ("", "none"):
        return None
    y, s = _ints(text)
    return (y, s)


def _methods(text):
    out = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
    return out


def _str(text):
    return text.strip()


def _opt_str(text):
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass
class ExperimentConfig:
    """Flat experiment description; ``None`` fields take dataset defaults."""

    dataset: str = "synth_tabular"
    methods: tuple = ("baseline", "AD")
    seed: int | None = None
    run_id: str | None = None
    # data sources
    csv_path: str | None = None
    schema: str = "osmi_gender"
    n: int | None = None
    rho: float = 0.9
    shift: float = 2.0
    signal: float = 0.7
    image_noise: float = 0.3
    # partition
    split: tuple = (0.7, 0.1, 0.2)
    excluded_cell: tuple | None = (1, 1)
    test_quota: int | None = None
    balanced_val_quota: int | None = None
    # predictor / adversary
    hidden: tuple | None = None
    embedding_dim: int | None = None
    adversary_hidden: tuple = (32,)
    tap: str | None = None
    beta: float | None = None
    noise_sigma: float = 0.1
    max_epochs: int = 30
    early_stop_patience: int = 5
    batch_size: int | None = None
    learning_rate: float = 3e-3
    adversary_learning_rate: float = 1e-2
    optimizer: str = "adam"
    adversary_optimizer: str = "adam"
    adversary_pretrain_epochs: int = 0
    # augmentation
    gamma: float = 0.5
    steps: int = 100
    desired_confidence: float = 0.9
    y_mask: tuple = (2,)
    s_mask: tuple = (1,)
    synthetic_rows: int | None = None
    # reporting
    alphas: tuple = metrics.DEFAULT_ALPHAS

    _PARSERS = {
        "dataset": _str, "methods": _methods, "seed": _opt_int, "run_id": _opt_str,
        "csv_path": _opt_str, "schema": _str, "n": _opt_int, "rho": float, "shift": float,
        "signal": float, "image_noise": float, "split": _floats, "excluded_cell": _cell,
        "test_quota": _opt_int, "balanced_val_quota": _opt_int, "hidden": _opt_ints,
        "embedding_dim": _opt_int, "adversary_hidden": _ints, "tap": _opt_str, "beta": _opt_float,
        "noise_sigma": float, "max_epochs": int, "early_stop_patience": int,
        "batch_size": _opt_int, "learning_rate": float, "adversary_learning_rate": float,
        "optimizer": _str, "adversary_optimizer": _str, "adversary_pretrain_epochs": int,
        "gamma": float, "steps": int, "desired_confidence": float, "y_mask": _ints,
        "s_mask": _ints, "synthetic_rows": _opt_int, "alphas": _floats,
    }

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("dataset=csv needs csv_path")
        if self.dataset != "synth_images" and any(m in AUGMENTED for m in self.methods):
            raise ConfigError("IA/TARA methods need the synth_images generator dataset")
        if "BT" in self.methods and not self.balanced_val_quota:
            self.balanced_val_quota = 100
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("beta must be positive when set")

    @property
    def images(self):
        return self.dataset == "synth_images"

    def resolved(self):
        """Copy with dataset defaults filled in and the seed fallback applied."""
        c = dataclasses.replace(self)
        if c.seed is None:
            c.seed = int(os.environ.get(SEED_ENV, "0"))
        if c.hidden is None:
            c.hidden = (32,) if c.images else ()
        if c.embedding_dim is None and not c.images:
            c.embedding_dim = 4
        if c.images:
            c.embedding_dim = None
        if c.tap is None:
            c.tap = "pre_logits" if c.images else "logits"
        if c.batch_size is None:
            c.batch_size = 64 if c.images else 128
        if c.n is None:
            c.n = 4000 if c.images else 10_000
        return c

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v) if v else "()"
            lines.append(f"{f.name}={'none' if v is None else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        for k, v in mapping.items():
            if k not in cls._PARSERS:
                raise ConfigError(f"unknown config key {k!r}")
            try:
                kwargs[k] = cls._PARSERS[k](v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
        return cls(**kwargs)

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:10]


def parse_config(text):
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def apply_overrides(mapping, overrides):
    out = dict(mapping)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides=()):
    text = Path(path).read_text() if path else ""
    return ExperimentConfig.from_mapping(apply_overrides(parse_config(text), overrides))


@dataclass
class MethodResult:
    name: str
    dump: metrics.PredictionDump
    report: metrics.EvalReport = None
    pair: object = None
    beta: float | None = None
    notes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _schema_for(name):
    if name in ("osmi_gender", "osmi_age"):
        return osmi_schema(name.split("_", 1)[1])
    raise ConfigError(f"unknown schema preset {name!r}")


class Experiment:
    """All methods of one config on one seeded partition."""

    def __init__(self, config):
        self.config = config.resolved()
        c = self.config
        self.generator = None
        if c.dataset == "synth_tabular":
            data = synth_tabular(c.n, c.rho, c.shift, signal=c.signal, seed=c.seed)
        elif c.dataset == "synth_images":
            self.generator = augment.ToyGenerator(seed=c.seed)
            data = augment.synth_images(self.generator, c.n, noise=c.image_noise, seed=c.seed)
        else:
            data = ingest_csv(c.csv_path, _schema_for(c.schema))
        self.data = data
        spec = PartitionSpec(c.split, c.excluded_cell, c.test_quota, c.balanced_val_quota, c.seed)
        self.partition = partition(data, spec)
        self.results = {}
        self.manifest_notes = []
        self._synthetic = None

    # -- building blocks ---------------------------------------------------
    def arches(self):
        c = self.config
        n_groups = int(max(2, self.data.s.max() + 1))
        return (PredictorArch(tuple(c.hidden), c.embedding_dim, 2),
                AdversaryArch(tuple(c.adversary_hidden), n_groups))

    def adv_config(self, method, beta=None):
        c = self.config
        kw = dict(tap=c.tap, max_epochs=c.max_epochs, early_stop_patience=c.early_stop_patience,
                  batch_size=c.batch_size, learning_rate=c.learning_rate,
                  adversary_learning_rate=c.adversary_learning_rate, optimizer=c.optimizer,
                  adversary_optimizer=c.adversary_optimizer, seed=c.seed)
        if method == "Noise":
            return AdvConfig(noise_sigma=c.noise_sigma, **kw)
        if method in ADVERSARIAL:
            return AdvConfig(beta=beta, adversary_sees_label=method != "ADDP",
                             freeze_alternation=method == "Freeze",
                             filter_synthetic_from_adversary=method == "TARA+F",
                             filter_synthetic_from_validation=method == "TARA+F",
                             adversary_pretrain_epochs=c.adversary_pretrain_epochs, **kw)
        return AdvConfig(**kw)

    def synthetic(self):
        """Synthetic rows for the excluded cell (generated once per experiment)."""
        if self._synthetic is not None:
            return self._synthetic
        c = self.config
        if c.excluded_cell is None:
            raise ConfigError("augmentation needs an excluded (y, s) cell to synthesize")
        y_star, s_star = c.excluded_cell
        tr = self.partition.train
        # each C1 is fit where the other attribute is fixed, so it cannot lean on it
        my = tr.s == 1 - s_star
        ms = tr.y == 1 - y_star
        c1_y = augment.train_c1(tr.X[my], tr.y[my], seed=c.seed)
        c1_s = augment.train_c1(tr.X[ms], tr.s[ms], seed=c.seed + 1)
        aug = augment.IntelligentAugmenter(self.generator, c1_y, c1_s, seed=c.seed).distil()
        n_syn = c.synthetic_rows
        if n_syn is None:
            counts = [v for k, v in tr.cell_counts().items() if k != tuple(c.excluded_cell)]
            n_syn = int(np.mean(counts))
        configs = {
            "label_Y": augment.AugmentConfig(c.gamma, c.steps, "label_Y", y_star,
                                             c.desired_confidence, tuple(c.y_mask)),
            "attribute_S": augment.AugmentConfig(c.gamma, c.steps, "attribute_S", s_star,
                                                 c.desired_confidence, tuple(c.s_mask)),
        }
        res = aug.synthesize(configs, n_syn, cell=(y_star, s_star), schema=tr.schema)
        truth_y, truth_s = self.generator.attributes(res.latents)
        self.manifest_notes.append(
            f"synthesized {res.accepted} of {res.requested} requested rows for cell "
            f"(y={y_star}, s={s_star}) from {res.candidates} candidates; "
            f"generator ground truth matches on {int(np.sum((truth_y == y_star) & (truth_s == s_star)))}")
        self.manifest_notes.append(
            "C2 agreement: " + ", ".join(f"{k}={v.agreement:.4f}" for k, v in aug.c2.items()))
        self._synthetic = res
        return res

    def _dump(self, pair, data, pred=None):
        out = predict(pair, data.X)
        labels = out.labels if pred is None else pred
        return metrics.PredictionDump(out.scores[:, 1], labels, data.y, data.s, data.synthetic)

    def _train(self, method, beta=None):
        train_set = self.partition.train
        if method in AUGMENTED:
            train_set = merge_synthetic(train_set, self.synthetic().dataset)
        f_arch, a_arch = self.arches()
        cfg = self.adv_config(method, beta)
        pair = train(train_set, self.partition.val, f_arch, a_arch, cfg)
        res = MethodResult(method, self._dump(pair, self.partition.test), pair=pair, beta=beta)
        if method in AUGMENTED:
            res.notes.append(f"{method}: merged {len(self.synthetic().dataset)} synthetic rows "
                             f"into {len(self.partition.train)} real training rows")
        if method in ADVERSARIAL:
            res.notes.append(
                f"{method}: adversary filter {'active' if cfg.filter_synthetic_from_adversary else 'off'}, "
                f"synthetic rows seen by adversary {pair.synthetic_rows_seen_by_adversary}")
        return res

    # -- methods -----------------------------------------------------------
    def run_method(self, method):
        if method in self.results:
            return self.results[method]
        if method == "BT":
            res = self._best_threshold()
        elif method in ADVERSARIAL and self.config.beta is None:
            res = self._beta_grid(method)
        else:
            beta = self.config.beta if method in ADVERSARIAL else None
            res = self._train(method, beta)
        self.results[method] = res
        return res

    def _beta_grid(self, method):
        tried = [self._train(method, b) for b in BETA_GRID]
        accs = [metrics.accuracy_metrics(r.dump)["acc"] for r in tried]
        k = int(np.argmax(accs))
        best = tried[k]
        best.notes.append(f"{method}: beta grid {list(BETA_GRID)} -> {BETA_GRID[k]} "
                          f"(rule: best overall accuracy; accs {[round(a, 4) for a in accs]})")
        return best

    def _best_threshold(self):
        base = self.run_method("baseline")
        bal = self.partition.balanced_val
        if bal is None:
            raise ConfigError("BT needs balanced_val_quota")
        fitted = thresholds.fit(self._dump(base.pair, bal))
        dump = thresholds.apply(fitted, base.dump, seed=self.config.seed)
        res = MethodResult("BT", dump, pair=base.pair)
        res.extras["thresholds"] = fitted
        res.notes.append(f"BT: thresholds fit on {len(bal)} balanced validation rows "
                         f"(includes the excluded cell), residual {fitted.residual:.6f}")
        return res

    def run_all(self):
        methods = ["baseline"] + [m for m in self.config.methods if m != "baseline"]
        for m in methods:
            self.run_method(m)
        base = metrics.evaluate(self.results["baseline"].dump, ci_seed=self.config.seed)
        self.results["baseline"].report = base
        for m in methods[1:]:
            self.results[m].report = metrics.evaluate(self.results[m].dump, base,
                                                      alphas=self.config.alphas,
                                                      ci_seed=self.config.seed)
        return self.results

    def columns(self):
        return {m: r.report for m, r in self.results.items()}


def manifest_digest(dump):
    h = hashlib.sha256()
    for a in (dump.label, dump.group, dump.synthetic.astype(np.int64)):
        h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


CI_NOTE = ("ci95 rows: 95% half-widths, accuracy by normal approximation, "
           "AUC by 1000-resample seeded bootstrap\n")


def write_run(exp, out_dir="out"):
    """Run every method of ``exp`` and write the artifact tree; returns the run directory."""
    c = exp.config
    results = exp.run_all()
    run_id = c.run_id or f"{c.dataset}-s{c.seed}-{c.digest()}"
    root = Path(out_dir) / run_id
    for sub in ("dumps", "checkpoints", "plots"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text(c.to_text())
    columns = exp.columns()
    marks = [m for m in columns if m == "BT"]
    best = metrics.best_per_row({k: v for k, v in columns.items() if k != "baseline"})
    digest = manifest_digest(results["baseline"].dump)
    text = metrics.format_table(columns, marks=marks, best=best)
    (root / "report.txt").write_text(f"run {run_id}\ntest_manifest {digest}\n\n" + text + CI_NOTE)
    (root / "report.csv").write_text(f"# test_manifest={digest}\n" + metrics.format_csv(columns))
    for name, res in results.items():
        safe = _safe(name)
        res.dump.to_csv(root / "dumps" / f"{safe}.csv")
        if name != "BT" and res.pair is not None:
            checkpoint.save(res.pair.predictor, root / "checkpoints" / f"{safe}.predictor.fknt")
            checkpoint.save(res.pair.adversary, root / "checkpoints" / f"{safe}.adversary.fknt")
            side = {"method": name, "beta": res.beta, "config": res.pair.config.to_dict(),
                    "tap_index": res.pair.tap_index, "best_epoch": res.pair.best_epoch,
                    "history": [dataclasses.asdict(h) for h in res.pair.history]}
            (root / "checkpoints" / f"{safe}.json").write_text(
                json.dumps(side, indent=1, sort_keys=True, default=_json_default) + "\n")
        if "thresholds" in res.extras:
            res.extras["thresholds"].to_csv(root / "thresholds.csv")
        _write_plots(root / "plots", safe, res.dump)
    if exp._synthetic is not None:
        for kind, traj in exp._synthetic.trajectories.items():
            (root / "plots" / f"ascent_{kind}.csv").write_text(augment.trajectory_csv(traj))
    notes = list(exp.manifest_notes)
    for res in results.values():
        notes.extend(res.notes)
    manifest = [f"run {run_id}", f"data {exp.data.provenance} fingerprint {exp.data.fingerprint()}",
                f"dropped_rows {exp.data.dropped}", f"test_manifest {digest}", "",
                exp.partition.manifest()] + notes
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return root


def _json_default(o):
    if isinstance(o, (np.floating, float)):
        return None if not np.isfinite(o) else float(o)
    if isinstance(o, np.integer):
        return int(o)
    raise TypeError(type(o))


def _safe(name):
    return name.replace("+", "_plus")


def _write_plots(folder, name, dump):
    rows = ["group,threshold,fpr,tpr"]
    for g in dump.groups:
        m = dump.group == g
        if len(np.unique(dump.label[m])) < 2:
            continue
        cuts, fpr, tpr = thresholds.roc_points(dump.score[m], dump.label[m])
        rows.extend(f"{int(g)},{t!r},{f!r},{p!r}"
                    for t, f, p in zip(cuts.tolist(), fpr.tolist(), tpr.tolist()))
    (folder / f"roc_{name}.csv").write_text("\n".join(rows) + "\n")
    edges = np.linspace(0.0, 1.0, 21)
    dens = ["group,bin_centre,density"]
    for g in dump.groups:
        d, _ = np.histogram(dump.score[dump.group == g], bins=edges, density=True)
        dens.extend(f"{int(g)},{(lo + hi) / 2!r},{v!r}"
                    for lo, hi, v in zip(edges[:-1].tolist(), edges[1:].tolist(), d.tolist()))
    (folder / f"density_{name}.csv").write_text("\n".join(dens) + "\n")


# -- reading reports back ----------------------------------------------------

def read_report_csv(path_or_text):
    """Parse a report CSV into ``(test_manifest, {method: {metric: value}})``."""
    text = Path(path_or_text).read_text() if "\n" not in str(path_or_text) else path_or_text
    manifest = None
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            if "test_manifest=" in line:
                manifest = line.split("=", 1)[1].strip()
            continue
        if line.strip():
            body.append(line.split(","))
    header = body[0]
    if header[0] != "metric":
        raise ConfigError("report CSV must start with a metric column")
    cols = {name: {} for name in header[1:]}
    for row in body[1:]:
        for name, v in zip(header[1:], row[1:]):
            if v != "":
                cols[name][row[0]] = float(v)
    return manifest, cols


@dataclass
class _Entry:
    acc: float = None
    acc_gap: float = None
    auc: float = None
    auc_gap: float = None


def compare(baseline, candidates, *, alphas=metrics.DEFAULT_ALPHAS, baseline_column=None):
    """Conjunctive improvement table of candidate columns over a baseline column.

    ``baseline`` and each candidate are ``(manifest, columns)`` pairs as
    returned by :func:`read_report_csv`. Returns ``(text, rows)`` where
    ``rows`` maps candidate name to ``{"CAI_0.5": ..., ...}``.
    """
    b_manifest, b_cols = baseline
    name = baseline_column or ("baseline" if "baseline" in b_cols else next(iter(b_cols)))
    b = b_cols[name]
    ref = _Entry(b.get("acc"), b.get("acc_gap"), b.get("AUC"), b.get("AUC_gap"))
    table, notes = {}, []
    for manifest, cols in candidates:
        if manifest != b_manifest:
            raise IncomparableReportsError(
                f"test manifests differ ({manifest} vs {b_manifest}); reports are not comparable")
        for cname, vals in cols.items():
            e = _Entry(vals.get("acc"), vals.get("acc_gap"), vals.get("AUC"), vals.get("AUC_gap"))
            row = {}
            for a in alphas:
                row[f"CAI_{a:g}"] = metrics.cai(ref, e, a)
            if None in (e.auc, e.auc_gap, ref.auc, ref.auc_gap):
                notes.append(f"{cname}: AUC fields missing, CAUCI rows omitted")
            else:
                for a in alphas:
                    row[f"CAUCI_{a:g}"] = metrics.cauci(ref, e, a)
            table[cname] = row
    keys = []
    for row in table.values():
        keys.extend(k for k in row if k not in keys)
    width = max([len(n) for n in table] + [9]) + 2
    lines = ["metric".ljust(12) + "".join(n.rjust(width) for n in table)]
    for k in keys:
        vals = {n: r.get(k) for n, r in table.items()}
        present = {n: v for n, v in vals.items() if v is not None}
        top = max(present, key=present.get) if present else None
        cells = []
        for n, v in vals.items():
            cell = "-" if v is None else (f"{v:.3f}" if k.startswith("CAUCI") else f"{v:.2f}")
            cells.append((cell + ("^" if n == top and len(present) > 1 else "")).rjust(width))
        lines.append(k.ljust(12) + "".join(cells))
    return "\n".join(lines + notes) + "\n", table


def audit(run_dir):
    """Recompute every report number from the emitted dumps.

    Returns the list of mismatches (empty when the report is consistent).
    """
    root = Path(run_dir)
    manifest, cols = read_report_csv(root / "report.csv")
    seed = int(parse_config((root / "config.txt").read_text())["seed"])
    alphas = ExperimentConfig.from_mapping(
        {"alphas": parse_config((root / "config.txt").read_text())["alphas"]}).alphas
    dumps = {name: metrics.PredictionDump.read_csv(root / "dumps" / f"{_safe(name)}.csv")
             for name in cols}
    base = metrics.evaluate(dumps["baseline"], ci_seed=seed)
    problems = []
    if manifest_digest(dumps["baseline"]) != manifest:
        problems.append("test manifest hash differs from the baseline dump")
    for name, vals in cols.items():
        rep = base if name == "baseline" else metrics.evaluate(dumps[name], base, alphas=alphas,
                                                               ci_seed=seed)
        expected = rep.rows()
        for k, v in vals.items():
            e = expected.get(k)
            if e is None or abs(e - v) > 1e-9 * max(1.0, abs(e)):
                problems.append(f"{name}.{k}: report {v!r} vs recomputed {e!r}")
    return problems
