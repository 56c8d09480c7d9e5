"""Adversarial independence training.

A predictor ``F`` is split at a tap layer into ``F1`` (input -> R) and
``F2`` (R -> class probabilities). An adversary ``A`` reads R (plus the
one-hot true label for the equalised-odds variant) and predicts the
sensitive attribute. Each batch performs

1. a predictor step on ``H(Y; F(X)) - beta * H(S; A(R, Y))`` with the
   adversarial gradient flowing back through R into ``F1``;
2. an adversary step on ``H(S; A(R, Y))`` with ``F`` held fixed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels
from .errors import ConfigError, MissingClassError, NumericError, ShapeError
from .nn import (
    apply_step, backward, build_mlp, cross_entropy, cross_entropy_grad, forward,
    make_optimizer, one_hot,
)
from .nn.optim import PlateauScheduler
from .training import FitSettings, fit_classifier, rng_streams

TAPS = ("logits", "pre_logits")


@dataclass
class AdvConfig:
    beta: float = 0.0
    tap: str = "logits"
    adversary_sees_label: bool = True
    freeze_alternation: bool = False
    noise_sigma: float = 0.0
    filter_synthetic_from_adversary: bool = False
    filter_synthetic_from_validation: bool = False
    adversary_pretrain_epochs: int = 0
    max_epochs: int = 100
    early_stop_patience: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adversary_learning_rate: float = 1e-3
    adversary_optimizer: str = "adam"
    plateau_patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0 or self.noise_sigma < 0:
            raise ConfigError("beta and noise_sigma must be non-negative")
        if self.beta > 0 and self.noise_sigma > 0:
            raise ConfigError("beta > 0 and noise_sigma > 0 select different methods; pick one")
        if self.tap not in TAPS:
            raise ConfigError(f"tap must be one of {TAPS}")

    @property
    def family(self):
        if self.beta > 0:
            return "adversarial"
        if self.noise_sigma > 0:
            return "noise"
        return "baseline"

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PredictorArch:
    """Hidden widths of ``F``; ``embedding_dim`` switches on per-feature embeddings."""

    hidden: tuple = ()
    embedding_dim: int | None = None
    n_classes: int = 2


@dataclass(frozen=True)
class AdversaryArch:
    hidden: tuple = ()
    n_groups: int = 2


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    adversary_loss: float
    adversary_accuracy: float
    phase: str = "joint"


@dataclass
class TrainedPair:
    predictor: object
    adversary: object
    tap_index: int
    config: AdvConfig
    history: list = field(default_factory=list)
    best_epoch: int = -1
    adversary_batches: int = 0
    synthetic_rows_seen_by_adversary: int = 0

    @property
    def representation_width(self):
        return self.predictor.width_at(self.tap_index)


@dataclass
class Prediction:
    scores: np.ndarray
    labels: np.ndarray
    representation: np.ndarray


def build_predictor(arch, n_in, rng, *, cardinalities=None, noise_sigma=0.0):
    emb = None
    if arch.embedding_dim:
        if cardinalities is None:
            raise ConfigError("embedding predictor needs feature cardinalities")
        emb = (tuple(cardinalities), arch.embedding_dim)
    return build_mlp(n_in, arch.hidden, arch.n_classes, rng, embedding_spec=emb,
                     noise_sigma=noise_sigma)


def resolve_tap(net, tap):
    """Layer index whose output is R: the logits or the input to the final linear."""
    last = net.index_of_last("linear")
    if tap == "logits":
        return last
    if last == 0:
        raise ConfigError("pre_logits tap needs at least one layer before the final linear")
    return last - 1


def build_adversary(arch, r_width, n_classes, sees_label, rng):
    n_in = r_width + (n_classes if sees_label else 0)
    return build_mlp(n_in, arch.hidden, arch.n_groups, rng)


def adversary_input(R, y, n_classes, sees_label):
    return np.hstack([R, one_hot(y, n_classes)]) if sees_label else R


def objective_grads(F, A, x, y, s, tap_index, beta, sees_label, *, adv_rows=None,
                    training=False, rng=None):
    """Value and gradients of ``H(Y; F) - beta * H(S; A(R, Y))``.

    Returns ``(objective, loss_y, loss_s, grads_F, grads_A_on_H_S, adv_acc)``.
    ``grads_A_on_H_S`` is the gradient of ``H(S; A)`` (what the adversary
    descends). Only rows in ``adv_rows`` enter the adversarial term.
    """
    fr = forward(F, x, tap_index, training=training, rng=rng)
    loss_y = cross_entropy(fr.output, y)
    g_out = cross_entropy_grad(fr.output, y)
    n_classes = fr.output.shape[1]
    rows = np.arange(len(y)) if adv_rows is None else np.asarray(adv_rows)
    if len(rows) == 0 or A is None:
        return loss_y, loss_y, np.nan, backward(F, fr.cache, g_out), None, np.nan
    a_in = adversary_input(fr.tap[rows], y[rows], n_classes, sees_label)
    ar = forward(A, a_in)
    loss_s = cross_entropy(ar.output, s[rows])
    ga = backward(A, ar.cache, cross_entropy_grad(ar.output, s[rows]))
    r_width = fr.tap.shape[1]
    tap_grad = np.zeros_like(fr.tap)
    tap_grad[rows] = -beta * ga.input[:, :r_width]
    gf = backward(F, fr.cache, g_out, tap_grad)
    adv_acc = float(np.mean(np.argmax(ar.output, axis=1) == s[rows]))
    return loss_y - beta * loss_s, loss_y, loss_s, gf, ga, adv_acc


def _adversary_rows(synthetic, cfg):
    if cfg.filter_synthetic_from_adversary:
        return np.flatnonzero(~synthetic)
    return np.arange(len(synthetic))


def _adversary_only_step(F, A, x, y, s, tap_index, cfg, opt_a, rows):
    if len(rows) == 0:
        return np.nan, np.nan
    R = forward(F, x[rows], tap_index).tap
    ar = forward(A, adversary_input(R, y[rows], F.n_out, cfg.adversary_sees_label))
    loss = cross_entropy(ar.output, s[rows])
    apply_step(A, backward(A, ar.cache, cross_entropy_grad(ar.output, s[rows])), opt_a)
    return loss, float(np.mean(np.argmax(ar.output, axis=1) == s[rows]))


def train(train_set, val_set, f_arch, a_arch, cfg):
    """Fit predictor and adversary; returns the lowest-validation-loss checkpoint.

    ``train_set``/``val_set`` are :class:`~fairkit.data.LabeledDataset`.
    With ``beta == 0`` the adversary is never updated and the predictor
    follows exactly the plain classifier trajectory.
    """
    if cfg.beta > 0 and (train_set.s is None):
        raise ConfigError("adversarial training needs the sensitive attribute")
    X, y = train_set.X, train_set.y
    s = train_set.s
    synthetic = train_set.synthetic
    streams = rng_streams(cfg.seed)
    cards = train_set.cardinalities if f_arch.embedding_dim else None
    F = build_predictor(f_arch, X.shape[1], streams["predictor_init"], cardinalities=cards,
                        noise_sigma=cfg.noise_sigma)
    tap_index = resolve_tap(F, cfg.tap)
    A = build_adversary(a_arch, F.width_at(tap_index), f_arch.n_classes,
                        cfg.adversary_sees_label, streams["adversary_init"])
    opt_f = make_optimizer(cfg.optimizer, cfg.learning_rate)
    if cfg.plateau_patience is not None:
        opt_f.plateau = PlateauScheduler(patience=cfg.plateau_patience)
    opt_a = make_optimizer(cfg.adversary_optimizer, cfg.adversary_learning_rate)
    adversarial = cfg.beta > 0
    pair = TrainedPair(F, A, tap_index, cfg)
    shuffle, noise = streams["shuffle"], streams["noise"]
    n = len(y)
    bs = cfg.batch_size

    vmask = np.ones(len(val_set), dtype=bool)
    if cfg.filter_synthetic_from_validation:
        vmask = ~val_set.synthetic
    Xv, yv = val_set.X[vmask], val_set.y[vmask]

    def batches():
        order = shuffle.permutation(n)
        for start in range(0, n, bs):
            yield order[start:start + bs]

    if adversarial:
        for ep in range(cfg.adversary_pretrain_epochs):
            losses, accs = [], []
            for b in batches():
                rows = b[_adversary_rows(synthetic[b], cfg)]
                loss, acc = _adversary_only_step(F, A, X, y, s, tap_index, cfg, opt_a, rows)
                losses.append(loss)
                accs.append(acc)
            pair.history.append(EpochRecord(-cfg.adversary_pretrain_epochs + ep, np.nan, np.nan,
                                            float(np.nanmean(losses)), float(np.nanmean(accs)),
                                            "adversary_pretrain"))

    best, stale = np.inf, 0
    best_f = best_a = None
    for epoch in range(cfg.max_epochs):
        phase = "joint"
        if adversarial and cfg.freeze_alternation:
            phase = "predictor" if epoch % 2 == 0 else "adversary"
        losses_y, losses_s, accs = [], [], []
        for b in batches():
            xb, yb = X[b], y[b]
            sb = s[b] if s is not None else None
            adv_local = _adversary_rows(synthetic[b], cfg)
            if phase == "adversary":
                loss_s, acc = _adversary_only_step(F, A, X, y, s, tap_index, cfg, opt_a, b[adv_local])
                losses_s.append(loss_s)
                accs.append(acc)
                losses_y.append(cross_entropy(forward(F, xb).output, yb))
                continue
            if adversarial:
                _, loss_y, loss_s, gf, ga, acc = objective_grads(
                    F, A, xb, yb, sb, tap_index, cfg.beta, cfg.adversary_sees_label,
                    adv_rows=adv_local, training=True, rng=noise)
                pair.adversary_batches += 1
                pair.synthetic_rows_seen_by_adversary += int(synthetic[b][adv_local].sum())
            else:
                fr = forward(F, xb, training=True, rng=noise)
                loss_y = cross_entropy(fr.output, yb)
                gf = backward(F, fr.cache, cross_entropy_grad(fr.output, yb))
                ga, loss_s, acc = None, np.nan, np.nan
            if not np.isfinite(loss_y) or (adversarial and ga is not None and not np.isfinite(loss_s)):
                raise NumericError("training loss diverged", epoch)
            apply_step(F, gf, opt_f)
            if ga is not None and phase == "joint":
                apply_step(A, ga, opt_a)
            losses_y.append(loss_y)
            losses_s.append(loss_s)
            accs.append(acc)
        train_loss = float(np.mean(losses_y))
        val_loss = cross_entropy(forward(F, Xv).output, yv) if len(yv) else train_loss
        if not np.isfinite(val_loss):
            raise NumericError("validation loss diverged", epoch)
        pair.history.append(EpochRecord(
            epoch, train_loss, val_loss,
            float(np.nanmean(losses_s)) if adversarial else np.nan,
            float(np.nanmean(accs)) if adversarial else np.nan, phase))
        if opt_f.plateau is not None:
            opt_f.plateau.observe(train_loss, opt_f)
        if val_loss < best:
            best, stale, pair.best_epoch = val_loss, 0, epoch
            best_f = [p.copy() for p in F.parameters()]
            best_a = [p.copy() for p in A.parameters()]
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    for net, saved in ((F, best_f), (A, best_a)):
        if saved is not None:
            for p, v in zip(net.parameters(), saved):
                p[...] = v
            net.touch()
    return pair


def train_baseline(train_set, val_set, f_arch, cfg):
    """Reference plain classifier trainer (no adversary code path)."""
    streams = rng_streams(cfg.seed)
    cards = train_set.cardinalities if f_arch.embedding_dim else None
    F = build_predictor(f_arch, train_set.X.shape[1], streams["predictor_init"],
                        cardinalities=cards, noise_sigma=cfg.noise_sigma)
    settings = FitSettings(cfg.max_epochs, cfg.batch_size, cfg.learning_rate, cfg.optimizer,
                           cfg.early_stop_patience, cfg.plateau_patience)
    fit_classifier(F, train_set.X, train_set.y, settings, X_val=val_set.X, y_val=val_set.y,
                   streams=streams)
    return F


def predict(pair, X):
    """Evaluation-mode scores, argmax labels and the representation R."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != pair.predictor.n_in:
        raise ShapeError(f"expected {pair.predictor.n_in} input columns, got shape {X.shape}")
    fr = forward(pair.predictor, X, pair.tap_index)
    return Prediction(fr.output, np.argmax(fr.output, axis=1), fr.tap)


@dataclass
class ProbeResult:
    accuracy: float
    majority_baseline: float
    n_fit: int
    n_eval: int


def probe_representation(R, s, *, seed=0, hidden=(16,), max_epochs=300, learning_rate=0.01):
    """Train a fresh classifier on frozen ``R`` to predict ``s``.

    Rows are split in half (seeded): the probe is fit on one half and scored
    on the other, against the majority-class rate of the scored half.
    """
    R = np.asarray(R, dtype=np.float64)
    s = np.asarray(s).astype(np.int64)
    if len(np.unique(s)) < 2:
        raise MissingClassError("probe needs at least two sensitive groups")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(s))
    half = len(s) // 2
    fit_idx, eval_idx = order[:half], order[half:]
    mu = R[fit_idx].mean(axis=0)
    sd = R[fit_idx].std(axis=0)
    sd[sd < 1e-12] = 1.0
    Z = (R - mu) / sd
    n_groups = int(s.max()) + 1
    net = build_mlp(R.shape[1], hidden, n_groups, rng)
    settings = FitSettings(max_epochs=max_epochs, batch_size=len(fit_idx), learning_rate=learning_rate,
                           early_stop_patience=25)
    fit_classifier(net, Z[fit_idx], s[fit_idx], settings, seed=seed)
    pred = np.argmax(forward(net, Z[eval_idx]).output, axis=1)
    acc = float(np.mean(pred == s[eval_idx]))
    majority = float(np.max(np.bincount(s[eval_idx], minlength=n_groups)) / len(eval_idx))
    return ProbeResult(acc, majority, len(fit_idx), len(eval_idx))


def adversary_probe(pair, X, s, *, seed=0, **kw):
    """Residual S-information in the representation of a trained predictor."""
    return probe_representation(predict(pair, X).representation, s, seed=seed, **kw)


class AdversarialDebiasClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn style wrapper around :func:`train`.

    ``fit`` takes the sensitive attribute (and optional synthetic-row flags)
    as keyword arguments. Without explicit validation data a stratified
    ``validation_fraction`` of the training rows is held out.
    """

    def __init__(self, beta=1.0, tap="logits", adversary_sees_label=True,
                 freeze_alternation=False, noise_sigma=0.0,
                 filter_synthetic_from_adversary=False, filter_synthetic_from_validation=False,
                 adversary_pretrain_epochs=0, max_epochs=100, early_stop_patience=10,
                 batch_size=64, learning_rate=1e-3, adversary_learning_rate=1e-3,
                 optimizer="adam", adversary_optimizer="adam", hidden=(), embedding_dim=None,
                 adversary_hidden=(), validation_fraction=0.1, random_state=0):
        self.beta = beta
        self.tap = tap
        self.adversary_sees_label = adversary_sees_label
        self.freeze_alternation = freeze_alternation
        self.noise_sigma = noise_sigma
        self.filter_synthetic_from_adversary = filter_synthetic_from_adversary
        self.filter_synthetic_from_validation = filter_synthetic_from_validation
        self.adversary_pretrain_epochs = adversary_pretrain_epochs
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adversary_learning_rate = adversary_learning_rate
        self.optimizer = optimizer
        self.adversary_optimizer = adversary_optimizer
        self.hidden = hidden
        self.embedding_dim = embedding_dim
        self.adversary_hidden = adversary_hidden
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self):
        return AdvConfig(
            beta=self.beta, tap=self.tap, adversary_sees_label=self.adversary_sees_label,
            freeze_alternation=self.freeze_alternation, noise_sigma=self.noise_sigma,
            filter_synthetic_from_adversary=self.filter_synthetic_from_adversary,
            filter_synthetic_from_validation=self.filter_synthetic_from_validation,
            adversary_pretrain_epochs=self.adversary_pretrain_epochs, max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience, batch_size=self.batch_size,
            learning_rate=self.learning_rate, optimizer=self.optimizer,
            adversary_learning_rate=self.adversary_learning_rate,
            adversary_optimizer=self.adversary_optimizer, seed=int(self.random_state or 0))

    def fit(self, X, y, *, sensitive=None, synthetic=None, X_val=None, y_val=None,
            sensitive_val=None, synthetic_val=None, cardinalities=None):
        from .data import CATEGORICAL, LabeledDataset, Schema

        X = check_features(X, integer_codes=bool(self.embedding_dim))
        y, self.classes_ = check_labels(y, len(X))
        cfg = self._config()
        if sensitive is None and cfg.beta > 0:
            raise ConfigError("beta > 0 requires the sensitive attribute")
        s = None if sensitive is None else np.asarray(sensitive).astype(np.int64)
        syn = np.zeros(len(X), dtype=bool) if synthetic is None else np.asarray(synthetic, dtype=bool)
        if X_val is None:
            rng = np.random.default_rng(cfg.seed)
            order = rng.permutation(len(X))
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            val_idx, tr_idx = order[:n_val], order[n_val:]
        else:
            tr_idx = val_idx = None
        if cardinalities is None and self.embedding_dim:
            cardinalities = [int(c) + 1 for c in X.max(axis=0)]
        schema = Schema(tuple((f"x{j}", CATEGORICAL) for j in range(X.shape[1])), "y", "s")
        enc = {} if cardinalities is None else {
            f"x{j}": [str(v) for v in range(c)] for j, c in enumerate(cardinalities)}

        def ds(Xa, ya, sa, syna):
            return LabeledDataset(Xa, ya, sa, syna, schema, enc)

        if tr_idx is not None:
            train_set = ds(X[tr_idx], y[tr_idx], None if s is None else s[tr_idx], syn[tr_idx])
            val_set = ds(X[val_idx], y[val_idx], None if s is None else s[val_idx], syn[val_idx])
        else:
            Xv = check_features(X_val, integer_codes=bool(self.embedding_dim))
            yv = np.searchsorted(self.classes_, np.asarray(y_val))
            sv = None if sensitive_val is None else np.asarray(sensitive_val).astype(np.int64)
            synv = np.zeros(len(Xv), bool) if synthetic_val is None else np.asarray(synthetic_val, bool)
            train_set, val_set = ds(X, y, s, syn), ds(Xv, yv, sv, synv)
        n_groups = 2 if s is None else max(2, int(s.max()) + 1)
        f_arch = PredictorArch(tuple(self.hidden), self.embedding_dim, len(self.classes_))
        a_arch = AdversaryArch(tuple(self.adversary_hidden), n_groups)
        self.pair_ = train(train_set, val_set, f_arch, a_arch, cfg)
        self.history_ = self.pair_.history
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "pair_")
        return predict(self.pair_, check_features(X, integer_codes=bool(self.embedding_dim))).scores

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        """The internal representation R at the configured tap."""
        check_is_fitted(self, "pair_")
        return predict(self.pair_, check_features(X, integer_codes=bool(self.embedding_dim))).representation
