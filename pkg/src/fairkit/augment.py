"""Latent-space augmentation for an unrepresented (Y, S) subpopulation.

A fixed multi-scale toy generator stands in for a style-based GAN. The
pipeline: sample (observation, latent) pairs, label them with an
observation-space classifier ``C1``, distil ``C1`` into a latent-space
classifier ``C2``, then push latents up ``log P(target | w)`` on selected
scales only and decode the result.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import NUMERIC, LabeledDataset, Schema
from .errors import (
    AscentWarning, ConfigError, DistillationError, MaskError, MissingClassError, YieldError,
)
from .nn import backward, build_mlp, forward
from .training import FitSettings, fit_classifier

TARGET_KINDS = ("label_Y", "attribute_S")


@dataclass
class ToyGenerator:
    """Fixed decoder ``x = sum_i tanh(w_i @ P_i) @ Q_i`` onto a ``side x side`` grid.

    Hidden unit 0 of scale ``i`` listens only to coordinate 0 of ``w_i`` and
    writes the scale's attribute pattern. Scale 0 is a nuisance gradient,
    scale 1 a global tone (the S analogue) and scale 2 a set of localized
    spots (the Y analogue). The remaining units add weak random texture.
    ``entanglement`` leaks a fraction of the tone into the spot scale.
    """

    n_scales: int = 3
    latent_dim: int = 4
    hidden: int = 16
    side: int = 16
    gain: float = 2.0
    texture: float = 0.15
    pattern_amplitudes: tuple = (0.6, 0.5, 1.0)
    entanglement: float = 0.0
    seed: int = 0
    P: list = field(default_factory=list, repr=False)
    Q: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.n_scales < 2:
            raise ConfigError("generator needs at least two scales")
        if len(self.pattern_amplitudes) != self.n_scales:
            raise ConfigError("one pattern amplitude per scale")
        rng = np.random.default_rng(self.seed)
        patterns = self._patterns()
        self.P, self.Q = [], []
        for i in range(self.n_scales):
            P = rng.normal(size=(self.latent_dim, self.hidden)) / np.sqrt(self.latent_dim)
            P[0, :] = 0.0
            P[:, 0] = 0.0
            P[0, 0] = self.gain
            Q = rng.normal(size=(self.hidden, self.n_pixels)) * self.texture
            Q[0] = self.pattern_amplitudes[i] * patterns[i]
            self.P.append(P)
            self.Q.append(Q)
        if self.entanglement and self.n_scales > 2:
            self.Q[2][0] = self.Q[2][0] + self.entanglement * self.Q[1][0]

    @property
    def n_pixels(self):
        return self.side * self.side

    @property
    def flat_dim(self):
        return self.n_scales * self.latent_dim

    def _patterns(self):
        s = self.side
        yy, xx = np.mgrid[0:s, 0:s] / (s - 1)
        spots = np.zeros((s, s))
        for r, c in ((s // 4, s // 4), (s // 4, 3 * s // 4), (3 * s // 4, s // 2)):
            spots[max(r - 1, 0):r + 1, max(c - 1, 0):c + 1] = 1.0
        tone = np.ones((s, s))
        nuisance = 2 * xx - 1
        pats = [nuisance, tone, spots]
        rng = np.random.default_rng(self.seed + 1)
        while len(pats) < self.n_scales:
            pats.append(rng.normal(size=(s, s)) * 0.3)
        return [p.ravel() for p in pats[:self.n_scales]]

    def decode(self, w):
        """Observations for latents of shape ``(n, n_scales, latent_dim)``."""
        w = np.asarray(w, dtype=np.float64)
        if w.ndim == 2:
            w = w[None]
        if w.shape[1:] != (self.n_scales, self.latent_dim):
            raise ConfigError(f"latent shape {w.shape[1:]} does not match the generator")
        out = np.zeros((w.shape[0], self.n_pixels))
        for i in range(self.n_scales):
            out += np.tanh(w[:, i, :] @ self.P[i]) @ self.Q[i]
        return out

    def attributes(self, w):
        """Ground-truth ``(y, s)`` read off the routed coordinates."""
        w = np.asarray(w, dtype=np.float64)
        return (w[:, 2, 0] > 0).astype(np.int64), (w[:, 1, 0] > 0).astype(np.int64)


@dataclass
class StyleLatent:
    """Per-scale latent vectors ``w`` of shape ``(n, n_scales, dim)`` plus an update mask."""

    w: np.ndarray
    update_mask: frozenset = frozenset()

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim == 2:
            self.w = self.w[None]
        self.update_mask = frozenset(int(i) for i in self.update_mask)
        if any(i < 0 or i >= self.w.shape[1] for i in self.update_mask):
            raise MaskError("update mask names a scale that does not exist")

    def __len__(self):
        return self.w.shape[0]

    @property
    def flat(self):
        return self.w.reshape(self.w.shape[0], -1)

    def copy(self):
        return StyleLatent(self.w.copy(), self.update_mask)


@dataclass
class PairBatch:
    observations: np.ndarray
    latents: np.ndarray

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        for x, w in zip(self.observations, self.latents):
            yield x, StyleLatent(w)


def sample_pairs(gen, n, seed=0):
    """``n`` (observation, latent) pairs, latents standard normal per scale."""
    if n < 0:
        raise ConfigError("n must be non-negative")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, gen.n_scales, gen.latent_dim))
    return PairBatch(gen.decode(w) if n else np.zeros((0, gen.n_pixels)), w)


class NetClassifier:
    """Evaluation-mode wrapper around a trained :class:`~fairkit.nn.DenseNet`."""

    def __init__(self, net, train_predictions=None):
        self.net = net
        self.train_predictions = train_predictions

    def predict_proba(self, X):
        return forward(self.net, np.asarray(X, dtype=np.float64)).output

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def log_prob_grad(self, X, target):
        """Per-row ``d log P(target | x) / dx`` (computed from the logits)."""
        X = np.asarray(X, dtype=np.float64)
        tap = self.net.index_of_last("linear")
        fr = forward(self.net, X, tap)
        p = fr.output
        g = -p
        g[:, target] += 1.0
        grads = backward(self.net, fr.cache, np.zeros_like(p), tap_grad=g)
        return np.log(np.maximum(p[:, target], 1e-300)), grads.input


def _fit_net(X, labels, hidden, seed, epochs, lr):
    labels = np.asarray(labels).astype(np.int64)
    if len(np.unique(labels)) < 2:
        raise MissingClassError("classifier training needs both classes")
    rng = np.random.default_rng(seed)
    net = build_mlp(X.shape[1], hidden, int(labels.max()) + 1, rng)
    settings = FitSettings(max_epochs=epochs, batch_size=64, learning_rate=lr,
                           early_stop_patience=epochs)
    fit_classifier(net, X, labels, settings, seed=seed)
    return net


def train_c1(X, labels, *, hidden=(16,), seed=0, epochs=30, learning_rate=3e-3):
    """Observation-space classifier for one property (Y or S)."""
    X = np.asarray(X, dtype=np.float64)
    net = _fit_net(X, labels, hidden, seed, epochs, learning_rate)
    clf = NetClassifier(net)
    clf.train_predictions = clf.predict(X)
    return clf


def label_pairs(c1, pairs):
    return c1.predict(pairs.observations)


def train_c2(latents, labels, *, hidden=(16,), holdout=0.2, floor=0.9, seed=0, epochs=40,
             learning_rate=3e-3):
    """Latent-space classifier replicating ``labels`` (``C1``'s calls on the pairs).

    Raises :class:`DistillationError` when agreement on the held-out pairs
    falls below ``floor``.
    """
    W = np.asarray(latents, dtype=np.float64)
    W = W.reshape(W.shape[0], -1)
    labels = np.asarray(labels).astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(W))
    n_hold = max(1, int(round(holdout * len(W))))
    hold, fit_idx = order[:n_hold], order[n_hold:]
    net = _fit_net(W[fit_idx], labels[fit_idx], hidden, seed, epochs, learning_rate)
    clf = NetClassifier(net)
    agreement = float(np.mean(clf.predict(W[hold]) == labels[hold]))
    clf.agreement = agreement
    if agreement < floor:
        raise DistillationError(
            f"latent classifier agrees with C1 on {agreement:.3f} of held-out pairs "
            f"(floor {floor})", agreement)
    return clf


@dataclass
class AugmentConfig:
    gamma: float = 0.5
    steps: int = 100
    target_kind: str = "attribute_S"
    target_class: int = 1
    desired_confidence: float = 0.9
    mask: tuple = (1,)
    max_halvings: int = 30

    def __post_init__(self):
        if self.gamma < 0 or self.steps < 0:
            raise ConfigError("gamma and steps must be non-negative")
        if self.target_kind not in TARGET_KINDS:
            raise ConfigError(f"target kind must be one of {TARGET_KINDS}")
        if not 0.5 < self.desired_confidence <= 1.0:
            raise ConfigError("desired confidence must lie in (0.5, 1]")


@dataclass
class TransformResult:
    latent: StyleLatent
    trajectory: np.ndarray
    reached: np.ndarray
    steps_taken: np.ndarray


def transform(latent, c2, cfg):
    """Gradient ascent on ``log P(target | w)`` restricted to the masked scales.

    Each row keeps its own step size, halved whenever a step would lower the
    target log-probability; rows stop once they reach the desired confidence.
    ``trajectory[j, r]`` is row ``r``'s confidence after step ``j`` (row 0 is
    the start). Rows that never get there trigger an :class:`AscentWarning`.
    """
    mask = frozenset(cfg.mask) if cfg.mask is not None else latent.update_mask
    out = latent.copy()
    out.update_mask = frozenset(mask)
    n, scales, dim = out.w.shape
    if any(i < 0 or i >= scales for i in mask):
        raise MaskError("update mask names a scale that does not exist")
    mvec = np.zeros((scales, dim), dtype=bool)
    mvec[sorted(mask)] = True
    mvec = mvec.ravel()
    t = cfg.target_class
    w = out.w.reshape(n, -1).copy()
    logp, grad = c2.log_prob_grad(w, t)
    conf = np.exp(logp)
    step = np.full(n, float(cfg.gamma))
    active = conf < cfg.desired_confidence
    traj = [conf.copy()]
    taken = np.zeros(n, dtype=np.int64)
    for _ in range(cfg.steps):
        if cfg.gamma == 0 or not active.any():
            break
        rows = np.flatnonzero(active)
        pending = rows
        cand_w = w.copy()
        new_logp = logp.copy()
        new_grad = grad.copy()
        for _ in range(cfg.max_halvings + 1):
            if len(pending) == 0:
                break
            trial = w[pending] + step[pending, None] * np.where(mvec, grad[pending], 0.0)
            lp, gr = c2.log_prob_grad(trial, t)
            ok = lp >= logp[pending]
            good = pending[ok]
            cand_w[good], new_logp[good], new_grad[good] = trial[ok], lp[ok], gr[ok]
            pending = pending[~ok]
            step[pending] *= 0.5
        # rows still pending after all halvings stay put
        moved = np.setdiff1d(rows, pending)
        w[moved], logp[moved], grad[moved] = cand_w[moved], new_logp[moved], new_grad[moved]
        taken[moved] += 1
        conf = np.exp(logp)
        active = conf < cfg.desired_confidence
        active[pending] = False
        traj.append(conf.copy())
    out.w = w.reshape(n, scales, dim)
    reached = np.exp(logp) >= cfg.desired_confidence
    if not reached.all():
        warnings.warn(f"{int((~reached).sum())} of {n} latents did not reach confidence "
                      f"{cfg.desired_confidence} in {cfg.steps} steps", AscentWarning, stacklevel=2)
    return TransformResult(out, np.array(traj), reached, taken)


def scale_sensitivity(c2, latents, target=1):
    """Mean gradient norm of ``log P(target | w)`` per scale (which scales steer the class)."""
    W = np.asarray(latents, dtype=np.float64)
    n, scales, dim = W.shape
    _, g = c2.log_prob_grad(W.reshape(n, -1), target)
    norms = np.linalg.norm(g.reshape(n, scales, dim), axis=2).mean(axis=0)
    total = norms.sum()
    return norms / total if total > 0 else norms


@dataclass
class SynthesisResult:
    dataset: LabeledDataset
    requested: int
    candidates: int
    accepted: int
    trajectories: dict
    latents: np.ndarray = None


class IntelligentAugmenter:
    """Distils latent classifiers from ``C1_y`` / ``C1_s`` and synthesizes a target cell."""

    def __init__(self, gen, c1_y, c1_s, *, n_pairs=4000, c2_hidden=(16,), agreement_floor=0.9,
                 seed=0):
        self.gen = gen
        self.c1 = {"label_Y": c1_y, "attribute_S": c1_s}
        self.n_pairs = n_pairs
        self.c2_hidden = c2_hidden
        self.agreement_floor = agreement_floor
        self.seed = seed
        self.c2 = {}

    def distil(self):
        pairs = sample_pairs(self.gen, self.n_pairs, self.seed)
        for k, (kind, c1) in enumerate(self.c1.items()):
            self.c2[kind] = train_c2(pairs.latents, label_pairs(c1, pairs), hidden=self.c2_hidden,
                                     floor=self.agreement_floor, seed=self.seed + k)
        return self

    def synthesize(self, configs, n, *, cell=(1, 1), oversample=2.0, schema=None):
        if not self.c2:
            self.distil()
        y_star, s_star = cell
        if n == 0:
            return SynthesisResult(_empty_images(self.gen, schema), 0, 0, 0, {})
        m = int(np.ceil(oversample * n))
        pairs = sample_pairs(self.gen, m, self.seed + 7919)
        latent = StyleLatent(pairs.latents)
        trajectories = {}
        for kind, cls in (("label_Y", y_star), ("attribute_S", s_star)):
            cfg = configs[kind]
            cfg = AugmentConfig(cfg.gamma, cfg.steps, kind, cls, cfg.desired_confidence, cfg.mask,
                                cfg.max_halvings)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AscentWarning)
                res = transform(latent, self.c2[kind], cfg)
            latent = res.latent
            trajectories[kind] = res.trajectory
        x = self.gen.decode(latent.w)
        conf = min(configs["label_Y"].desired_confidence, configs["attribute_S"].desired_confidence)
        ok = ((self.c1["label_Y"].predict_proba(x)[:, y_star] >= conf)
              & (self.c1["attribute_S"].predict_proba(x)[:, s_star] >= conf))
        keep = np.flatnonzero(ok)[:n]
        if len(keep) < 0.1 * n:
            raise YieldError(f"only {len(keep)} of {n} requested rows passed the C1 checks",
                             int(len(keep)), n,
                             {"candidates": m, "passed_y": int(np.sum(
                                 self.c1["label_Y"].predict_proba(x)[:, y_star] >= conf)),
                              "passed_s": int(np.sum(
                                  self.c1["attribute_S"].predict_proba(x)[:, s_star] >= conf))})
        k = len(keep)
        ds = LabeledDataset(x[keep], np.full(k, y_star), np.full(k, s_star), np.ones(k, dtype=bool),
                            schema or image_schema(self.gen), provenance="synthetic")
        return SynthesisResult(ds, n, m, k, trajectories, latent.w[keep])


def _configs(cfg):
    if isinstance(cfg, dict):
        return cfg
    return {"label_Y": cfg, "attribute_S": cfg}


def synthesize_missing(gen, c1_y, c1_s, cfg, n, *, cell=(1, 1), seed=0, **kw):
    """Synthetic rows for ``cell`` flagged as synthetic; see :class:`IntelligentAugmenter`.

    ``cfg`` is one :class:`AugmentConfig` used for both attributes or a
    mapping ``{"label_Y": ..., "attribute_S": ...}``.
    """
    aug = IntelligentAugmenter(gen, c1_y, c1_s, seed=seed, **kw)
    return aug.synthesize(_configs(cfg), n, cell=cell).dataset


def image_schema(gen):
    return Schema(tuple((f"px{j}", NUMERIC) for j in range(gen.n_pixels)), "y", "s")


def _empty_images(gen, schema):
    return LabeledDataset(np.zeros((0, gen.n_pixels)), np.zeros(0), np.zeros(0),
                          np.zeros(0, dtype=bool), schema or image_schema(gen))


def synth_images(gen, n, *, noise=0.3, seed=0):
    """Toy image dataset: latents ~ N(0, I), labels from the routed coordinates."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, gen.n_scales, gen.latent_dim))
    x = gen.decode(w) + noise * rng.standard_normal((n, gen.n_pixels))
    y, s = gen.attributes(w)
    return LabeledDataset(x, y, s, np.zeros(n, dtype=bool), image_schema(gen),
                          provenance=f"synth_images(n={n}, noise={noise}, seed={seed})")


def trajectory_csv(trajectory):
    """``step,row,confidence`` rows for plotting ascent curves."""
    lines = ["step,row,confidence"]
    for j, row in enumerate(np.asarray(trajectory)):
        lines.extend(f"{j},{r},{float(c)!r}" for r, c in enumerate(row))
    return "\n".join(lines) + "\n"
