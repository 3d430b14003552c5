"""Losses, the joint objective, Adam, and the cross-validation harness."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from . import model as mdl
from .data import Dataset

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class Hyperparams:
    alpha: float = 0.01
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    precision: int = 64
    threshold: float = 0.5
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


# -- losses ----------------------------------------------------------------


def _clamped(y):
    return np.clip(np.asarray(y, dtype=np.float64), LOG_CLAMP, 1.0 - LOG_CLAMP)


def event_loss(Y, Z) -> float:
    """Sigmoid cross-entropy summed over events and frames."""
    Y, Z = np.asarray(Y), np.asarray(Z)
    if Y.shape != Z.shape:
        raise ValueError(f"posterior {Y.shape} and target {Z.shape} shapes differ")
    y = _clamped(Y)
    z = Z.astype(np.float64)
    return float(-(z * np.log(y) + (1.0 - z) * np.log(1.0 - y)).sum())


def scene_loss(y, z) -> float:
    """Softmax cross-entropy of an already-normalized posterior and a one-hot target."""
    y, z = np.asarray(y, dtype=np.float64), np.asarray(z)
    if y.shape != z.shape:
        raise ValueError("posterior and target shapes differ")
    if not (np.isin(z, (0, 1)).all() and z.sum() == 1):
        raise ValueError("scene target must be one-hot")
    return float(-np.log(_clamped(y)[z.astype(bool)]).sum())


def total_loss(e1: float, e2: float, alpha: float) -> float:
    return e1 + alpha * e2


def one_hot(index, n) -> np.ndarray:
    z = np.zeros(n, dtype=np.uint8)
    z[index] = 1
    return z


def _batch_losses(event_probs, scene_probs, rolls, scenes):
    y = _clamped(event_probs)
    z = rolls.astype(np.float64)
    e1 = -(z * np.log(y) + (1.0 - z) * np.log(1.0 - y)).sum(axis=(1, 2))
    e2 = -np.log(_clamped(scene_probs[np.arange(len(scenes)), scenes]))
    return e1, e2


def backward(cache: mdl.ForwardCache, rolls, scenes, alpha: float):
    """Joint loss and gradients for the batch held in ``cache``.

    Clip-level sums are averaged over the batch. Returns ``(E, E1, E2,
    grads)`` where E1 and E2 are batch means. ``scenes`` may be indices or
    one-hot rows.
    """
    rolls = np.asarray(rolls)
    if rolls.ndim == 2:
        rolls = rolls[None]
    scenes = np.atleast_1d(np.asarray(scenes))
    n_scenes = cache.scene_logits.shape[-1]
    if scenes.ndim == 2 or (cache.squeeze and scenes.shape == (n_scenes,) and n_scenes > 1):
        scenes = scenes.reshape(-1, n_scenes)
        if not (np.isin(scenes, (0, 1)).all() and (scenes.sum(axis=1) == 1).all()):
            raise ValueError("scene targets must be one-hot")
        scenes = scenes.argmax(axis=1)
    if len(scenes) != cache.batch or rolls.shape[0] != cache.batch:
        raise ValueError("targets do not match the cached batch")
    B = cache.batch
    event_probs = mdl.ops.sigmoid(cache.event_logits).transpose(0, 2, 1)
    scene_probs = mdl.ops.softmax(cache.scene_logits, axis=-1)
    if rolls.shape != event_probs.shape:
        raise ValueError(f"event targets {rolls.shape} do not match outputs {event_probs.shape}")
    e1, e2 = _batch_losses(event_probs, scene_probs, rolls, scenes)
    E1, E2 = float(e1.mean()), float(e2.mean())
    d_event = (event_probs - rolls) / B
    d_scene = None
    if alpha != 0:
        d_scene = scene_probs.copy()
        d_scene[np.arange(B), scenes] -= 1.0
        d_scene *= alpha / B
    grads = mdl.backward(cache, d_event, d_scene)
    return total_loss(E1, E2, alpha), E1, E2, grads


def loss_and_grads(p: mdl.ModelParams, X, rolls, scenes, alpha, impl=None):
    _, _, cache = mdl.forward(X, p, impl=impl)
    return backward(cache, rolls, scenes, alpha)


def joint_loss(p: mdl.ModelParams, X, rolls, scenes, alpha) -> float:
    """Forward-only objective, the finite-difference target."""
    ev, sc, _ = mdl.forward(X, p)
    if ev.ndim == 2:
        ev, sc = ev[None], sc[None]
        rolls = np.asarray(rolls)[None]
    e1, e2 = _batch_losses(ev, sc, np.asarray(rolls), np.atleast_1d(scenes))
    return total_loss(float(e1.mean()), float(e2.mean()), alpha)


def loss_terms(p: mdl.ModelParams, X, rolls, scenes) -> np.ndarray:
    """Forward-only (E1, E2) batch means."""
    ev, sc, _ = mdl.forward(X, p)
    e1, e2 = _batch_losses(ev, sc, np.asarray(rolls), np.atleast_1d(scenes))
    return np.array([e1.mean(), e2.mean()])


def gradient_check(seed: int, alphas=(0.0, 0.01, 1.0), arch: mdl.Architecture = mdl.TINY,
                   eps: float = 1e-5, batch: int = 2, impl=None) -> dict:
    """Analytic vs central-difference gradients of E1 + alpha*E2 at 64-bit.

    E1 and E2 are differenced separately, which keeps round-off from
    swamping the alpha-scaled scene terms; the numeric gradient of the joint
    objective is then n1 + alpha*n2. Returns {alpha: (worst, per-tensor)}.
    """
    from .nn.gradcheck import finite_diff_grad, max_relative_error

    p = mdl.init_params(arch, seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 7])
    for name, t in p.tensors.items():
        if t.ndim == 1:  # non-zero biases exercise every bias path
            t[...] = rng.uniform(-0.1, 0.1, t.shape)
    X = rng.standard_normal((batch, arch.n_mels, arch.n_frames))
    rolls = (rng.random((batch, arch.n_events, arch.n_frames)) < 0.4).astype(np.uint8)
    scenes = rng.integers(0, arch.n_scenes, batch)
    numeric = finite_diff_grad(lambda q: loss_terms(p, X, rolls, scenes), p.tensors, eps)
    out = {}
    for a in alphas:
        _, _, _, analytic = loss_and_grads(p, X, rolls, scenes, a, impl)
        num_a = {k: v[..., 0] + a * v[..., 1] for k, v in numeric.items()}
        out[a] = max_relative_error(analytic, num_a)
    return out


# -- optimizer -------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(p, grads: dict, state: AdamState, hp: Hyperparams):
    """One bias-corrected Adam update, in place on ``p``.

    ``p`` is a ModelParams or a plain dict of arrays.
    """
    tensors = p.tensors if isinstance(p, mdl.ModelParams) else p
    for name, g in grads.items():
        if name not in tensors or np.shape(g) != tensors[name].shape:
            raise ValueError(f"gradient {name!r} does not match any parameter")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    lr_t = hp.learning_rate * np.sqrt(1 - state.beta2**state.step) / (1 - state.beta1**state.step)
    for name, g in grads.items():
        theta = tensors[name]
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        theta -= (lr_t * m / (np.sqrt(v) + state.eps)).astype(theta.dtype, copy=False)
    if isinstance(p, mdl.ModelParams):
        p.version += 1
    return p, state


# -- training loop ---------------------------------------------------------


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # dicts: epoch, E1, E2, E
    fold_metrics: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "E1", "E2", "E"])
        for row in self.epochs:
            w.writerow([row["epoch"], repr(row["E1"]), repr(row["E2"]), repr(row["E"])])
        return buf.getvalue()


def arch_for(ds: Dataset, base: mdl.Architecture = mdl.DESK) -> mdl.Architecture:
    return replace(
        base,
        n_mels=ds.features.shape[1],
        n_frames=ds.features.shape[2],
        n_events=len(ds.events),
        n_scenes=len(ds.scene_vocab),
    )


def _split(ds: Dataset, test_fold):
    if test_fold is None:
        return ds, None
    train = ds.subset(ds.folds != test_fold)
    test = ds.subset(ds.folds == test_fold)
    return train, test


def train_fold(ds: Dataset, test_fold, hp: Hyperparams, arch: mdl.Architecture | None = None,
               checkpoint_dir=None, init: mdl.ModelParams | None = None, impl=None):
    """Train on every clip outside ``test_fold`` (all clips when it is None)."""
    train, _ = _split(ds, test_fold)
    if len(train) == 0:
        raise ValueError(f"no training clips outside fold {test_fold}")
    arch = arch or arch_for(ds)
    p = init.copy() if init is not None else mdl.init_params(arch, hp.seed, dtype=hp.dtype)
    mean = train.features.mean(axis=(0, 2))
    std = train.features.std(axis=(0, 2)) + 1e-6
    p.buffers = {"feature_mean": mean.astype(hp.dtype), "feature_std": std.astype(hp.dtype)}
    X = train.features.astype(hp.dtype)
    history = TrainHistory()
    state = AdamState()
    rng = np.random.default_rng([hp.seed, 1])
    n = len(train)
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(2)
        for start in range(0, n, hp.batch_size):
            idx = np.sort(order[start : start + hp.batch_size])
            _, e1, e2, grads = loss_and_grads(p, X[idx], train.rolls[idx], train.scenes[idx], hp.alpha, impl)
            sums += np.array([e1, e2]) * len(idx)
            if hp.alpha == 0:
                grads = {k: g for k, g in grads.items() if not mdl.is_scene_param(k)}
            optimizer_step(p, grads, state, hp)
        E1, E2 = sums / n
        history.epochs.append({"epoch": epoch, "E1": float(E1), "E2": float(E2), "E": float(E1 + hp.alpha * E2)})
        log.debug("epoch %d E1=%.4f E2=%.4f", epoch, E1, E2)
        if checkpoint_dir and hp.checkpoint_every and epoch % hp.checkpoint_every == 0:
            mdl.save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch:04d}.ckpt", p)
    return p, history


# -- evaluation ------------------------------------------------------------


@dataclass
class Evaluation:
    counts: metrics.MetricCounts
    per_event: list
    ref_scenes: list
    pred_scenes: list
    pred_rolls: np.ndarray

    @property
    def event_f(self) -> float:
        return metrics.precision_recall_f(self.counts)[2]

    @property
    def event_er(self) -> float:
        return metrics.error_rate(self.counts)

    @property
    def scene_f(self) -> float:
        return metrics.scene_f(self.ref_scenes, self.pred_scenes)

    def __add__(self, other: "Evaluation") -> "Evaluation":
        return Evaluation(
            self.counts + other.counts,
            [a + b for a, b in zip(self.per_event, other.per_event)],
            self.ref_scenes + other.ref_scenes,
            self.pred_scenes + other.pred_scenes,
            np.concatenate([self.pred_rolls, other.pred_rolls]),
        )


def infer(p: mdl.ModelParams, X, batch_size: int = 16, impl=None):
    ev, sc = [], []
    for start in range(0, len(X), batch_size):
        e, s, _ = mdl.forward(X[start : start + batch_size], p, impl=impl)
        ev.append(e)
        sc.append(s)
    return np.concatenate(ev), np.concatenate(sc)


def evaluate(p: mdl.ModelParams, ds: Dataset, threshold: float = 0.5, segment_frames: int = 1) -> Evaluation:
    if len(ds) == 0:
        raise ValueError("nothing to evaluate")
    ev, sc = infer(p, ds.features.astype(p.dtype))
    pred = mdl.predict_events(ev, threshold)
    counts = metrics.MetricCounts.empty()
    per_event = [metrics.MetricCounts.empty() for _ in range(ds.rolls.shape[1])]
    for ref_roll, pred_roll in zip(ds.rolls, pred):
        counts = counts + metrics.frame_counts(ref_roll, pred_roll, segment_frames)
        per_event = [a + b for a, b in zip(per_event, metrics.per_event_counts(ref_roll, pred_roll, segment_frames))]
    return Evaluation(counts, per_event, ds.scenes.tolist(), mdl.predict_scene(sc).tolist(), pred)


def report_rows(result: Evaluation, events, scenes) -> list:
    rows = [
        ("event_f", "overall", result.event_f),
        ("event_er", "overall", result.event_er),
        ("scene_f", "overall", result.scene_f),
    ]
    for label, c in zip(events, result.per_event):
        # class-wise: one event row has no substitutions, so ER = (D + I) / N_label
        rows.append(("event_f", label, metrics.precision_recall_f(c)[2]))
        rows.append(("event_er", label, metrics.error_rate(c)))
    per_scene = metrics.scene_f_per_class(result.ref_scenes, result.pred_scenes, list(range(len(scenes))))
    for idx, label in enumerate(scenes):
        rows.append(("scene_f", label, per_scene[idx]))
    return rows


@dataclass
class CVResult:
    alpha: float
    folds: dict  # fold id -> Evaluation
    histories: dict

    @property
    def pooled(self) -> Evaluation:
        evals = [self.folds[k] for k in sorted(self.folds)]
        total = evals[0]
        for e in evals[1:]:
            total = total + e
        return total


def cross_validate(ds: Dataset, hp: Hyperparams, n_folds: int = 4, arch=None,
                   segment_frames: int = 1, impl=None) -> CVResult:
    fold_ids = sorted(set(ds.folds.tolist()))
    if not set(fold_ids) <= set(range(1, n_folds + 1)):
        raise ValueError(f"fold ids {fold_ids} outside 1..{n_folds}")
    missing = sorted(set(range(1, n_folds + 1)) - set(fold_ids))
    if missing:
        raise ValueError(f"folds {missing} have no test clips")
    arch = arch or arch_for(ds)
    evals, histories = {}, {}
    for k in range(1, n_folds + 1):
        p, hist = train_fold(ds, k, hp, arch, impl=impl)
        _, test = _split(ds, k)
        evals[k] = evaluate(p, test, hp.threshold, segment_frames)
        hist.fold_metrics.append({"fold": k, "event_f": evals[k].event_f, "event_er": evals[k].event_er,
                                  "scene_f": evals[k].scene_f})
        histories[k] = hist
        log.info("alpha=%g fold %d: event F %.4f ER %.4f scene F %.4f", hp.alpha, k,
                 evals[k].event_f, evals[k].event_er, evals[k].scene_f)
    return CVResult(hp.alpha, evals, histories)


def sweep_alpha(ds: Dataset, alphas, hp: Hyperparams, n_folds: int = 4, arch=None, segment_frames: int = 1) -> list:
    """One row per alpha: (alpha, event_f, event_er, scene_f) from pooled CV counts."""
    rows = []
    for a in alphas:
        res = cross_validate(ds, replace(hp, alpha=float(a)), n_folds, arch, segment_frames)
        pooled = res.pooled
        rows.append((float(a), pooled.event_f, pooled.event_er, pooled.scene_f))
    return rows
