"""Loss, SGD training schedules and Q-clip evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nets, selectors
from . import tensor as tn
from .errors import ArgumentError, NumericError
from .nets import ModelParams, NetConfig
from .tensor import GradTape, Tensor
from .tsd import distill

log = logging.getLogger(__name__)

VARIANTS = ("i3d", "rand", "uniform", "attn", "tsd")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    ``base_*`` drives the single-stage runs used by the baselines and for
    pretraining the main network; ``stage1_*``/``stage2_*`` drive the two
    distillation stages. Learning rates decay by ``*_decay`` every
    ``*_decay_steps`` steps. ``pretrain_variant`` names the plain run whose
    main network initializes the distillation pipeline.
    """

    variant: str = "tsd"
    T: int = 16
    T_s: int = 4
    Q: int = 3
    batch_size: int = 32
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0
    base_lr: float = 0.05
    base_decay: float = 0.1
    base_decay_steps: int = 2000
    base_steps: int = 3000
    stage1_lr: float = 0.01
    stage1_decay: float = 0.1
    stage1_decay_steps: int = 1000
    stage1_steps: int = 3000
    stage2_lr: float = 0.003
    stage2_decay: float = 0.3
    stage2_decay_steps: int = 1500
    stage2_steps: int = 3000
    pretrain_variant: str = "uniform"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArgumentError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.pretrain_variant not in ("i3d", "rand", "uniform"):
            raise ArgumentError(f"pretrain_variant must be a plain sampling variant, "
                                f"got {self.pretrain_variant!r}")
        for name in ("base_lr", "stage1_lr", "stage2_lr"):
            if getattr(self, name) <= 0:
                raise ArgumentError(f"{name} must be > 0")
        if self.batch_size < 1 or self.Q < 1 or not 1 <= self.T_s <= self.T:
            raise ArgumentError(f"invalid batch/Q/T/T_s in {self}")

    def schedule(self, stage: str):
        """``(lr, decay, decay_steps, steps)`` for ``stage`` in base/stage1/stage2."""
        return tuple(getattr(self, f"{stage}_{k}") for k in ("lr", "decay", "decay_steps", "steps"))

    def to_dict(self):
        return asdict(self)


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    clips_evaluated: int
    skipped: int
    variant: str
    T: int
    T_s: int
    Q: int
    predictions: np.ndarray = field(repr=False, default=None)
    mean_probs: np.ndarray = field(repr=False, default=None)

    def row(self) -> dict:
        return {"variant": self.variant, "T": self.T, "T_s": self.T_s, "Q": self.Q,
                "accuracy": f"{self.accuracy:.6f}"}


EVAL_FIELDS = ("variant", "T", "T_s", "Q", "accuracy")


def write_eval_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EVAL_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def write_loss_csv(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "loss"))
        for i, v in enumerate(losses):
            w.writerow((i, repr(float(v))))


# ----------------------------------------------------------------------------
# loss


def cross_entropy(probs: Tensor, labels, floor=1e-12) -> Tensor:
    """Mean ``-log(max(p[label], floor))`` over a ``(K,)`` or ``(N, K)`` input."""
    batched = probs.ndim == 2
    p = probs.data if batched else probs.data[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = p.shape
    if labels.shape != (n,):
        raise ArgumentError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ArgumentError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    picked = p[rows, labels]
    kept = np.maximum(picked, p.dtype.type(floor))
    loss = -np.mean(np.log(kept))

    def grad_fn(g):
        gp = np.zeros_like(p)
        gp[rows, labels] = np.where(picked > floor, -1.0 / kept, 0.0) / n
        gp = gp * g
        return (gp if batched else gp[0],)

    return tn.record_op("cross_entropy", (probs,), np.asarray(loss, dtype=p.dtype), grad_fn)


# ----------------------------------------------------------------------------
# per-variant forward passes


def selection_for_training(variant, T, T_s, n, rng, dtype):
    """Per-clip one-hot transforms ``(n, T, T_s)`` for the sampling baselines."""
    if variant == "rand":
        return np.stack([selectors.one_hot_P(selectors.random_indices(T, T_s, rng), T, dtype)
                         for _ in range(n)])
    if variant == "uniform":
        hi = selectors.max_uniform_offset(T, T_s)
        offsets = rng.integers(0, hi + 1, size=n)
        return np.stack([selectors.one_hot_P(selectors.uniform_indices(T, T_s, int(o)), T, dtype)
                         for o in offsets])
    raise ArgumentError(f"variant {variant!r} has no sampling transform")


def train_forward(params: ModelParams, x: Tensor, variant: str, net_cfg: NetConfig, rng):
    """Class probabilities for a training batch under the variant's selection."""
    if variant == "i3d":
        return nets.recognize(x, params.main, net_cfg)
    if variant in ("rand", "uniform"):
        p = selection_for_training(variant, x.shape[1], net_cfg.T_s, x.shape[0], rng, x.dtype)
        return nets.recognize(distill(x, Tensor(p)), params.main, net_cfg)
    if variant == "attn":
        p = selectors.attention_P_train(nets.attention_weights(params))
        return nets.recognize(distill(x, p), params.main, net_cfg)
    if variant == "tsd":
        return nets.tsd_forward(x, params, net_cfg)[0]
    raise ArgumentError(f"unknown variant {variant!r}")


# ----------------------------------------------------------------------------
# training


def _trainable_view(params: ModelParams, groups) -> ModelParams:
    """Copy where params outside ``groups`` are untracked (no weight grads)."""
    frozen = {}
    for name, t in params.named().items():
        if name.split(".", 1)[0] not in groups:
            frozen[name] = Tensor._wrap(t.data)
    return params.with_values(frozen)


def run_sgd(params: ModelParams, clips, labels, net_cfg: NetConfig, cfg: TrainConfig,
            variant: str, groups, stage: str, progress=None):
    """SGD with momentum over the params in ``groups``; returns ``(params, losses)``.

    Params outside ``groups`` are returned as the very same tensor objects.
    """
    lr0, decay, decay_steps, steps = cfg.schedule(stage)
    stage_id = ("base", "stage1", "stage2").index(stage)
    rng = np.random.default_rng([cfg.seed, stage_id])
    names = [k for k in params.named() if k.split(".", 1)[0] in groups]
    velocity = {k: np.zeros_like(params.named()[k].data) for k in names}
    losses = []
    n = len(labels)
    order = rng.permutation(n)
    cursor = 0
    for step in range(steps):
        if cursor + cfg.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = np.sort(order[cursor:cursor + cfg.batch_size])
        cursor += cfg.batch_size
        x = Tensor._wrap(clips[idx])
        view = _trainable_view(params, groups)
        with GradTape() as tape:
            loss = cross_entropy(train_forward(view, x, variant, net_cfg, rng), labels[idx])
        value = float(loss.item())
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value} at {stage} step {step}")
        named = view.named()
        grads = tn.backward(tape, loss, {k: named[k] for k in names})
        lr = lr0 * decay ** (step // decay_steps)
        norm = np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        if not np.isfinite(norm):
            raise NumericError(f"non-finite gradient at {stage} step {step}")
        factor = cfg.clip_norm / norm if 0 < cfg.clip_norm < norm else 1.0
        updates = {}
        for k in names:
            g = grads[k] * grads[k].dtype.type(factor)
            v = velocity[k]
            v *= cfg.momentum
            v += g
            updates[k] = Tensor(named[k].data - v.astype(g.dtype) * g.dtype.type(lr),
                                requires_grad=True)
        params = params.with_values(updates)
        losses.append(value)
        if progress is not None:
            progress(stage, step, value)
    return params, losses


def train_baseline(params, clips, labels, net_cfg, cfg: TrainConfig, progress=None):
    """Single-stage training of a non-distilling variant (main net, plus attention weights)."""
    groups = ("main", "attention") if cfg.variant == "attn" else ("main",)
    return run_sgd(params, clips, labels, net_cfg, cfg, cfg.variant, groups, "base", progress)


def train_stage1(params, clips, labels, net_cfg, cfg: TrainConfig, progress=None):
    """Train extractor and TSD block with the main network frozen."""
    return run_sgd(params, clips, labels, net_cfg, cfg, "tsd", ("extractor", "tsd"), "stage1",
                   progress)


def train_stage2(params, clips, labels, net_cfg, cfg: TrainConfig, progress=None):
    """End-to-end training of extractor, TSD block and main network."""
    return run_sgd(params, clips, labels, net_cfg, cfg, "tsd", ("extractor", "tsd", "main"),
                   "stage2", progress)


def train_variant(clips, labels, net_cfg: NetConfig, cfg: TrainConfig, init_main=None,
                  progress=None):
    """Full recipe for ``cfg.variant``; returns ``(params, {stage: losses})``.

    For ``tsd`` the main network comes from ``init_main`` (a pretrained main
    group) or, if absent, from a ``cfg.pretrain_variant`` run on the same data.
    """
    curves = {}
    if cfg.variant != "tsd":
        params = nets.init_params(net_cfg, cfg.seed, cfg.variant)
        params, curves["base"] = train_baseline(params, clips, labels, net_cfg, cfg, progress)
        return params, curves
    params = nets.init_params(net_cfg, cfg.seed, "tsd")
    if init_main is None:
        pre_cfg = TrainConfig(**{**cfg.to_dict(), "variant": cfg.pretrain_variant})
        pre = nets.init_params(net_cfg, cfg.seed, cfg.pretrain_variant)
        pre, curves["base"] = train_baseline(pre, clips, labels, net_cfg, pre_cfg, progress)
        init_main = pre.main
    params = params.with_values({f"main.{k}": Tensor(v.data, requires_grad=True)
                                 for k, v in init_main.items()})
    params, curves["stage1"] = train_stage1(params, clips, labels, net_cfg, cfg, progress)
    params, curves["stage2"] = train_stage2(params, clips, labels, net_cfg, cfg, progress)
    return params, curves


# ----------------------------------------------------------------------------
# evaluation


def window_offsets(length, T, Q, rng):
    """Start frames of the Q windows cut from a video of ``length`` frames."""
    if Q == 1:
        return np.array([(length - T) // 2])
    return rng.integers(0, length - T + 1, size=Q)


def eval_selection(variant, T, T_s, rng, params=None, dtype=np.float32):
    """One-hot ``(T, T_s)`` test-time transform for non-learned variants."""
    if variant == "i3d":
        start = (T - T_s) // 2
        return selectors.one_hot_P(np.arange(start, start + T_s), T, dtype)
    if variant == "rand":
        return selectors.one_hot_P(selectors.random_indices(T, T_s, rng), T, dtype)
    if variant == "uniform":
        return selectors.one_hot_P(selectors.uniform_indices(T, T_s, 0), T, dtype)
    if variant == "attn":
        w = nets.attention_weights(params).data
        if len(w) != T:
            raise ArgumentError(f"attention weights cover {len(w)} frames, window has {T}")
        return selectors.one_hot_P(selectors.attention_indices(w, T_s), T, dtype)
    raise ArgumentError(f"unknown variant {variant!r}")


def window_probs(params, windows: np.ndarray, variant, T_s, net_cfg, selections=None):
    """Probabilities for a stack of ``(n, T, H, W, C)`` windows."""
    x = Tensor._wrap(windows)
    if variant == "tsd":
        return nets.tsd_forward(x, params, net_cfg)[0].data
    y = distill(x, Tensor._wrap(selections))
    return nets.recognize(y, params.main, net_cfg).data


def evaluate_qclips(params: ModelParams, clips, labels, variant, T, T_s, Q, seed,
                    net_cfg: NetConfig, batch_videos=32) -> EvalReport:
    """Average class probabilities over Q windows per video, predict the argmax.

    Window starts and per-window selections are drawn video by video from one
    generator seeded with ``seed``, so results do not depend on batching.
    """
    if Q < 1:
        raise ArgumentError("Q must be >= 1")
    if variant not in VARIANTS:
        raise ArgumentError(f"unknown variant {variant!r}")
    if not 1 <= T_s <= T:
        raise ArgumentError(f"need 1 <= T_s <= T, got T={T}, T_s={T_s}")
    if variant == "tsd" and (params.tsd_weights().T != T or params.tsd_weights().T_s != T_s):
        raise ArgumentError("TSD weights were built for a different T/T_s")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    length = clips.shape[1]
    k = net_cfg.num_classes
    usable = np.arange(len(labels)) if length >= T else np.arange(0)
    skipped = len(labels) - len(usable)
    dtype = clips.dtype
    mean_probs = np.zeros((len(usable), k))
    for start in range(0, len(usable), batch_videos):
        vids = usable[start:start + batch_videos]
        windows, sels = [], []
        for v in vids:
            for off in window_offsets(length, T, Q, rng):
                windows.append(clips[v, off:off + T])
                if variant != "tsd":
                    sels.append(eval_selection(variant, T, T_s, rng, params, dtype))
        probs = window_probs(params, np.stack(windows), variant, T_s, net_cfg,
                             np.stack(sels) if sels else None)
        mean_probs[start:start + len(vids)] = probs.reshape(len(vids), Q, k).mean(axis=1)
    preds = np.argmax(mean_probs, axis=1)
    truth = labels[usable]
    correct = preds == truth
    per_class = np.array([correct[truth == c].mean() if np.any(truth == c) else np.nan
                          for c in range(k)])
    accuracy = float(correct.sum()) / len(usable) if len(usable) else 0.0
    return EvalReport(accuracy, per_class, len(usable), skipped, variant, T, T_s, Q,
                      predictions=preds, mean_probs=mean_probs)
