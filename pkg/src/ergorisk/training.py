"""Smoothed cross-entropy, AdamW, the OneCycle schedule and the train/validate loop."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import checkpoint
from .autodiff import functional as F
from .autodiff.rng import Rng
from .autodiff.tensor import Tensor, as_tensor, no_grad
from .errors import ConfigError, DataError, DomainError, NumericFault
from .metrics import EvalReport, evaluate_predictions
from .model import ViskGatConfig, ViskGatParams, forward, init_params, save_model
from .pose_io import filter_visibility, parse_landmark_file

LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    peak_lr: float = 3e-4
    weight_decay: float = 1e-5
    warmup_fraction: float = 0.10
    div_factor: float = 1000.0
    label_smoothing: float = 0.1
    clip_norm: float = 1.0
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.70, 0.10, 0.20)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    # stop once eval-mode training accuracy reaches this value (None: run all epochs)
    target_train_acc: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for name in ("epochs", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("peak_lr", "div_factor", "clip_norm", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        fr = self.split_fractions
        if len(fr) != 3 or min(fr) < 0 or fr[0] <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split_fractions must be three nonnegative values summing to 1, got {fr}")
        if not all(0.0 <= b < 1.0 for b in self.betas) or len(self.betas) != 2:
            raise ConfigError("betas must be two values in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def cross_entropy_smoothed(logits, labels, smoothing: float = 0.0) -> Tensor:
    """Batch mean of ``-sum_c q_c log p_c``, ``q`` = one-hot mixed with uniform at rate ``smoothing``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, k = logits.shape
    if labels.size != b:
        raise DomainError(f"{labels.size} labels for a batch of {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels must lie in 0..{k - 1}")
    q = np.full((b, k), smoothing / k, dtype=logits.dtype)
    q[np.arange(b), labels] += 1.0 - smoothing
    per_sample = F.neg(F.sum(F.mul(F.log_softmax(logits, axis=-1), q), axis=-1))
    return F.mean(per_sample)


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, weight_decay: float = 0.0,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place AdamW: decoupled decay ``theta *= 1 - lr*wd`` then the bias-corrected Adam step."""
    if set(grads) != set(params):
        raise ConfigError("gradient names do not match parameter names")
    if state.m and set(state.m) != set(params):
        raise ConfigError("optimizer state does not match parameter names")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ConfigError(f"{name}: gradient shape {g.shape} vs parameter {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        theta = p.data.astype(np.float64) * (1.0 - lr * weight_decay)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = theta.astype(p.data.dtype)


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine ramp from ``peak/div`` to ``peak`` over the warm-up, then cosine decay back to ``peak/div``."""
    if total_steps <= 0:
        raise DomainError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise DomainError(f"step {step} outside [0, {total_steps}]")
    lo, peak = cfg.peak_lr / cfg.div_factor, cfg.peak_lr
    warm = math.ceil(cfg.warmup_fraction * total_steps)
    if step <= warm and warm > 0:
        return lo + (peak - lo) * (1.0 - math.cos(math.pi * step / warm)) / 2.0
    rest = total_steps - warm
    return lo + (peak - lo) * (1.0 + math.cos(math.pi * (step - warm) / rest)) / 2.0


@dataclass
class SplitIndices:
    train: list
    val: list
    test: list

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}

    def get(self, name: str) -> list:
        if name not in ("train", "val", "test", "all"):
            raise ValueError(f"unknown split {name!r}")
        if name == "all":
            return sorted(self.train + self.val + self.test)
        return getattr(self, name)


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(labels, fractions=(0.70, 0.10, 0.20), seed: int = 0) -> SplitIndices:
    """Per-class seeded shuffle, cut by largest-remainder rounding of ``fractions``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    rng = Rng(seed).child(7)
    parts: list[list[int]] = [[], [], []]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.child(int(c)).permutation(idx.size)]
        start = 0
        for j, cnt in enumerate(_largest_remainder(idx.size, fractions)):
            parts[j].extend(int(i) for i in idx[start:start + cnt])
            start += cnt
    return SplitIndices(*(sorted(p) for p in parts))


@dataclass
class Dataset:
    ids: list
    images: np.ndarray  # [n, 3, S, S] float32
    poses: np.ndarray  # [n, 33, 2] float32, absent landmarks zero
    labels: np.ndarray  # [n] class index 0..7

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset([self.ids[i] for i in idx], self.images[idx], self.poses[idx], self.labels[idx])


def load_dataset(path, vis_threshold: float = 0.5) -> Dataset:
    """Read a directory written by :func:`ergorisk.synth.gen_dataset`."""
    root = Path(path)
    try:
        lines = (root / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{root}: cannot read manifest.jsonl ({exc.strerror})") from exc
    rows = [json.loads(s) for s in lines if s.strip()]
    ids = [r["id"] for r in rows]
    labels = np.array([r["class"] - 1 for r in rows], dtype=np.int64)
    tensors = checkpoint.load(root / "images.ergk")
    skeletons = {s.id: s for s in parse_landmark_file(root / "skeletons.jsonl")}
    missing = [i for i in ids if i not in tensors or i not in skeletons]
    if missing:
        raise DataError(f"{root}: {len(missing)} manifest ids lack an image or skeleton, first {missing[0]!r}")
    if not ids:
        return Dataset([], np.zeros((0, 3, 1, 1), np.float32), np.zeros((0, 33, 2), np.float32), labels)
    images = np.stack([tensors[i] for i in ids]).astype(np.float32)
    poses = np.array([filter_visibility(skeletons[i], vis_threshold).coords(0.0) for i in ids], dtype=np.float32)
    return Dataset(ids, images, poses, labels)


@dataclass
class TrainResult:
    params: ViskGatParams
    best_params: dict
    log: list
    best_epoch: int
    best_score: float
    split: SplitIndices

    def log_csv(self) -> str:
        return format_log(self.log)


def _fmt(x) -> str:
    return str(x) if isinstance(x, int) else repr(float(x))


def format_log(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in LOG_COLUMNS])
    return buf.getvalue()


def predict(params, cfg: ViskGatConfig, data: Dataset, batch_size: int = 32) -> np.ndarray:
    """Eval-mode class probabilities, [n, num_classes]."""
    out = []
    with no_grad():
        for s in range(0, len(data), batch_size):
            res = forward(data.images[s:s + batch_size], data.poses[s:s + batch_size], params, cfg, "eval")
            out.append(res.probs.data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def _loss_acc(params, cfg, data: Dataset, smoothing: float) -> tuple[float, float]:
    if not len(data):
        return float("nan"), float("nan")
    probs = predict(params, cfg, data)
    p = np.clip(probs, 1e-12, 1.0)
    k = probs.shape[1]
    q = np.full_like(p, smoothing / k)
    q[np.arange(len(data)), data.labels] += 1.0 - smoothing
    loss = float(np.mean(-np.sum(q * np.log(p), axis=1)))
    acc = float(np.mean(probs.argmax(axis=1) == data.labels))
    return loss, acc


def train(model_cfg: ViskGatConfig, cfg: TrainConfig, data: Dataset, split: Optional[SplitIndices] = None,
          params: Optional[ViskGatParams] = None, out=None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Seeded training run.

    Each epoch shuffles the training indices, then for each batch runs
    forward, smoothed CE, backward, global-norm clipping and AdamW at the
    OneCycle rate. ``train_loss`` in the log is the mean batch loss
    (dropout active); ``train_acc``, ``val_loss`` and ``val_acc`` come from
    eval-mode passes after the epoch. The best-validation parameters (train
    accuracy when there is no validation split) are kept and, when ``out``
    is given, saved with a config sidecar.
    """
    if not len(data):
        raise DataError("training dataset is empty")
    root = Rng(cfg.seed)
    split = split or stratified_split(data.labels, cfg.split_fractions, cfg.seed)
    train_set = data.subset(split.train)
    val_set = data.subset(split.val)
    if not len(train_set):
        raise DataError("training split is empty")
    params = params if params is not None else init_params(model_cfg, root.child(0))
    names = sorted(params)
    state = AdamWState()
    per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = cfg.epochs * per_epoch
    log: list[dict] = []
    best = (-1.0, -1, None)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = root.child(1, epoch).permutation(len(train_set))
        losses = []
        lr = onecycle_lr(step, total, cfg)
        for b in range(per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = onecycle_lr(step, total, cfg)
            params.zero_grad()
            res = forward(train_set.images[idx], train_set.poses[idx], params, model_cfg, "train",
                          root.child(2, step))
            loss = cross_entropy_smoothed(res.logits, train_set.labels[idx], cfg.label_smoothing)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericFault(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            grads = [params[n].grad if params[n].grad is not None else np.zeros_like(params[n].data)
                     for n in names]
            grads, _ = F.clip_global_norm(grads, cfg.clip_norm)
            adamw_step(params, dict(zip(names, grads)), state, lr, cfg.weight_decay, cfg.betas, cfg.eps)
            losses.append(value)
            step += 1
        _, train_acc = _loss_acc(params, model_cfg, train_set, cfg.label_smoothing)
        val_loss, val_acc = _loss_acc(params, model_cfg, val_set, cfg.label_smoothing)
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "train_acc": train_acc,
               "val_loss": val_loss, "val_acc": val_acc}
        log.append(row)
        if progress:
            progress(row)
        score = val_acc if len(val_set) else train_acc
        if score > best[0]:
            best = (score, epoch, {k: t.data.copy() for k, t in params.items()})
        if cfg.target_train_acc is not None and train_acc >= cfg.target_train_acc:
            break
    result = TrainResult(params, best[2], log, best[1], best[0], split)
    if out is not None:
        best_params = ViskGatParams.from_arrays(result.best_params)
        save_model(out, best_params, model_cfg, {
            "train": cfg.to_json(), "best_epoch": result.best_epoch, "best_score": result.best_score,
            "split": split.to_json(),
        })
    return result


def evaluate(params, cfg: ViskGatConfig, data: Dataset, indices: Optional[Sequence[int]] = None,
             batch_size: int = 32) -> EvalReport:
    """Eval-mode forward over ``data`` (or ``indices`` of it), then the metrics report."""
    sub = data if indices is None else data.subset(indices)
    probs = predict(params, cfg, sub, batch_size)
    return evaluate_predictions(sub.labels, probs, cfg.num_classes)
