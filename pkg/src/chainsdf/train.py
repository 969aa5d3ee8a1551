"""Training loop: minimizes batch RMSE over a distance dataset.

Deterministic given (dataset, arch, config): initialization, shuffling and
batching all flow from the config seed; the best-validation parameters are
retained. Internally everything is meters; logs report millimeters too.
"""
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .field import FieldParams, backward_batch, forward_batch, init_params

OPTIMIZERS = ("adaptive-moment", "sgd-momentum")
SCHEDULES = ("constant", "cosine")


class TrainingError(RuntimeError):
    pass


def rmse_loss(pred, target):
    """sqrt(mean over batch and links of squared error); units meters."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    with np.errstate(over="ignore"):  # divergence shows up as inf, handled by callers
        return float(np.sqrt(np.mean((pred - target) ** 2)))


def rmse_loss_grad(pred, target):
    """(loss, dloss/dpred)."""
    diff = pred - target
    with np.errstate(over="ignore"):
        mse = np.mean(diff**2)
    loss = np.sqrt(mse)
    if loss == 0.0:
        return 0.0, np.zeros_like(pred)
    return float(loss), diff / (diff.size * loss)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine"
    optimizer: str = "adaptive-moment"
    weight_decay: float = 1e-6
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables periodic snapshots
    validation_fraction: float = 0.1
    patience: int = 10  # early stopping on validation plateau

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must be in [0, 0.5]")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {SCHEDULES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


class _Adam:
    def __init__(self, count, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(count)
        self.v = np.zeros(count)
        self.t = 0
        self.lr = lr
        self.wd = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, flat, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        flat -= lr * (mh / (np.sqrt(vh) + self.eps) + self.wd * flat)


class _SgdMomentum:
    def __init__(self, count, lr, weight_decay, momentum=0.9):
        self.vel = np.zeros(count)
        self.wd = weight_decay
        self.momentum = momentum

    def step(self, flat, grad, lr):
        self.vel = self.momentum * self.vel + grad + self.wd * flat
        flat -= lr * self.vel


def _make_optimizer(cfg, count):
    if cfg.optimizer == "adaptive-moment":
        return _Adam(count, cfg.learning_rate, cfg.weight_decay)
    return _SgdMomentum(count, cfg.learning_rate, cfg.weight_decay)


def _lr_at(cfg, epoch):
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / max(cfg.epochs, 1)))


@dataclass
class TrainResult:
    params: FieldParams  # best-validation parameters
    arch: object
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_rmse: float = np.inf
    diverged: bool = False
    val_indices: np.ndarray = None


def _eval_rmse_full(params, arch, Q, P, D, chunk=8192):
    if len(Q) == 0:
        return float("nan")
    se = 0.0
    for s in range(0, len(Q), chunk):
        Y, _ = forward_batch(params, arch, Q[s : s + chunk], P[s : s + chunk])
        se += float(np.sum((Y - D[s : s + chunk]) ** 2))
    return float(np.sqrt(se / (len(Q) * arch.n)))


def train(dataset, arch, cfg, log_path=None, batch_callback=None):
    """Train ``arch`` on ``dataset``; returns a TrainResult.

    ``batch_callback(epoch, step, indices)`` observes every gradient batch
    (instrumentation hook; validation rows never appear in it).
    """
    cfg.validate()
    if dataset.q.shape[1] != arch.m or dataset.d.shape[1] != arch.n:
        raise TrainingError(
            f"dataset is (m={dataset.q.shape[1]}, n={dataset.d.shape[1]}) but the "
            f"architecture expects (m={arch.m}, n={arch.n})"
        )
    N = len(dataset)
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    perm = rng.permutation(N)
    n_val = int(np.floor(N * cfg.validation_fraction))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if len(train_idx) == 0:
        raise TrainingError("no training rows left after the validation split")

    Q, P, D = dataset.q, dataset.p, dataset.d
    params = init_params(arch, cfg.seed)
    opt = _make_optimizer(cfg, params.count)

    result = TrainResult(params=params.copy(), arch=arch, val_indices=val_idx)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    stall = 0
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = _lr_at(cfg, epoch)
            order = rng.permutation(len(train_idx))
            batch_losses = []
            for step, s in enumerate(range(0, len(order), cfg.batch_size)):
                rows = train_idx[order[s : s + cfg.batch_size]]
                if batch_callback is not None:
                    batch_callback(epoch, step, rows)
                Y, cache = forward_batch(params, arch, Q[rows], P[rows])
                loss, up = rmse_loss_grad(Y, D[rows])
                if not np.isfinite(loss):
                    result.diverged = True
                    _write_log(log_fh, {"event": "diverged", "epoch": epoch, "step": step})
                    return result
                batch_losses.append(loss)
                grad, _ = backward_batch(params, arch, cache, up)
                opt.step(params.flat, grad, lr)
            train_rmse = float(np.mean(batch_losses))
            val_rmse = _eval_rmse_full(params, arch, Q[val_idx], P[val_idx], D[val_idx])
            score = val_rmse if n_val else train_rmse
            record = {
                "epoch": epoch,
                "train_rmse": train_rmse,
                "val_rmse": val_rmse,
                "train_rmse_mm": train_rmse * 1000.0,
                "val_rmse_mm": val_rmse * 1000.0 if np.isfinite(val_rmse) else None,
                "lr": float(lr),
                "wall_time": time.perf_counter() - t0,
            }
            result.log.append(record)
            _write_log(log_fh, record)
            if not np.isfinite(score):
                result.diverged = True
                _write_log(log_fh, {"event": "diverged", "epoch": epoch})
                return result
            if score < result.best_val_rmse:
                result.best_val_rmse = score
                result.best_epoch = epoch
                result.params = params.copy()
                stall = 0
            else:
                stall += 1
                if cfg.patience and stall > cfg.patience:
                    _write_log(log_fh, {"event": "early-stop", "epoch": epoch})
                    break
    finally:
        if log_fh:
            log_fh.close()
    return result


def _write_log(fh, record):
    if fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def train_config_dict(cfg):
    return asdict(cfg)
