"""Training protocol: AdamW, step decay, early stopping and checkpoint selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .cadenet import CadeNet, loss_from_logits, smoothed_targets
from .errors import ConfigInvalid, EmptyDataset, NonFiniteLoss
from .metrics import MetricsReport

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    decay_factor: float = 0.5
    decay_every: int = 5
    patience: int = 5
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 0
    weight_decay: float = 0.01
    label_smoothing: float = 0.1
    smoothing_mode: str = "uniform"
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    track_train_loss: bool = False  # also evaluate the training loss with dropout off

    def check(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigInvalid("learning rate must be >= 0; batch size, epochs and patience >= 1")
        if self.decay_every < 1 or not 0 < self.decay_factor <= 1:
            raise ConfigInvalid("decay interval must be >= 1 and factor in (0, 1]")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch`` under the step-decay schedule."""
    return config.lr * config.decay_factor ** (epoch // config.decay_every)


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data * (1 - self.lr * self.wd) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_bacc: float
    history: list = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def predict(model: CadeNet, X, batch_size=64) -> np.ndarray:
    return model.predict_proba(X, batch_size).argmax(axis=1)


def evaluate(model: CadeNet, X, y, batch_size=64) -> MetricsReport:
    if len(y) == 0:
        raise EmptyDataset("nothing to evaluate")
    pred = predict(model, X, batch_size)
    return MetricsReport.from_predictions(y, pred, model.config.n_classes)


def eval_loss(model: CadeNet, X, y, config: TrainConfig, batch_size=64) -> float:
    P = model.predict_proba(X, batch_size)
    T = smoothed_targets(y, P.shape[1], config.label_smoothing, config.smoothing_mode)
    return float(-(T * np.log(np.maximum(P, 1e-300))).sum() / len(y))


def _copy_state(model):
    return {k: np.array(v, copy=True) for k, v in model.state().items()}


def train(model: CadeNet, train_data, val_data, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Fit ``model`` and return the checkpoint with the best validation BAcc.

    ``train_data`` and ``val_data`` are ``(X, y)`` pairs.  Training stops after
    ``patience`` epochs without improvement or at ``max_epochs``.
    """
    config.check()
    X, y = train_data
    Xv, yv = val_data
    if len(y) == 0 or len(yv) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.parameters(), config.lr, config.betas, config.adam_eps, config.weight_decay)
    history = []
    best_state, best_epoch, best_bacc = _copy_state(model), -1, -np.inf
    stale = 0
    for epoch in range(config.max_epochs):
        opt.lr = lr_at(config, epoch)
        model.train()
        order = rng.permutation(len(y))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            model.zero_grad()
            loss = loss_from_logits(model(X[idx]), y[idx], config.label_smoothing,
                                    config.smoothing_mode)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} in epoch {epoch}", history)
            loss.backward()
            opt.step()
            losses.append(value * len(idx))
        report = evaluate(model, Xv, yv)
        record = {
            "epoch": epoch + 1,
            "lr": opt.lr,
            "train_loss": sum(losses) / len(y),
            "val_bacc": report.bacc,
            "val_acc": report.acc,
        }
        if config.track_train_loss:
            record["train_eval_loss"] = eval_loss(model, X, y, config)
        history.append(record)
        if report.bacc > best_bacc:
            best_bacc, best_epoch, best_state = report.bacc, epoch + 1, _copy_state(model)
            stale = 0
        else:
            stale += 1
        log.info("epoch %d lr %.3g loss %.4f val bacc %.4f", epoch + 1, opt.lr,
                 record["train_loss"], report.bacc)
        if on_epoch is not None:
            on_epoch(record)
        if stale >= config.patience:
            break
    return TrainResult(best_state, best_epoch, best_bacc, history)


def repeat_protocol(model_factory, pool, test, config: TrainConfig, runs: int = 5,
                    seeds=None, val_fraction: float = 0.2) -> dict:
    """Train ``runs`` times on fresh validation resamples of ``pool``.

    ``model_factory(seed)`` builds a fresh model; ``pool`` and ``test`` are
    ``(X, y)`` pairs and the test set is shared by every run.  Returns the
    per-run metric rows and their mean and sample standard deviation.
    """
    if runs < 2:
        raise ConfigInvalid("the protocol needs at least two runs")
    seeds = list(range(runs)) if seeds is None else list(seeds)
    if len(seeds) != runs:
        raise ConfigInvalid("one seed per run is required")
    X, y = pool
    rows = []
    for run, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        # stratified validation resample
        val_idx = np.concatenate([
            rng.permutation(np.flatnonzero(y == c))[:max(1, int(round(val_fraction * np.sum(y == c))))]
            for c in np.unique(y)
        ])
        mask = np.zeros(len(y), bool)
        mask[val_idx] = True
        model = model_factory(seed)
        cfg = TrainConfig(**{**asdict(config), "seed": seed})
        result = train(model, (X[~mask], y[~mask]), (X[mask], y[mask]), cfg)
        model.load_state(result.best_state)
        report = evaluate(model, *test)
        rows.append({"run": run, "seed": seed, "best_epoch": result.best_epoch,
                     **{k: report.to_dict()[k] for k in ("bacc", "ckap", "wf1", "acc")}})
    summary = {}
    for key in ("bacc", "ckap", "wf1", "acc"):
        vals = np.array([r[key] for r in rows])
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1))}
    return {"runs": rows, "summary": summary}


def history_jsonl(history) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history)
