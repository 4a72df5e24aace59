"""Desk-scale experiments shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .cadenet import CadeNet, ModelConfig
from .synth import SynthSpec, raw_only, synth_dataset
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

# Width 20 keeps a CPU epoch over 200 clips at a few seconds.
DESK_MODEL = ModelConfig(widths=(20, 20, 20), heads=5)


@dataclass
class OverfitResult:
    train_acc: float
    best_epoch: int
    epochs_run: int
    seconds: float
    history: list = field(default_factory=list)


def overfit(seed: int = 0, model: ModelConfig = DESK_MODEL, config: TrainConfig | None = None,
            spec: SynthSpec | None = None) -> OverfitResult:
    """Train on the separable two-class set and report training accuracy of the kept checkpoint."""
    spec = spec or SynthSpec()
    config = config or TrainConfig(seed=seed, max_epochs=50)
    data = synth_dataset(spec, seed)
    net = CadeNet(ModelConfig(**{**asdict(model), "seed": seed}))
    t0 = time.perf_counter()
    history = []

    def watch(rec):
        rec["train_acc"] = evaluate(net, data.train.X, data.train.y).acc
        history.append(rec)
    result = train(net, (data.train.X, data.train.y), (data.val.X, data.val.y), config, watch)
    net.load_state(result.best_state)
    acc = evaluate(net, data.train.X, data.train.y).acc
    return OverfitResult(acc, result.best_epoch, result.epochs_run, time.perf_counter() - t0, history)


def longview_vs_raw(seeds=range(5), model: ModelConfig = DESK_MODEL,
                    config: TrainConfig | None = None, spec: SynthSpec | None = None) -> dict:
    """Test BAcc with the seven long-view features versus the raw signal alone.

    Uses the context-dependent regime, where the clip window alone cannot
    separate the classes.  Both arms share data, seed and architecture.
    """
    spec = spec or SynthSpec(context=True)
    rows = []
    for seed in seeds:
        data = synth_dataset(spec, seed)
        row = {"seed": int(seed)}
        for arm, fn in (("longview", lambda X: X), ("raw", raw_only)):
            cfg = config or TrainConfig(seed=seed, max_epochs=50)
            net = CadeNet(ModelConfig(**{**asdict(model), "seed": seed}))
            result = train(net, (fn(data.train.X), data.train.y), (fn(data.val.X), data.val.y), cfg)
            net.load_state(result.best_state)
            row[arm] = evaluate(net, fn(data.test.X), data.test.y).bacc
            row[arm + "_epochs"] = result.epochs_run
            log.info("seed %s %s test bacc %.4f", seed, arm, row[arm])
        rows.append(row)
    lv = float(np.mean([r["longview"] for r in rows]))
    raw = float(np.mean([r["raw"] for r in rows]))
    return {"runs": rows, "longview": lv, "raw": raw, "margin": lv - raw}
