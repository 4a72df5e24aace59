"""Command-line pipeline: preprocess, featurize, clips, synth, train, evaluate, predict.

Every command writes a ``<output>.prov.json`` sidecar (or ``provenance.json``
inside an output directory) holding the resolved settings, their hash, the
tool version and hashes of the inputs, which is enough to re-run it.

Failures print ``{"error": {"kind": ..., "message": ...}}`` on stderr and
exit with 2 (usage or input problems) or 3 (numerical failures).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cadenet import CadeNet, ModelConfig, load_checkpoint, save_checkpoint
from .errors import ConfigInvalid, InvalidInput, LVError
from .longview import (DEFAULT_WINDOW, FeatureVolume, build_feature_volume, channel_features,
                       clips_from_volume, load_clip_set, load_volume, save_clip_set, save_volume)
from .preprocess import EEG_FILTER, MEG_FILTER, FilterSpec, MontageSpec, preprocess
from .signal_io import read_annotations_csv, read_any, read_native, write_native
from .synth import SynthSpec, synth_dataset
from .trainer import TrainConfig, evaluate, history_jsonl, train

log = logging.getLogger("lvcadenet")

MODALITIES = {
    "eeg": (EEG_FILTER, 200.0),
    "meg": (MEG_FILTER, 250.0),
}


@dataclass
class PipelineConfig:
    modality: str = "eeg"
    filter: dict | None = None  # overrides of the modality's FilterSpec
    target_rate: float | None = None
    montage: str | None = None  # path to a montage JSON file
    per_channel_zscore: bool = False
    window: int = DEFAULT_WINDOW
    absolute: bool = False
    clip_len: int = 200
    seed: int = 0
    data: dict = field(default_factory=dict)  # {"train": path, "val": path, "test": path}
    synth: dict | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigInvalid(f"unknown modality {self.modality!r}; choose eeg or meg")

    def filter_spec(self) -> FilterSpec:
        base = MODALITIES[self.modality][0]
        return FilterSpec(**{**asdict(base), **(self.filter or {})})

    def rate(self) -> float:
        return float(self.target_rate or MODALITIES[self.modality][1])

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({"seed": self.seed, **self.train}).check()

    def model_config(self, **inferred) -> ModelConfig:
        cfg = ModelConfig.from_dict({"seed": self.seed, **inferred, **self.model})
        return cfg.check()

    def synth_spec(self) -> SynthSpec:
        try:
            return SynthSpec(**(self.synth or {})).check()
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"synthetic data settings: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown pipeline config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        d = {}
        if path is not None:
            try:
                d = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"{path}: {exc}") from None
        for item in overrides:
            apply_override(d, item)
        return cls.from_dict(d)


def apply_override(d: dict, item: str):
    """Apply ``a.b=value`` to a nested dict; the value is parsed as JSON when possible."""
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigInvalid(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    *parents, last = key.split(".")
    node = d
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigInvalid(f"override {item!r} descends into a non-object")
    node[last] = value


# ------------------------------------------------------------------ provenance

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def settings_hash(settings: dict) -> str:
    text = json.dumps(settings, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def write_provenance(target, command: str, argv, settings: dict, inputs=()):
    target = Path(target)
    side = target / "provenance.json" if target.is_dir() else target.with_name(target.name + ".prov.json")
    record = {
        "command": command,
        "argv": list(argv),
        "tool": "lvcadenet",
        "version": __version__,
        "settings": settings,
        "settings_hash": settings_hash(settings),
        "inputs": {str(p): file_hash(p) for p in inputs},
    }
    side.write_text(json.dumps(record, indent=1, sort_keys=True, default=str) + "\n")
    return side


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands

def cmd_preprocess(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    if args.modality:
        cfg.modality = args.modality
        cfg.__post_init__()
    if args.montage:
        cfg.montage = args.montage
    rec = read_any(args.inp)
    if args.annotations:
        rec = rec.replace(annotations=read_annotations_csv(args.annotations))
    montage = MontageSpec.from_json(Path(cfg.montage).read_text()) if cfg.montage else None
    spec = cfg.filter_spec()
    out = preprocess(rec, spec, cfg.rate(), montage, per_channel=cfg.per_channel_zscore)
    write_native(out, args.out)
    settings = {"modality": cfg.modality, "filter": asdict(spec), "target_rate": cfg.rate(),
                "montage": montage.to_json() if montage else None,
                "per_channel_zscore": cfg.per_channel_zscore}
    inputs = [args.inp] + [p for p in (args.annotations, cfg.montage) if p]
    write_provenance(args.out, "preprocess", argv, settings, inputs)
    log.info("wrote %s: %d channels x %d samples at %g Hz", args.out, out.n_channels,
             out.n_samples, out.rate)


def _channel_job(job):
    x, window, absolute = job
    return channel_features(x, window, absolute)


def featurize(rec, window, absolute=False, jobs=1) -> FeatureVolume:
    if jobs <= 1 or rec.n_channels == 1:
        return build_feature_volume(rec, window, absolute)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_channel_job, [(x, window, absolute) for x in rec.data]))
    return FeatureVolume(tensor=np.stack([r[0] for r in results]), rate=rec.rate,
                         labels=tuple(rec.labels), wave_counts=tuple(r[1] for r in results),
                         annotations=tuple(rec.annotations))


def cmd_featurize(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    window = args.window if args.window is not None else cfg.window
    if window < 1:
        raise ConfigInvalid("window must be at least one wave")
    rec = read_native(args.inp)
    vol = featurize(rec, window, cfg.absolute, args.jobs)
    save_volume(vol, args.out)
    for label, n in zip(vol.labels, vol.wave_counts):
        log.info("channel %s: %d complete waves", label, n)
    write_provenance(args.out, "featurize", argv,
                     {"window": window, "absolute": cfg.absolute}, [args.inp])


def cmd_clips(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    length = args.clip_len or cfg.clip_len
    vol = load_volume(args.inp)
    ann = read_annotations_csv(args.annotations) if args.annotations else None
    X, y, centers = clips_from_volume(vol, length, ann)
    save_clip_set(args.out, X, y, centers)
    write_provenance(args.out, "clips", argv, {"clip_len": length},
                     [args.inp] + ([args.annotations] if args.annotations else []))
    log.info("wrote %d clips to %s", len(y), args.out)


def cmd_synth(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    spec = cfg.synth_spec()
    data = synth_dataset(spec, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        split = getattr(data, name)
        save_clip_set(out / f"{name}.lvc", split.X, split.y)
    write_provenance(out, "synth", argv, {"synth": asdict(spec), "seed": cfg.seed})


def _load_split(cfg: PipelineConfig, base: Path, name: str, required=True):
    path = cfg.data.get(name)
    if path is None:
        if required:
            raise ConfigInvalid(f"config has no data.{name} clip set")
        return None
    path = Path(path)
    if not path.is_absolute():
        path = base / path
    X, y, _ = load_clip_set(path)
    return X, y, path


def cmd_train(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    base = Path(args.config).parent if args.config else Path.cwd()
    Xtr, ytr, ptr = _load_split(cfg, base, "train")
    Xv, yv, pv = _load_split(cfg, base, "val")
    test = _load_split(cfg, base, "test", required=False)
    mcfg = cfg.model_config(n_channels=Xtr.shape[1], clip_len=Xtr.shape[2],
                            in_features=Xtr.shape[3])
    tcfg = cfg.train_config()
    model = CadeNet(mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, (Xtr, ytr), (Xv, yv), tcfg)
    model.load_state(result.best_state)
    (out / "history.jsonl").write_text(history_jsonl(result.history))
    save_checkpoint(model, out / "checkpoint", step=result.best_epoch,
                    extra={"best_val_bacc": result.best_val_bacc})
    summary = {"best_epoch": result.best_epoch, "best_val_bacc": result.best_val_bacc,
               "epochs_run": result.epochs_run,
               "train_acc": evaluate(model, Xtr, ytr).acc}
    if test is not None:
        summary["test"] = evaluate(model, test[0], test[1]).to_dict()
        dump_json(out / "metrics.json", summary["test"])
    dump_json(out / "summary.json", summary)
    inputs = [ptr, pv] + ([test[2]] if test else []) + ([args.config] if args.config else [])
    write_provenance(out, "train", argv, {"model": asdict(mcfg), "train": asdict(tcfg)}, inputs)
    log.info("best epoch %d, val bacc %.4f", result.best_epoch, result.best_val_bacc)


def _clip_input(args, cfg):
    if args.clips:
        return load_clip_set(args.clips) + (Path(args.clips),)
    X, y, path = _load_split(cfg, Path(args.config).parent if args.config else Path.cwd(), "test")
    return X, y, np.full(len(y), -1), path


def cmd_evaluate(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    model, _ = load_checkpoint(args.checkpoint)
    X, y, _, path = _clip_input(args, cfg)
    report = evaluate(model, X, y)
    dump_json(args.out, report.to_dict())
    write_provenance(args.out, "evaluate", argv, {"checkpoint": str(args.checkpoint)},
                     [path, Path(args.checkpoint) / "weights.bin"])


def cmd_predict(args, argv):
    cfg = PipelineConfig.load(args.config, args.set)
    model, _ = load_checkpoint(args.checkpoint)
    X, _, centers, path = _clip_input(args, cfg)
    P = model.predict_proba(X)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_index", "center", "predicted_class"] + [f"prob_{k}" for k in range(P.shape[1])])
        for i, row in enumerate(P):
            w.writerow([i, int(centers[i]), int(row.argmax())] + [repr(float(p)) for p in row])
    write_provenance(args.out, "predict", argv, {"checkpoint": str(args.checkpoint)},
                     [path, Path(args.checkpoint) / "weights.bin"])


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lvcadenet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. train.max_epochs=10")
        p.add_argument("--jobs", type=int, default=1, help="maximum worker processes")
        return p

    p = command("preprocess", cmd_preprocess, "filter, resample and z-score a recording")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--modality", choices=sorted(MODALITIES))
    p.add_argument("--montage", help="bipolar montage JSON")
    p.add_argument("--annotations", help="CSV of sample_index,class_id")

    p = command("featurize", cmd_featurize, "build the long-view feature volume")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int)

    p = command("clips", cmd_clips, "cut annotated clips from a feature volume")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotations")
    p.add_argument("--clip-len", type=int)

    p = command("synth", cmd_synth, "generate synthetic train/val/test clip sets")
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train a model and keep the best checkpoint")
    p.add_argument("--out", required=True)

    for name, func in (("evaluate", cmd_evaluate), ("predict", cmd_predict)):
        p = command(name, func, f"{name} a checkpoint on a clip set")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--clips", help="clip set (defaults to data.test of the config)")
        p.add_argument("--out", required=True)
    return ap


def fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": {"kind": kind, "message": message}}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        return fail("ConfigInvalid", "--jobs must be at least 1", 2)
    try:
        args.func(args, argv)
    except LVError as exc:
        return fail(exc.kind, str(exc), exc.exit_code)
    except FileNotFoundError as exc:
        return fail("FileNotFound", f"{exc.filename}: no such file", 2)
    except IsADirectoryError as exc:
        return fail("InvalidInput", str(exc), 2)
    except (KeyError, ValueError) as exc:
        return fail(InvalidInput.kind, f"{type(exc).__name__}: {exc}", 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
