"""Acceptance criteria.  Each test prints one PASS/FAIL line and asserts the criterion.

The lines also appear in the "acceptance criteria" section of the pytest
terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter1d

import oracles
from conftest import ACCEPTANCE_LINES
from lvcadenet import autograd as ag
from lvcadenet.autograd import Tensor
from lvcadenet.cadenet import (PRESETS, CadeNet, ConvFeedForward, CrossConvAttention, ModelConfig,
                               SelfConvAttention, loss, loss_from_logits, pixel_unshuffle)
from lvcadenet.cli import main as cli_main
from lvcadenet.experiments import longview_vs_raw, overfit
from lvcadenet.longview import (WaveSegment, channel_features, decompose_waves, detect_extrema,
                                wave_properties)
from lvcadenet.metrics import MetricsReport
from lvcadenet.preprocess import EEG_FILTER, bandpass, notch, resample
from lvcadenet.signal_io import make_recording, write_edf


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# ---------------------------------------------------------------- 1

def test_1_wave_oracle():
    rng = np.random.default_rng(2024)
    signals = [gaussian_filter1d(rng.standard_normal(int(rng.integers(200, 2001))), rng.uniform(1, 4))
               for _ in range(1000)]
    t0 = time.perf_counter()
    got = []
    for x in signals:
        waves = decompose_waves(x, detect_extrema(x))
        feats, _ = channel_features(x)
        got.append(([(w.t_l, w.t_o, w.t_r) for w in waves], feats))
    elapsed = time.perf_counter() - t0
    worst, waves_ok = 0.0, True
    for x, (ws, feats) in zip(signals, got):
        waves_ok &= ws == oracles.waves(x)
        worst = max(worst, float(np.abs(feats - oracles.features(x)).max()))
    ok = waves_ok and worst <= 1e-9 and elapsed < 60
    report(1, ok, f"1000 signals, waves identical={waves_ok}, max feature error {worst:.2e} "
                  f"(<= 1e-9), implementation {elapsed:.1f} s (< 60 s)")


# ---------------------------------------------------------------- 2

def test_2_hand_worked_wave():
    x = np.array([0, 2, 4, 6, 8, 7, 6, 5, 4, 3, 2], dtype=float)
    w = wave_properties(x, WaveSegment(0, 4, 10))
    got = np.array([w.a_l, w.a_r, w.sp_l, w.sp_r, w.hsp_l, w.hsp_r, w.ma])
    err = float(np.abs(got - [8, -6, 2, -1, 2, -1, 2.4]).max())
    t = np.arange(41, dtype=float)
    sn = max(abs(wave_properties(a * t + b, WaveSegment(0, 20, 40)).sn)
             for a, b in ((3.0, -1.0), (-0.5, 7.0), (1e-3, 0.0)))
    report(2, err <= 1e-12 and sn <= 1e-12,
           f"(0,4,10) fixture max error {err:.1e}, |sn| on affine segments {sn:.1e} (<= 1e-12)")


# ---------------------------------------------------------------- 3

def test_3_gradient_check():
    t0 = time.perf_counter()
    cfg = ModelConfig(n_channels=4, clip_len=16, widths=(10, 10, 10),
                      factors=((2, 2), (1, 2), (1, 1)), decoder_blocks=1, dropout=0.0)
    model = CadeNet(cfg)
    rng = np.random.default_rng(0)
    X, y = rng.standard_normal((2, 4, 16, 7)), np.array([0, 1])

    def value():
        return float(loss_from_logits(model(X), y).data)
    model.zero_grad()
    loss_from_logits(model(X), y).backward()
    h, worst, worst_name = 1e-5, 0.0, ""
    for name, p in model.named_parameters():
        # every entry of small groups, 64 random entries of large ones
        idx = rng.permutation(p.data.size)[:64]
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = p.data.flat[i]
            p.data.flat[i] = old + h
            up = value()
            p.data.flat[i] = old - h
            down = value()
            p.data.flat[i] = old
            num[j] = (up - down) / (2 * h)
        ana = p.grad.flat[idx]
        rel = np.abs(num - ana).max() / max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        if rel > worst:
            worst, worst_name = rel, name
    elapsed = time.perf_counter() - t0
    report(3, worst < 1e-4 and elapsed < 300,
           f"max relative error {worst:.2e} in {worst_name} (< 1e-4), {elapsed:.0f} s (< 300 s)")


# ---------------------------------------------------------------- 4

def test_4_overfit():
    res = overfit(seed=0)
    ok = res.train_acc >= 0.95 and res.epochs_run <= 50 and res.seconds < 300
    report(4, ok, f"train accuracy {res.train_acc:.3f} (>= 0.95) at epoch {res.best_epoch}, "
                  f"{res.epochs_run} epochs, {res.seconds:.0f} s (< 300 s)")


# ---------------------------------------------------------------- 5

def test_5_longview_beats_raw():
    out = longview_vs_raw(seeds=range(5))
    per_seed = ", ".join(f"{r['longview']:.2f}/{r['raw']:.2f}" for r in out["runs"])
    report(5, out["margin"] >= 0.05,
           f"mean test BAcc long-view {out['longview']:.4f} vs raw {out['raw']:.4f}, "
           f"margin {100 * out['margin']:.1f} pp (>= 5 pp); per seed {per_seed}")


# ---------------------------------------------------------------- 6

def test_6_metric_closed_forms():
    (tn, fp), (fn, tp) = cm = [[9, 1], [2, 8]]
    n = tn + fp + fn + tp
    acc = (tn + tp) / n
    bacc = (tn / (tn + fp) + tp / (tp + fn)) / 2
    p_e = ((tn + fp) * (tn + fn) + (fn + tp) * (fp + tp)) / n ** 2
    kappa = (acc - p_e) / (1 - p_e)
    f1 = [2 * tn / (2 * tn + fp + fn), 2 * tp / (2 * tp + fp + fn)]
    wf1 = (f1[0] * (tn + fp) + f1[1] * (fn + tp)) / n
    r = MetricsReport.from_confusion(cm)
    errs = [abs(r.acc - acc), abs(r.bacc - bacc), abs(r.ckap - kappa), abs(r.wf1 - wf1)]
    stated = [abs(acc - 0.85), abs(bacc - 0.85), abs(kappa - 0.70), abs(wf1 - 0.8496)]
    perfect = MetricsReport.from_predictions([0, 1, 1, 0], [0, 1, 1, 0], 2)
    chance = MetricsReport.from_predictions([0, 0, 1, 1], [0, 0, 0, 0], 2)
    exact = (perfect.bacc, perfect.ckap, perfect.wf1, perfect.acc) == (1.0,) * 4 \
        and chance.bacc == 0.5 and chance.ckap == 0.0
    ok = max(errs) <= 1e-4 and max(stated) <= 1e-4 and exact
    report(6, ok, f"Acc {r.acc:.4f} BAcc {r.bacc:.4f} kappa {r.ckap:.4f} WF1 {r.wf1:.4f}, "
                  f"max error {max(errs):.1e} (<= 1e-4); perfect and chance exact={exact}")


# ---------------------------------------------------------------- 7

def test_7_loss_fixture():
    fixture = loss([[0.8, 0.2]], [0], eps=0.1)
    uniform = [loss(np.full((3, n), 1.0 / n), np.arange(3) % n) for n in (2, 3, 6)]
    exact = all(u == pytest.approx(math.log(n), rel=1e-15) for u, n in zip(uniform, (2, 3, 6)))
    report(7, abs(fixture - 0.29246) <= 1e-5 and exact,
           f"fixture loss {fixture:.6f} (0.29246 +- 1e-5); uniform P gives ln N={exact}")


# ---------------------------------------------------------------- 8

def test_8_structure_invariants():
    rng = np.random.default_rng(0)
    s = ag.softmax(Tensor(rng.standard_normal((200, 9)) * 20)).data.sum(-1)
    softmax_err = float(np.abs(s - 1).max())
    bijective = True
    for _ in range(100):
        p, q = rng.integers(1, 4, 2)
        B, C, L, D = rng.integers(1, 3), p * rng.integers(1, 4), q * rng.integers(1, 4), rng.integers(1, 4)
        z = rng.permutation(B * C * L * D).reshape(B, C, L, D).astype(float)
        out = pixel_unshuffle(Tensor(z), int(p), int(q)).data
        bijective &= out.shape == (B, C // p, L // q, D * p * q) and \
            np.array_equal(np.sort(out.ravel()), np.sort(z.ravel()))
    z = rng.standard_normal((2, 4, 6, 10))
    qz = rng.standard_normal((2, 2, 6, 10))
    identity = True
    for mod, args, ref in ((SelfConvAttention(10, 5, 3, rng), (z,), z),
                           (ConvFeedForward(10, 3, rng), (z,), z),
                           (CrossConvAttention(10, 5, 3, rng), (z, qz), qz)):
        for name, prm in mod.named_parameters():
            if name.endswith("weight") or name.endswith("beta"):
                prm.data = np.zeros_like(prm.data)
        mod.eval()
        identity &= np.array_equal(mod(*[Tensor(a) for a in args]).data, ref)
    model = CadeNet(ModelConfig(n_channels=4, clip_len=16, widths=(10, 10, 10),
                                factors=((2, 2), (1, 2), (1, 1)), decoder_blocks=2))
    X = rng.standard_normal((3, 4, 16, 7))
    model.train()
    model(X)
    model.eval()
    runs = [model(X).data.tobytes() for _ in range(3)]
    deterministic = len(set(runs)) == 1
    ok = softmax_err <= 1e-12 and bijective and identity and deterministic
    report(8, ok, f"softmax row error {softmax_err:.1e} (<= 1e-12), pixel-unshuffle bijective "
                  f"on 100 shapes={bijective}, residual-zero identity={identity}, "
                  f"eval bit-deterministic={deterministic}")


# ---------------------------------------------------------------- 9

def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _sine(freq, rate, seconds):
    return np.sin(2 * np.pi * freq * np.arange(int(rate * seconds)) / rate)


def test_9_signal_path():
    x = _sine(50, 200, 10)
    y = notch(make_recording(x, 200), EEG_FILTER).data[0]
    atten = 20 * math.log10(_rms(x[200:-200]) / _rms(y[200:-200]))
    x = _sine(10, 200, 60)
    y = bandpass(make_recording(x, 200), EEG_FILTER).data[0]
    gain = _rms(y[200:-200]) / _rms(x[200:-200])
    t = np.arange(2001)
    shift = max(abs(int(np.argmax(bandpass(make_recording(np.exp(-0.5 * ((t - 1000) / w) ** 2), 200),
                                           EEG_FILTER).data[0])) - 1000) for w in (3.0, 8.0, 20.0))
    dc = resample(make_recording(np.full(1000, 3.0), 1000), 200).data[0]
    dc_err = float(np.abs(dc[20:-20] - 3.0).max())
    s5 = resample(make_recording(_sine(5, 1000, 4), 1000), 200).data[0]
    corr = float(np.corrcoef(s5[40:-40], _sine(5, 200, 4)[40:-40])[0, 1])
    ok = atten >= 20 and abs(gain - 1) <= 0.02 and shift <= 1 and dc_err <= 1e-6 and corr >= 0.999
    report(9, ok, f"notch {atten:.1f} dB (>= 20), 10 Hz gain {gain:.4f} (within 2%), peak shift "
                  f"{shift} sample(s) (<= 1), resampled DC error {dc_err:.1e} (<= 1e-6), "
                  f"5 Hz correlation {corr:.5f} (>= 0.999)")


# ---------------------------------------------------------------- 10

def test_10_parameter_presets():
    counts = {name: CadeNet(PRESETS[name]).n_parameters() for name in ("reference", "large")}
    dev = {name: (counts[name] - t) / t for name, t in (("reference", 5.87e6), ("large", 11.79e6))}
    report(10, max(abs(d) for d in dev.values()) <= 0.05,
           f"reference preset {counts['reference'] / 1e6:.2f} M ({100 * dev['reference']:+.1f}% of 5.87 M), "
           f"large preset {counts['large'] / 1e6:.2f} M ({100 * dev['large']:+.1f}% of 11.79 M)")


# ---------------------------------------------------------------- 11

def _write_recording(path, ann_path, rng, n_events=24):
    """EDF at 500 Hz with spikes at the positive annotations and background elsewhere."""
    rate, T = 500, 500 * 60
    x = gaussian_filter1d(rng.standard_normal((4, T)), 4.0, axis=1)
    x /= x.std()
    centers = np.linspace(1500, T - 1500, n_events).astype(int)
    labels = np.arange(n_events) % 2
    tpl = np.concatenate([np.linspace(0, 6, 15), np.linspace(6, -1.5, 25), np.linspace(-1.5, 0, 30)])
    for c, lab in zip(centers, labels):
        if lab:
            x[:, c - 14:c - 14 + tpl.size] += tpl
    write_edf(path, np.round(x / 12 * 32767).astype(np.int16), rate)
    ann_path.write_text("sample_index,class_id\n" +
                        "".join(f"{c},{lab}\n" for c, lab in zip(centers, labels)))


def _pipeline(root, config):
    rng = np.random.default_rng(11)
    for split in ("train", "val", "test"):
        edf, ann = root / f"{split}.edf", root / f"{split}.csv"
        _write_recording(edf, ann, rng)
        steps = [("preprocess", "--in", edf, "--out", root / f"{split}.pre.lvc", "--annotations", ann),
                 ("featurize", "--in", root / f"{split}.pre.lvc", "--out", root / f"{split}.vol.lvc"),
                 ("clips", "--in", root / f"{split}.vol.lvc", "--out", root / f"{split}.clips.lvc")]
        for step in steps:
            assert cli_main([str(a) for a in step] + ["--config", str(config)]) == 0
    assert cli_main(["train", "--config", str(config), "--out", str(root / "run")]) == 0
    assert cli_main(["evaluate", "--config", str(config), "--checkpoint", str(root / "run" / "checkpoint"),
                     "--out", str(root / "metrics.json")]) == 0
    return (root / "metrics.json").read_bytes(), (root / "run" / "metrics.json").read_bytes()


def test_11_end_to_end_determinism(tmp_path):
    cfg = {"modality": "eeg", "seed": 3, "clip_len": 100,
           "data": {"train": "train.clips.lvc", "val": "val.clips.lvc", "test": "test.clips.lvc"},
           "model": {"widths": [10, 10, 10], "heads": 5, "decoder_blocks": 1,
                     "factors": [[2, 2], [1, 2], [1, 1]]},
           "train": {"max_epochs": 3, "batch_size": 8}}
    results = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        (root / "config.json").write_text(json.dumps(cfg))
        results.append(_pipeline(root, root / "config.json"))
    same = results[0] == results[1]
    metrics = json.loads(results[0][0])
    report(11, same, f"two preprocess-to-evaluate runs with seed 3: metrics JSON byte-identical={same} "
                     f"(test BAcc {metrics['bacc']:.3f} on {metrics['n_samples']} clips)")
