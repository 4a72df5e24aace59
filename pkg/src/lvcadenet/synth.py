"""Synthetic spike recordings for desk-scale training runs.

Each clip is cut from its own short multichannel file of smoothed noise so
that the long-view normalisation sees a realistic neighbourhood of waves.
Spikes are triangular biphasic templates with a random rise/fall asymmetry.

Two regimes are available:

* separable: class 0 is background, class n >= 1 carries a spike whose width
  is drawn from the n-th slice of ``width_range``;
* context-dependent (binary): both classes carry the same spike at the clip
  centre.  Negatives sit inside a run of equal-amplitude recurring waves
  spaced further apart than half a clip, so inside the clip window the two
  classes look alike and only the surrounding seconds tell them apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .longview import build_feature_volume, extract_clip
from .signal_io import make_recording


@dataclass
class SynthSpec:
    n_classes: int = 2
    clips_per_class: int = 100
    val_per_class: int = 25
    test_per_class: int = 25
    n_channels: int = 4
    clip_len: int = 200
    rate: float = 200.0
    file_len: int = 1600
    width_range: tuple = (10, 20)
    amp_range: tuple = (6.0, 10.0)
    noise_std: float = 1.0
    smooth: float = 2.0
    context: bool = False
    period_range: tuple = (130, 170)
    test_imbalance: int | None = None  # negatives per positive in the test split
    window: int = 100

    def check(self):
        L = self.clip_len
        lo, hi = self.width_range
        if not (L / 20 <= lo <= hi <= L / 2):
            raise ValueError(f"width range {self.width_range} outside [{L / 20}, {L / 2}]")
        if self.amp_range[0] <= self.noise_std:
            raise ValueError("spike amplitude must exceed the noise level")
        if self.context and self.n_classes != 2:
            raise ValueError("the context-dependent regime is binary")
        if self.context and self.period_range[0] - hi // 2 <= L // 2:
            raise ValueError("recurring waves would intrude into the clip window")
        if self.file_len < L:
            raise ValueError("file shorter than a clip")
        return self


@dataclass
class Split:
    X: np.ndarray  # N x C x L x 7
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class SynthData:
    train: Split
    val: Split
    test: Split

    def pool(self) -> Split:
        return Split(np.concatenate([self.train.X, self.val.X]),
                     np.concatenate([self.train.y, self.val.y]))


def spike_template(width: int, asym: float, amp: float) -> tuple[np.ndarray, int]:
    """Triangular biphasic spike; returns (samples, index of the peak)."""
    rise = max(int(round(width * asym)), 1)
    fall = max(width - rise, 1)
    up = np.linspace(0.0, amp, rise + 1)
    down = np.linspace(amp, -0.25 * amp, fall + 1)[1:]
    back = np.linspace(-0.25 * amp, 0.0, width + 1)[1:]
    return np.concatenate([up, down, back]), rise


def _background(rng, spec: SynthSpec) -> np.ndarray:
    x = gaussian_filter1d(rng.standard_normal((spec.n_channels, spec.file_len)), spec.smooth, axis=1)
    return x * (spec.noise_std / x.std(axis=1, keepdims=True))


def _add_spike(x, peak: int, width: int, asym: float, amp: float, gains):
    tpl, top = spike_template(width, asym, amp)
    start = peak - top
    lo, hi = max(start, 0), min(start + tpl.size, x.shape[1])
    if lo < hi:
        x[:, lo:hi] += gains[:, None] * tpl[None, lo - start:hi - start]


def _class_width(rng, spec: SynthSpec, label: int) -> int:
    lo, hi = spec.width_range
    if spec.context or spec.n_classes == 2:
        return int(rng.integers(lo, hi + 1))
    edges = np.linspace(lo, hi, spec.n_classes)
    return int(rng.integers(int(edges[label - 1]), int(edges[label]) + 1))


def synth_file(rng, spec: SynthSpec, label: int) -> np.ndarray:
    """One C x file_len recording whose centre carries an event of ``label``."""
    x = _background(rng, spec)
    center = spec.file_len // 2
    if not spec.context and label == 0:
        return x
    width = _class_width(rng, spec, label)
    asym = rng.uniform(0.3, 0.7)
    amp = rng.uniform(*spec.amp_range)
    gains = rng.uniform(0.8, 1.0, size=spec.n_channels)
    _add_spike(x, center, width, asym, amp, gains)
    if spec.context and label == 0:
        for direction in (-1, 1):
            peak = center
            while 0 <= peak < spec.file_len:
                peak += direction * int(rng.integers(spec.period_range[0], spec.period_range[1] + 1))
                _add_spike(x, peak, width, rng.uniform(0.3, 0.7), amp, gains)
    return x


def synth_clip(rng, spec: SynthSpec, label: int) -> np.ndarray:
    rec = make_recording(synth_file(rng, spec, label), spec.rate)
    vol = build_feature_volume(rec, window=spec.window)
    return extract_clip(vol, spec.file_len // 2, spec.clip_len)


def _split(rng, spec: SynthSpec, counts) -> Split:
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)]).astype(int)
    labels = labels[rng.permutation(labels.size)]
    X = np.stack([synth_clip(rng, spec, int(c)) for c in labels])
    return Split(X, labels)


def synth_dataset(spec: SynthSpec, seed: int = 0) -> SynthData:
    """Deterministic train/val/test splits of featurised clips."""
    spec.check()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    per = spec.n_classes
    train = _split(rngs[0], spec, [spec.clips_per_class] * per)
    val = _split(rngs[1], spec, [spec.val_per_class] * per)
    if spec.test_imbalance:
        # class 0 is the negative class
        test_counts = [spec.test_per_class * spec.test_imbalance] + [spec.test_per_class] * (per - 1)
    else:
        test_counts = [spec.test_per_class] * per
    test = _split(rngs[2], spec, test_counts)
    return SynthData(train, val, test)


def raw_only(X: np.ndarray) -> np.ndarray:
    """Replace all seven features by copies of the raw signal."""
    return np.repeat(X[..., :1], X.shape[-1], axis=-1)
