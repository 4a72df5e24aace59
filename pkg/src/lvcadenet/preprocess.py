"""Band-pass, notch, resampling, z-scoring and bipolar montages.

The filters are zero-phase (forward-backward); every operation works on a
:class:`~lvcadenet.signal_io.Recording` and returns a new one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import BandOutOfRange, DegenerateStd, UnknownLabel, UpsampleRequested
from .signal_io import Recording


@dataclass(frozen=True)
class FilterSpec:
    low: float = 0.1
    high: float = 75.0
    notch_freq: float = 50.0
    notch_bandwidth: float = 2.0
    order: int = 4

    def check(self, rate: float):
        nyq = rate / 2.0
        if not (0 <= self.low < self.high < nyq):
            raise BandOutOfRange(
                f"band [{self.low}, {self.high}] Hz invalid at {rate} Hz (Nyquist {nyq})"
            )
        if not (0 < self.notch_freq < nyq):
            raise BandOutOfRange(f"notch at {self.notch_freq} Hz is beyond Nyquist {nyq}")
        if self.order < 2 or self.order % 2:
            raise BandOutOfRange(f"filter order must be a positive even integer, got {self.order}")


EEG_FILTER = FilterSpec(low=0.1, high=75.0)
MEG_FILTER = FilterSpec(low=3.0, high=40.0)


@dataclass(frozen=True)
class MontageSpec:
    pairs: tuple  # ((anode, cathode), ...)
    out_labels: tuple

    @classmethod
    def from_json(cls, text: str) -> "MontageSpec":
        items = json.loads(text)
        return cls(
            pairs=tuple((it["anode"], it["cathode"]) for it in items),
            out_labels=tuple(it["out"] for it in items),
        )

    def to_json(self) -> str:
        items = [{"anode": a, "cathode": c, "out": o}
                 for (a, c), o in zip(self.pairs, self.out_labels)]
        return json.dumps(items, indent=1)


def _padlen(spec: FilterSpec, n: int) -> int:
    # mirror padding of 3x the filter order, capped by the signal length
    return min(3 * spec.order, n - 1)


def bandpass(rec: Recording, spec: FilterSpec = EEG_FILTER) -> Recording:
    """Zero-phase Butterworth band-pass (low-pass only when ``spec.low == 0``)."""
    spec.check(rec.rate)
    if spec.low > 0:
        sos = signal.butter(spec.order // 2, [spec.low, spec.high], btype="bandpass",
                            fs=rec.rate, output="sos")
    else:
        sos = signal.butter(spec.order, spec.high, btype="lowpass", fs=rec.rate, output="sos")
    out = signal.sosfiltfilt(sos, rec.data, axis=-1, padtype="even",
                             padlen=_padlen(spec, rec.n_samples))
    return rec.replace(data=out)


def notch(rec: Recording, spec: FilterSpec = EEG_FILTER) -> Recording:
    """Zero-phase second-order notch at ``spec.notch_freq``."""
    spec.check(rec.rate)
    q = spec.notch_freq / spec.notch_bandwidth
    b, a = signal.iirnotch(spec.notch_freq, q, fs=rec.rate)
    out = signal.filtfilt(b, a, rec.data, axis=-1, padtype="even",
                          padlen=_padlen(spec, rec.n_samples))
    return rec.replace(data=out)


def resample(rec: Recording, target_rate: float) -> Recording:
    """Polyphase rational resampling down to ``target_rate``.

    The output length is ``round(T * target / rate)``; annotation indices are
    rescaled and clamped into the new range.
    """
    if target_rate > rec.rate:
        raise UpsampleRequested(f"target {target_rate} Hz exceeds source {rec.rate} Hz")
    ratio = (Fraction(target_rate).limit_denominator(10000)
             / Fraction(rec.rate).limit_denominator(10000))
    n_out = int(round(rec.n_samples * target_rate / rec.rate))
    if ratio == 1:
        return rec.replace(data=rec.data.copy(), rate=float(target_rate))
    out = signal.resample_poly(rec.data, ratio.numerator, ratio.denominator,
                               axis=-1, padtype="line")
    if out.shape[1] < n_out:
        out = np.pad(out, ((0, 0), (0, n_out - out.shape[1])), mode="edge")
    out = out[:, :n_out]
    scale = target_rate / rec.rate
    ann = tuple((min(int(round(s * scale)), n_out - 1), c) for s, c in rec.annotations)
    return rec.replace(data=out, rate=float(target_rate), annotations=ann)


def zscore(rec: Recording, per_channel: bool = False) -> Recording:
    """File-wise z-score: one scalar mean/std over all samples by default."""
    data = rec.data
    if per_channel:
        mean = data.mean(axis=1, keepdims=True)
        std = data.std(axis=1, keepdims=True)
        if np.any(std < 1e-12):
            raise DegenerateStd("at least one channel is constant")
    else:
        mean = data.mean()
        std = data.std()
        if std < 1e-12:
            raise DegenerateStd("recording is constant")
    return rec.replace(data=(data - mean) / std)


def bipolar_montage(rec: Recording, montage: MontageSpec) -> Recording:
    index = {lab: i for i, lab in enumerate(rec.labels)}
    for anode, cathode in montage.pairs:
        for lab in (anode, cathode):
            if lab not in index:
                raise UnknownLabel(f"montage references unknown channel {lab!r}")
    anodes = [index[a] for a, _ in montage.pairs]
    cathodes = [index[c] for _, c in montage.pairs]
    out = rec.data[anodes] - rec.data[cathodes]
    return rec.replace(data=out, labels=tuple(montage.out_labels))


def preprocess(rec: Recording, spec: FilterSpec, target_rate: float,
               montage: MontageSpec | None = None, per_channel: bool = False) -> Recording:
    """Montage (optional), then band-pass, notch, resample and z-score, in that order."""
    if montage is not None:
        rec = bipolar_montage(rec, montage)
    rec = bandpass(rec, spec)
    rec = notch(rec, spec)
    rec = resample(rec, target_rate)
    return zscore(rec, per_channel=per_channel)
