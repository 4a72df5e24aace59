"""Long-view morphological features.

Each channel is cut into complete waves (minimum, maximum, minimum).  Every
wave gets amplitude, slope, half-width slope, mean amplitude and sharpness
values; these are z-scored against the neighbouring waves and painted back
onto the sample grid next to a five-level topology code and the raw signal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CenterOutOfRange, InvalidInput
from .signal_io import Recording, read_container, write_container

log = logging.getLogger(__name__)

FEATURE_NAMES = ("raw", "topo", "amp", "meanAmp", "slope", "halfSlope", "sharpness")
SIDED = ("amp", "slope", "halfSlope")
UNSIDED = ("meanAmp", "sharpness")
DEFAULT_WINDOW = 100
SIGMA_FLOOR = 1e-8


@dataclass
class WaveSegment:
    t_l: int
    t_o: int
    t_r: int
    t_hl: int = -1
    t_hr: int = -1
    a_l: float = float("nan")
    a_r: float = float("nan")
    sp_l: float = float("nan")
    sp_r: float = float("nan")
    hsp_l: float = float("nan")
    hsp_r: float = float("nan")
    ma: float = float("nan")
    sn: float = float("nan")

    def values(self, feature: str):
        """Per-wave scalar(s) behind one interpolated feature."""
        return {
            "amp": (self.a_l, self.a_r),
            "slope": (self.sp_l, self.sp_r),
            "halfSlope": (self.hsp_l, self.hsp_r),
            "meanAmp": self.ma,
            "sharpness": self.sn,
        }[feature]


@dataclass
class FeatureVolume:
    tensor: np.ndarray  # C x T x 7
    rate: float
    labels: tuple
    wave_counts: tuple = field(default=())
    annotations: tuple = field(default=())  # (sample_index, class_id) pairs

    @property
    def shape(self):
        return self.tensor.shape


def detect_extrema(x) -> list[tuple[int, str]]:
    """Alternating extrema of a series as ``(index, "min" | "max")`` pairs.

    Plateaus are collapsed to their leftmost sample.  The first and last
    samples count as extrema, classified by the direction of the adjacent
    trend.  A constant series has no extrema.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return []
    starts = np.concatenate(([0], np.flatnonzero(np.diff(x) != 0) + 1))
    if starts.size < 2:
        return []
    rising = np.diff(x[starts]) > 0
    out = [(0, "min" if rising[0] else "max")]
    turns = np.flatnonzero(rising[:-1] != rising[1:]) + 1
    for j in turns:
        out.append((int(starts[j]), "max" if rising[j - 1] else "min"))
    out.append((int(starts[-1]), "max" if rising[-1] else "min"))
    return out


def decompose_waves(x, extrema) -> list[WaveSegment]:
    """One wave per (min, max, min) triple of consecutive extrema."""
    waves = []
    for i in range(1, len(extrema) - 1):
        (il, kl), (io, ko), (ir, kr) = extrema[i - 1], extrema[i], extrema[i + 1]
        if ko == "max" and kl == "min" and kr == "min":
            waves.append(WaveSegment(il, io, ir))
    return waves


def half_width_moments(x, wave: WaveSegment) -> tuple[int, int]:
    """Half-amplitude crossing samples on either flank, taken on the peak's side.

    Left: first sample in ``[t_l, t_o)`` with ``x >= (x[t_l] + x[t_o]) / 2``,
    falling back to ``t_o - 1``.  Right: last sample in ``(t_o, t_r]`` with
    ``x >= (x[t_o] + x[t_r]) / 2``, at least ``t_o + 1``.  Where the level hits
    a sample exactly this is the first sample at or below it; otherwise both
    sides resolve the crossing toward the maximum, so a symmetric wave gets
    symmetric moments.
    """
    x = np.asarray(x)
    top = x[wave.t_o]
    # flanks between consecutive extrema are monotone, so a binary search finds
    # the first crossing
    left = x[wave.t_l:wave.t_o]
    k = int(np.searchsorted(left, (x[wave.t_l] + top) / 2.0, side="left"))
    t_hl = wave.t_l + k if k < left.size else wave.t_o - 1
    right = -x[wave.t_o + 1:wave.t_r + 1]
    k = int(np.searchsorted(right, -(top + x[wave.t_r]) / 2.0, side="right"))
    t_hr = wave.t_o + max(k, 1)
    return t_hl, t_hr


def wave_properties(x, wave: WaveSegment, absolute: bool = False) -> WaveSegment:
    """Fill amplitude, slope, half-width slope, mean amplitude and sharpness.

    With ``absolute=True`` the right-flank amplitude is taken as a magnitude.
    """
    x = np.asarray(x)
    t_l, t_o, t_r = wave.t_l, wave.t_o, wave.t_r
    if wave.t_hl < 0:
        wave.t_hl, wave.t_hr = half_width_moments(x, wave)
    a_l = float(x[t_o] - x[t_l])
    a_r = float(x[t_r] - x[t_o])
    if absolute:
        a_r = abs(a_r)
    wave.a_l, wave.a_r = a_l, a_r
    wave.sp_l = a_l / (t_o - t_l)
    wave.sp_r = a_r / (t_r - t_o)
    wave.hsp_l = a_l / (2 * (t_o - wave.t_hl))
    wave.hsp_r = a_r / (2 * (wave.t_hr - t_o))
    wave.ma = (a_l * (t_r - t_o) + a_r * (t_o - t_l)) / (t_r - t_l)
    lo, hi = max(t_o - 4, 0), min(t_o + 5, x.size)
    wave.sn = abs(float(x[lo:hi].sum()) - (hi - lo) * float(x[t_o]))
    return wave


def topology_feature(x, waves) -> np.ndarray:
    """Five-level position code: max 1, min -1, half-width 0, in between +-0.5.

    Samples covered by no wave get -0.5.  Where marks collide, maxima beat
    minima, which beat half-width moments.
    """
    topo = np.full(len(x), -0.5)
    for w in waves:
        topo[w.t_hl + 1:w.t_hr] = 0.5
    for w in waves:
        topo[w.t_hl] = 0.0
        topo[w.t_hr] = 0.0
    for w in waves:
        topo[w.t_l] = -1.0
        topo[w.t_r] = -1.0
    for w in waves:
        topo[w.t_o] = 1.0
    return topo


def wave_table(waves) -> dict[str, np.ndarray]:
    """Per-wave values: shape (K, 2) for sided features, (K,) otherwise."""
    table = {}
    for name in SIDED:
        table[name] = np.array([w.values(name) for w in waves], dtype=np.float64).reshape(-1, 2)
    for name in UNSIDED:
        table[name] = np.array([w.values(name) for w in waves], dtype=np.float64)
    return table


def interpolate_features(waves, T: int, table: dict | None = None) -> dict[str, np.ndarray]:
    """Paint per-wave values onto ``T`` samples.

    Left-half values cover ``[t_hl, t_o)`` and right-half values ``[t_o, t_hr]``;
    unsided values cover ``[t_hl, t_hr]``.  Uncovered samples are 0 and a later
    wave overwrites an earlier one on a shared sample.  ``table`` (as returned
    by :func:`wave_table` or :func:`longview_normalize`) defaults to the raw
    wave properties.
    """
    if table is None:
        table = wave_table(waves)
    out = {name: np.zeros(T) for name in SIDED + UNSIDED}
    for k, w in enumerate(waves):
        for name in SIDED:
            left, right = table[name][k]
            out[name][w.t_hl:w.t_o] = left
            out[name][w.t_o:w.t_hr + 1] = right
        for name in UNSIDED:
            out[name][w.t_hl:w.t_hr + 1] = table[name][k]
    return out


def normalize_wave_values(values, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Z-score each wave's value(s) against waves ``k - window//2 .. k + window//2``.

    The neighbourhood is clipped at the ends of the channel.  For (K, 2)
    inputs both halves of every neighbouring wave enter the statistics.
    """
    values = np.asarray(values, dtype=np.float64)
    sided = values.ndim == 2
    vals = values if sided else values[:, None]
    K = vals.shape[0]
    if K == 0:
        return values.copy()
    h = window // 2
    padded = np.pad(vals, ((h, h), (0, 0)), constant_values=np.nan)
    win = sliding_window_view(padded, 2 * h + 1, axis=0).reshape(K, -1)
    mu = np.nanmean(win, axis=1, keepdims=True)
    sigma = np.nanstd(win, axis=1, keepdims=True)
    out = (vals - mu) / np.maximum(sigma, SIGMA_FLOOR)
    return out if sided else out[:, 0]


def longview_normalize(waves, window: int = DEFAULT_WINDOW) -> dict[str, np.ndarray]:
    """Normalised per-wave table for the five morphological features."""
    table = wave_table(waves)
    return {name: normalize_wave_values(vals, window) for name, vals in table.items()}


def channel_waves(x, absolute: bool = False) -> list[WaveSegment]:
    waves = decompose_waves(x, detect_extrema(x))
    for w in waves:
        wave_properties(x, w, absolute=absolute)
    return waves


def channel_features(x, window: int = DEFAULT_WINDOW, absolute: bool = False):
    """The 7 x T feature stack of one channel, plus its wave count."""
    x = np.asarray(x, dtype=np.float64)
    T = x.size
    waves = channel_waves(x, absolute) if T >= 3 else []
    series = interpolate_features(waves, T, longview_normalize(waves, window))
    stack = [x, topology_feature(x, waves)] + [series[name] for name in FEATURE_NAMES[2:]]
    return np.stack(stack, axis=-1), len(waves)


def build_feature_volume(rec: Recording, window: int = DEFAULT_WINDOW,
                         absolute: bool = False) -> FeatureVolume:
    """Channels x samples x 7 long-view feature volume of a preprocessed recording."""
    data = np.asarray(rec.data, dtype=np.float64)
    vol = np.empty(data.shape + (7,))
    counts = []
    for c in range(data.shape[0]):
        vol[c], n = channel_features(data[c], window, absolute)
        counts.append(n)
        log.debug("channel %s: %d complete waves", rec.labels[c] if rec.labels else c, n)
    return FeatureVolume(tensor=vol, rate=rec.rate, labels=tuple(rec.labels),
                         wave_counts=tuple(counts), annotations=tuple(rec.annotations))


def extract_clip(volume, center: int, length: int) -> np.ndarray:
    """C x L x 7 slice spanning ``[center - L/2, center + L/2)``, zero padded."""
    tensor = volume.tensor if isinstance(volume, FeatureVolume) else np.asarray(volume)
    C, T, D = tensor.shape
    if length % 2:
        raise ValueError(f"clip length must be even, got {length}")
    if not 0 <= center < T:
        raise CenterOutOfRange(f"center {center} outside [0, {T})")
    start = center - length // 2
    clip = np.zeros((C, length, D))
    lo, hi = max(start, 0), min(start + length, T)
    clip[:, lo - start:hi - start] = tensor[:, lo:hi]
    return clip


@dataclass
class Clip:
    tensor: np.ndarray
    center: int
    label: int


def make_clip(volume, center: int, length: int, label: int) -> Clip:
    return Clip(extract_clip(volume, center, length), int(center), int(label))


def batch(clips) -> np.ndarray:
    return np.stack([c.tensor if isinstance(c, Clip) else c for c in clips])


def save_volume(volume: FeatureVolume, path):
    header = {
        "kind": "feature_volume",
        "rate": float(volume.rate),
        "labels": list(volume.labels),
        "features": list(FEATURE_NAMES),
        "wave_counts": list(volume.wave_counts),
        "shape": list(volume.tensor.shape),
        "annotations": [[int(s), int(c)] for s, c in volume.annotations],
    }
    write_container(path, header, volume.tensor)


def load_volume(path) -> FeatureVolume:
    header, payload = read_container(path)
    if header.get("kind") != "feature_volume":
        raise InvalidInput(f"{path} holds a {header.get('kind')!r}, expected a feature volume")
    return FeatureVolume(tensor=payload.astype(np.float64), rate=float(header["rate"]),
                         labels=tuple(header["labels"]),
                         wave_counts=tuple(header.get("wave_counts", ())),
                         annotations=tuple((int(s), int(c)) for s, c in header.get("annotations", ())))


def clips_from_volume(volume: FeatureVolume, length: int, annotations=None):
    """Stack of annotated clips: (X, y, centers)."""
    ann = volume.annotations if annotations is None else annotations
    if not ann:
        C = volume.tensor.shape[0]
        return np.zeros((0, C, length, 7)), np.zeros(0, int), np.zeros(0, int)
    clips = [make_clip(volume, s, length, c) for s, c in ann]
    return (batch(clips), np.array([c.label for c in clips]),
            np.array([c.center for c in clips]))


def save_clip_set(path, X, y, centers=None):
    X = np.asarray(X)
    centers = np.full(len(y), -1) if centers is None else np.asarray(centers)
    header = {"kind": "clip_set", "shape": list(X.shape),
              "labels_y": [int(v) for v in y], "centers": [int(v) for v in centers]}
    write_container(path, header, X)


def load_clip_set(path):
    header, payload = read_container(path)
    if header.get("kind") != "clip_set":
        raise InvalidInput(f"{path} holds a {header.get('kind')!r}, expected a clip set")
    return (payload.astype(np.float64), np.array(header["labels_y"], dtype=int),
            np.array(header["centers"], dtype=int))
