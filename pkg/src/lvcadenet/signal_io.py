"""Recording container plus EDF and native-format readers/writers."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    HeaderPayloadMismatch,
    InvalidInput,
    MalformedHeader,
    MixedRates,
    TruncatedRecords,
)

NATIVE_MAGIC = b"LVNC"
NATIVE_DTYPE = "<f4"


@dataclass(frozen=True)
class Recording:
    """A multichannel recording: ``data`` is channels x samples (float64)."""

    data: np.ndarray
    rate: float
    labels: tuple
    annotations: tuple = field(default=())

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def replace(self, **changes) -> "Recording":
        fields = dict(data=self.data, rate=self.rate, labels=self.labels,
                      annotations=self.annotations)
        fields.update(changes)
        return Recording(**fields)


@dataclass(frozen=True)
class AnnotationLabel:
    class_id: int
    name: str


# TUEV event classes, in the order the corpus documents them.
TUEV_CLASSES = (
    AnnotationLabel(0, "spsw"),
    AnnotationLabel(1, "gped"),
    AnnotationLabel(2, "pled"),
    AnnotationLabel(3, "eyem"),
    AnnotationLabel(4, "artf"),
    AnnotationLabel(5, "bckg"),
)


def make_recording(data, rate, labels=None, annotations=()) -> Recording:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if labels is None:
        labels = [f"ch{i}" for i in range(data.shape[0])]
    ann = tuple((int(s), int(c)) for s, c in annotations)
    return Recording(data=data, rate=float(rate), labels=tuple(labels), annotations=ann)


def validate(rec: Recording) -> list[str]:
    """Return one message per violated Recording invariant (empty if valid)."""
    problems = []
    data = np.asarray(rec.data)
    if data.ndim != 2:
        return [f"data must be 2-D, got {data.ndim}-D"]
    n_ch, n_t = data.shape
    if n_ch < 1:
        problems.append("recording has no channels")
    if n_t < 2:
        problems.append(f"recording needs at least 2 samples, got {n_t}")
    if not (rec.rate > 0):
        problems.append(f"sampling rate must be positive, got {rec.rate}")
    if len(rec.labels) != n_ch:
        problems.append(f"{len(rec.labels)} labels for {n_ch} channels")
    seen = set()
    for lab in rec.labels:
        if lab in seen:
            problems.append(f"duplicate channel label {lab!r}")
        seen.add(lab)
    for idx, cls in rec.annotations:
        if not 0 <= idx < n_t:
            problems.append(f"annotation index {idx} outside [0, {n_t})")
    return problems


def check_class_ids(labels) -> list[str]:
    """Class ids of an AnnotationLabel set must be 0..N-1."""
    ids = sorted(lab.class_id for lab in labels)
    if ids != list(range(len(ids))):
        return [f"class ids {ids} are not a contiguous range from 0"]
    return []


# ---------------------------------------------------------------- EDF

_SIGNAL_FIELDS = (
    ("label", 16), ("transducer", 80), ("phys_dim", 8), ("phys_min", 8),
    ("phys_max", 8), ("dig_min", 8), ("dig_max", 8), ("prefilter", 80),
    ("n_samples", 8), ("reserved", 32),
)


def _ascii(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip()


def _number(raw: bytes, what: str, cast=float):
    text = _ascii(raw)
    try:
        return cast(text)
    except ValueError:
        raise MalformedHeader(f"non-numeric {what} field: {text!r}") from None


def edf_scale(digital, dig_min, dig_max, phys_min, phys_max):
    """Map digital samples to physical units with the EDF linear rule."""
    gain = (phys_max - phys_min) / (dig_max - dig_min)
    return (np.asarray(digital, dtype=np.float64) - dig_min) * gain + phys_min


def read_edf(path) -> Recording:
    """Read a continuous EDF file whose signals all share one sampling rate."""
    blob = Path(path).read_bytes()
    if len(blob) < 256:
        raise MalformedHeader(f"{path}: {len(blob)} bytes, shorter than the fixed header")
    if _ascii(blob[0:8]) != "0":
        raise MalformedHeader(f"unsupported EDF version {_ascii(blob[0:8])!r}")
    header_bytes = _number(blob[184:192], "header size", int)
    n_records = _number(blob[236:244], "number of records", int)
    duration = _number(blob[244:252], "record duration")
    ns = _number(blob[252:256], "signal count", int)
    if ns < 1 or duration <= 0:
        raise MalformedHeader(f"bad signal count {ns} or record duration {duration}")
    if len(blob) < 256 + 256 * ns:
        raise TruncatedRecords("signal header block is incomplete")
    if header_bytes != 256 * (ns + 1):
        raise MalformedHeader(f"header size {header_bytes} != {256 * (ns + 1)}")

    sig = {}
    pos = 256
    for name, width in _SIGNAL_FIELDS:
        sig[name] = [blob[pos + i * width: pos + (i + 1) * width] for i in range(ns)]
        pos += width * ns

    labels = [_ascii(b) for b in sig["label"]]
    phys_min = [_number(b, "physical minimum") for b in sig["phys_min"]]
    phys_max = [_number(b, "physical maximum") for b in sig["phys_max"]]
    dig_min = [_number(b, "digital minimum", int) for b in sig["dig_min"]]
    dig_max = [_number(b, "digital maximum", int) for b in sig["dig_max"]]
    spr = [_number(b, "samples per record", int) for b in sig["n_samples"]]
    for i in range(ns):
        if dig_max[i] == dig_min[i]:
            raise MalformedHeader(f"signal {labels[i]!r}: digital range is degenerate")
        if phys_max[i] == phys_min[i]:
            raise MalformedHeader(f"signal {labels[i]!r}: physical range is degenerate")
    if len(set(spr)) != 1:
        raise MixedRates(f"samples per record differ across signals: {spr}")
    per_record = spr[0]
    record_bytes = 2 * per_record * ns
    payload = blob[header_bytes:]
    if n_records < 0:
        n_records = len(payload) // record_bytes
    if len(payload) < n_records * record_bytes:
        raise TruncatedRecords(
            f"header promises {n_records} records ({n_records * record_bytes} bytes), "
            f"file holds {len(payload)}"
        )
    if n_records == 0:
        raise TruncatedRecords("file contains no data records")
    raw = np.frombuffer(payload[: n_records * record_bytes], dtype="<i2")
    raw = raw.reshape(n_records, ns, per_record).transpose(1, 0, 2).reshape(ns, -1)
    data = np.empty(raw.shape, dtype=np.float64)
    for i in range(ns):
        data[i] = edf_scale(raw[i], dig_min[i], dig_max[i], phys_min[i], phys_max[i])
    return Recording(data=data, rate=per_record / duration, labels=tuple(labels))


def _field(value, width: int) -> bytes:
    text = value if isinstance(value, str) else f"{value:g}" if isinstance(value, float) else str(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def write_edf(path, digital, rate, labels=None, record_duration=1.0,
              dig_range=(-32768, 32767), phys_range=(-1.0, 1.0)):
    """Write int16 samples (channels x samples) as a plain EDF file.

    Intended for fixtures and export; the sample count must be a whole number
    of records.
    """
    digital = np.asarray(digital)
    ns, n = digital.shape
    per_record = int(round(rate * record_duration))
    if n % per_record:
        raise ValueError(f"{n} samples is not a whole number of {per_record}-sample records")
    n_records = n // per_record
    labels = labels or [f"ch{i}" for i in range(ns)]
    head = b"".join([
        _field("0", 8), _field("X X X X", 80), _field("Startdate X X X X", 80),
        _field("01.01.01", 8), _field("00.00.00", 8), _field(256 * (ns + 1), 8),
        _field("", 44), _field(n_records, 8), _field(float(record_duration), 8),
        _field(ns, 4),
    ])
    values = {
        "label": labels, "transducer": [""] * ns, "phys_dim": ["uV"] * ns,
        "phys_min": [float(phys_range[0])] * ns, "phys_max": [float(phys_range[1])] * ns,
        "dig_min": [dig_range[0]] * ns, "dig_max": [dig_range[1]] * ns,
        "prefilter": [""] * ns, "n_samples": [per_record] * ns, "reserved": [""] * ns,
    }
    for name, width in _SIGNAL_FIELDS:
        head += b"".join(_field(v, width) for v in values[name])
    body = digital.astype("<i2").reshape(ns, n_records, per_record).transpose(1, 0, 2)
    Path(path).write_bytes(head + body.tobytes())


def read_annotations_csv(path) -> tuple:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["sample_index", "class_id"]:
            raise InvalidInput(f"annotation sidecar header must be sample_index,class_id")
        return tuple((int(row["sample_index"]), int(row["class_id"])) for row in reader)


def write_annotations_csv(path, annotations):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "class_id"])
        writer.writerows(annotations)


# ---------------------------------------------------------------- native container
#
# Layout: b"LVNC" | uint32 LE header length | UTF-8 JSON header | float32 LE payload.

def write_container(path, header: dict, payload: np.ndarray):
    header = dict(header, dtype=NATIVE_DTYPE)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = np.ascontiguousarray(payload, dtype=NATIVE_DTYPE).tobytes()
    with open(path, "wb") as fh:
        fh.write(NATIVE_MAGIC + struct.pack("<I", len(text)) + text + body)


def read_container(path) -> tuple[dict, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != NATIVE_MAGIC:
        raise InvalidInput(f"{path} is not a native container")
    (n,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8: 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"unreadable container header: {exc}") from None
    if header.get("dtype") != NATIVE_DTYPE:
        raise InvalidInput(f"unsupported payload dtype {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    payload = blob[8 + n:]
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise HeaderPayloadMismatch(
            f"header describes {expected} payload bytes, found {len(payload)}"
        )
    return header, np.frombuffer(payload, dtype=NATIVE_DTYPE).reshape(shape)


def write_native(rec: Recording, path):
    header = {
        "kind": "recording",
        "rate": float(rec.rate),
        "labels": list(rec.labels),
        "C": rec.n_channels,
        "T": rec.n_samples,
        "shape": [rec.n_channels, rec.n_samples],
        "annotations": [[int(s), int(c)] for s, c in rec.annotations],
    }
    write_container(path, header, rec.data)


def read_native(path) -> Recording:
    header, payload = read_container(path)
    if header.get("kind") != "recording":
        raise InvalidInput(f"{path} holds a {header.get('kind')!r}, expected a recording")
    if [header["C"], header["T"]] != list(payload.shape):
        raise HeaderPayloadMismatch("C/T fields disagree with payload shape")
    return Recording(
        data=payload.astype(np.float64),
        rate=float(header["rate"]),
        labels=tuple(header["labels"]),
        annotations=tuple((int(s), int(c)) for s, c in header["annotations"]),
    )


def read_any(path) -> Recording:
    """Read an EDF or native file, picking the reader from the leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == NATIVE_MAGIC:
        return read_native(path)
    return read_edf(path)
