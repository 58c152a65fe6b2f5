"""Minimal EDF reader/writer (16-bit little-endian samples, ASCII header).

Only continuous EDF is handled; EDF+ annotation signals are not decoded.
Seizure times are attached separately from a sidecar file.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    InconsistentRecordCount,
    MalformedNumericField,
    TruncatedHeader,
    UnrepresentableAmplitude,
)
from .recording import EdfCalibration, Recording

FIXED_HEADER = 256
SIGNAL_HEADER = 256

# (name, width) of the fixed header fields
_FIXED_FIELDS = [
    ("version", 8), ("patient", 80), ("recording", 80), ("startdate", 8),
    ("starttime", 8), ("header_bytes", 8), ("reserved", 44), ("n_records", 8),
    ("record_duration", 8), ("n_signals", 4),
]
# per-signal fields, stored field-major (all labels, then all transducers, ...)
_SIGNAL_FIELDS = [
    ("label", 16), ("transducer", 80), ("phys_dim", 8), ("phys_min", 8),
    ("phys_max", 8), ("dig_min", 8), ("dig_max", 8), ("prefilter", 80),
    ("samples_per_record", 8), ("reserved", 32),
]


def _number(raw: bytes, offset: int, integer: bool = False):
    text = raw.decode("ascii", errors="replace").strip()
    try:
        return int(text) if integer else float(text)
    except ValueError:
        raise MalformedNumericField(f"cannot parse {text!r} as a number", offset) from None


def _read_fixed(data: bytes) -> dict:
    fields, pos = {}, 0
    for name, width in _FIXED_FIELDS:
        fields[name] = (data[pos:pos + width], pos)
        pos += width
    return fields


def parse_edf(data: bytes) -> Recording:
    if len(data) < FIXED_HEADER:
        raise TruncatedHeader(f"need {FIXED_HEADER} header bytes, got {len(data)}", len(data))
    head = _read_fixed(data)
    ns = _number(*head["n_signals"], integer=True)
    if ns < 1:
        raise MalformedNumericField("number of signals must be positive", head["n_signals"][1])
    header_len = FIXED_HEADER + SIGNAL_HEADER * ns
    if len(data) < header_len:
        raise TruncatedHeader(f"need {header_len} header bytes for {ns} signals", len(data))
    declared = _number(*head["header_bytes"], integer=True)
    if declared != header_len:
        raise MalformedNumericField(
            f"header byte count {declared} != {header_len}", head["header_bytes"][1]
        )

    sig, pos = {}, FIXED_HEADER
    for name, width in _SIGNAL_FIELDS:
        sig[name] = [(data[pos + i * width:pos + (i + 1) * width], pos + i * width) for i in range(ns)]
        pos += width * ns

    labels = [raw.decode("ascii", errors="replace").strip() for raw, _ in sig["label"]]
    spr = [_number(*f, integer=True) for f in sig["samples_per_record"]]
    calibration = []
    for i in range(ns):
        cal = EdfCalibration(
            _number(*sig["phys_min"][i]), _number(*sig["phys_max"][i]),
            _number(*sig["dig_min"][i], integer=True), _number(*sig["dig_max"][i], integer=True),
        )
        if cal.dig_max <= cal.dig_min:
            raise MalformedNumericField("digital maximum must exceed minimum", sig["dig_max"][i][1])
        if cal.phys_max == cal.phys_min:
            raise MalformedNumericField("physical range is empty", sig["phys_max"][i][1])
        calibration.append(cal)
    if any(n != spr[0] for n in spr) or spr[0] < 1:
        raise MalformedNumericField(
            "all signals must share one positive sample count per record",
            sig["samples_per_record"][0][1],
        )

    duration = _number(*head["record_duration"])
    if duration <= 0:
        raise MalformedNumericField("record duration must be positive", head["record_duration"][1])
    n_records = _number(*head["n_records"], integer=True)
    record_bytes = 2 * sum(spr)
    body = len(data) - header_len
    if n_records == -1:
        if body % record_bytes:
            raise InconsistentRecordCount(
                f"{body} data bytes is not a whole number of {record_bytes}-byte records", header_len
            )
        n_records = body // record_bytes
    elif n_records < 0 or n_records * record_bytes > body:
        raise InconsistentRecordCount(
            f"header declares {n_records} records but only {body} data bytes follow",
            head["n_records"][1],
        )

    digital = np.frombuffer(data, dtype="<i2", count=n_records * record_bytes // 2, offset=header_len)
    digital = digital.reshape(n_records, ns, spr[0]).transpose(1, 0, 2).reshape(ns, -1)
    physical = np.empty(digital.shape, dtype=np.float64)
    for i, cal in enumerate(calibration):
        physical[i] = (digital[i].astype(np.float64) - cal.dig_min) * cal.gain + cal.phys_min
    return Recording(
        channel_labels=labels,
        sample_rate=spr[0] / duration,
        data=physical,
        annotations=[],
        calibration=calibration,
        record_duration=duration,
    )


def _fmt(value, width: int) -> bytes:
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    text = str(value)
    precision = width
    while len(text) > width and isinstance(value, float) and precision > 1:
        text = f"{value:.{precision}g}"
        precision -= 1
    if len(text) > width:
        raise ValueError(f"{value!r} does not fit a {width}-character EDF field")
    return text.ljust(width).encode("ascii")


def to_digital(recording: Recording, calibration: list) -> np.ndarray:
    out = np.empty(recording.data.shape, dtype=np.int16)
    for i, cal in enumerate(calibration):
        x = recording.data[i]
        half = 0.5 * abs(cal.gain)
        lo, hi = min(cal.phys_min, cal.phys_max), max(cal.phys_min, cal.phys_max)
        bad = np.flatnonzero((x < lo - half) | (x > hi + half))
        if bad.size:
            raise UnrepresentableAmplitude(
                f"channel {recording.channel_labels[i]!r} sample {bad[0]} = {x[bad[0]]!r} µV "
                f"outside [{cal.phys_min}, {cal.phys_max}]"
            )
        dig = np.round((x - cal.phys_min) / cal.gain + cal.dig_min)
        out[i] = np.clip(dig, max(cal.dig_min, -32768), min(cal.dig_max, 32767))
    return out


def default_calibration(data: np.ndarray) -> list:
    """Integer µV range covering the data, full 16-bit digital range."""
    cals = []
    for x in data:
        lo, hi = math.floor(x.min()), math.ceil(x.max())
        if hi <= lo:
            hi = lo + 1
        cals.append(EdfCalibration(float(lo), float(hi), -32768, 32767))
    return cals


def write_edf(recording: Recording, record_duration: float | None = None) -> bytes:
    ns = len(recording.channel_labels)
    if ns == 0:
        raise ValueError("cannot write an EDF file without channels")
    duration = record_duration or recording.record_duration or 1.0
    spr = recording.sample_rate * duration
    if abs(spr - round(spr)) > 1e-9:
        raise ValueError(f"{recording.sample_rate} Hz does not give whole samples per {duration} s record")
    spr = int(round(spr))
    if recording.n_samples % spr:
        raise ValueError(f"{recording.n_samples} samples do not fill whole {spr}-sample records")
    n_records = recording.n_samples // spr
    calibration = recording.calibration or default_calibration(recording.data)
    digital = to_digital(recording, calibration)

    header = bytearray()
    header += _fmt("0", 8)
    header += _fmt("X X X X", 80)
    header += _fmt("Startdate X X X X", 80)
    header += _fmt("01.01.00", 8)
    header += _fmt("00.00.00", 8)
    header += _fmt(FIXED_HEADER + SIGNAL_HEADER * ns, 8)
    header += _fmt("", 44)
    header += _fmt(n_records, 8)
    header += _fmt(float(duration), 8)
    header += _fmt(ns, 4)
    columns = {
        "label": [label for label in recording.channel_labels],
        "transducer": [""] * ns,
        "phys_dim": ["uV"] * ns,
        "phys_min": [c.phys_min for c in calibration],
        "phys_max": [c.phys_max for c in calibration],
        "dig_min": [c.dig_min for c in calibration],
        "dig_max": [c.dig_max for c in calibration],
        "prefilter": [""] * ns,
        "samples_per_record": [spr] * ns,
        "reserved": [""] * ns,
    }
    for name, width in _SIGNAL_FIELDS:
        for value in columns[name]:
            header += _fmt(value, width)

    body = digital.reshape(ns, n_records, spr).transpose(1, 0, 2).astype("<i2")
    return bytes(header) + body.tobytes()


def digital_samples(data: bytes) -> np.ndarray:
    """Raw integer samples (channels x samples) without physical conversion."""
    rec = parse_edf(data)
    return to_digital(rec, rec.calibration)
