"""Battery-cycle records: CSV ingestion, synthetic fade series, per-battery partitioning.

The CSV dialect is comma separated with a mandatory header, ``.`` as the
decimal point, UTF-8, and LF or CRLF line endings. Column order is fixed::

    Cycle,Time Measured(Sec),Voltage Measured(V),Current Measured,Temperature Measured,Capacity(Ah),SampleId

Synthetic series draw from numpy's PCG64 bit generator seeded directly with the
integer seed, so fixtures are reproducible from ``(FadeModel, n_cycles)`` alone.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from battrul.errors import (
    DuplicateRecordError,
    EmptyInputError,
    ParseError,
    SchemaError,
    UnknownBatteryError,
)

CSV_HEADER = (
    "Cycle",
    "Time Measured(Sec)",
    "Voltage Measured(V)",
    "Current Measured",
    "Temperature Measured",
    "Capacity(Ah)",
    "SampleId",
)

# synthetic channel constants, inside the value ranges of the NASA B00xx cells
NOMINAL_VOLTAGE_V = 3.2
NOMINAL_CURRENT_A = -2.0
NOMINAL_TEMP_C = 35.0
VOLTAGE_JITTER_V = 0.02
CURRENT_JITTER_A = 0.005
TEMP_JITTER_C = 0.5
TIME_JITTER_S = 5.0
MIN_CAPACITY_AH = 1e-6


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    time_s: float
    voltage_v: float
    current_a: float
    temp_c: float
    capacity_ah: float
    battery_id: str

    def __post_init__(self):
        if self.cycle < 0:
            raise ValueError(f"cycle must be >= 0, got {self.cycle}")
        for name in ("time_s", "voltage_v", "current_a", "temp_c", "capacity_ah"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)}")
        if self.time_s <= 0:
            raise ValueError(f"time_s must be > 0, got {self.time_s}")
        if self.capacity_ah <= 0:
            raise ValueError(f"capacity_ah must be > 0, got {self.capacity_ah}")


@dataclass(frozen=True)
class BatteryDataset:
    """Records grouped by battery (first-appearance order), cycle-ascending within each group."""

    records: tuple[CycleRecord, ...]
    source: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen: dict[str, int] = {}
        current = None
        for rec in self.records:
            if rec.battery_id != current:
                if rec.battery_id in seen:
                    raise ValueError(f"records of battery {rec.battery_id} are not contiguous")
                current = rec.battery_id
            elif rec.cycle <= seen[rec.battery_id]:
                raise ValueError(f"battery {rec.battery_id}: cycles not strictly increasing at {rec.cycle}")
            seen[rec.battery_id] = rec.cycle

    def __len__(self):
        return len(self.records)

    @property
    def battery_ids(self) -> list[str]:
        return list(dict.fromkeys(r.battery_id for r in self.records))

    def groups(self) -> dict[str, list[CycleRecord]]:
        out: dict[str, list[CycleRecord]] = {}
        for r in self.records:
            out.setdefault(r.battery_id, []).append(r)
        return out

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([r.cycle, repr(r.time_s), repr(r.voltage_v), repr(r.current_a),
                        repr(r.temp_c), repr(r.capacity_ah), r.battery_id])
        return buf.getvalue()


def _group(records: Iterable[CycleRecord], source: str) -> BatteryDataset:
    by_id: dict[str, list[CycleRecord]] = {}
    for r in records:
        by_id.setdefault(r.battery_id, []).append(r)
    ordered = []
    for bid, recs in by_id.items():
        recs.sort(key=lambda r: r.cycle)
        for a, b in zip(recs, recs[1:]):
            if a.cycle == b.cycle:
                raise DuplicateRecordError(f"duplicate record for battery {bid}, cycle {a.cycle}")
        ordered.extend(recs)
    return BatteryDataset(tuple(ordered), source)


def parse_battery_csv(text: bytes | str, source: str = "<memory>") -> BatteryDataset:
    """Parse a battery-cycle CSV document.

    Raises ``SchemaError`` when the header deviates from ``CSV_HEADER``,
    ``ParseError`` (with 1-based data row and column name) for bad cells,
    ``EmptyInputError`` when there are no data rows and ``DuplicateRecordError``
    for repeated (battery, cycle) pairs.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc}") from exc
    elif text.startswith("\ufeff"):
        text = text[1:]
    rows = [row for row in csv.reader(io.StringIO(text, newline="")) if any(c.strip() for c in row)]
    if not rows:
        raise EmptyInputError("empty input: no header row")
    header = [c.strip() for c in rows[0]]
    for i, expected in enumerate(CSV_HEADER):
        if i >= len(header):
            raise SchemaError(f"missing column {expected!r} at position {i}", column=expected)
        if header[i] != expected:
            raise SchemaError(f"expected column {expected!r} at position {i}, found {header[i]!r}", column=expected)
    if len(header) > len(CSV_HEADER):
        raise SchemaError(f"unexpected extra column {header[len(CSV_HEADER)]!r}", column=header[len(CSV_HEADER)])
    if len(rows) == 1:
        raise EmptyInputError("empty input: header present but no data rows")

    records = []
    for lineno, row in enumerate(rows[1:], start=1):
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"row {lineno}: expected {len(CSV_HEADER)} cells, found {len(row)}", row=lineno)
        cells = [c.strip() for c in row]
        values = []
        for col, cell in zip(CSV_HEADER[:6], cells[:6]):
            try:
                values.append(int(cell) if col == "Cycle" else float(cell))
            except ValueError:
                raise ParseError(f"row {lineno}, column {col!r}: cannot parse {cell!r}", row=lineno, column=col) from None
        if not cells[6]:
            raise ParseError(f"row {lineno}, column 'SampleId': empty battery id", row=lineno, column="SampleId")
        try:
            records.append(CycleRecord(*values, battery_id=cells[6]))
        except ValueError as exc:
            raise ParseError(f"row {lineno}: {exc}", row=lineno) from None
    return _group(records, source)


def read_battery_csv(path: str | os.PathLike) -> BatteryDataset:
    with open(path, "rb") as fh:
        return parse_battery_csv(fh.read(), source=os.fspath(path))


@dataclass(frozen=True)
class FadeModel:
    c0_ah: float = 2.0
    rate: float = 0.004
    noise_sigma: float = 0.0
    shape: Literal["linear", "exponential"] = "linear"
    seed: int = 0

    def __post_init__(self):
        if not self.c0_ah > 0:
            raise ValueError("c0_ah must be > 0")
        if not 0 <= self.rate < 1:
            raise ValueError("rate must lie in [0, 1)")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.shape not in ("linear", "exponential"):
            raise ValueError(f"unknown fade shape {self.shape!r}")

    def capacity(self, k: np.ndarray) -> np.ndarray:
        """Noise-free capacity at cycle index ``k``."""
        k = np.asarray(k, dtype=np.float64)
        if self.shape == "linear":
            return self.c0_ah * (1.0 - self.rate * k)
        return self.c0_ah * (1.0 - self.rate) ** k


def synthesize_fade_series(model: FadeModel, n_cycles: int, battery_id: str = "SYN01") -> BatteryDataset:
    if isinstance(n_cycles, bool) or int(n_cycles) != n_cycles or n_cycles < 1:
        raise ValueError(f"n_cycles must be a positive integer, got {n_cycles!r}")
    n = int(n_cycles)
    rng = np.random.Generator(np.random.PCG64(model.seed))
    # fixed draw order keeps the auxiliary channels independent of noise_sigma
    cap_noise = rng.standard_normal(n)
    v_jit = rng.standard_normal(n)
    i_jit = rng.standard_normal(n)
    t_jit = rng.standard_normal(n)
    time_jit = rng.standard_normal(n)

    k = np.arange(n)
    capacity = model.capacity(k)
    if model.noise_sigma > 0:
        capacity = capacity + model.noise_sigma * cap_noise
    capacity = np.maximum(capacity, MIN_CAPACITY_AH)
    voltage = NOMINAL_VOLTAGE_V + VOLTAGE_JITTER_V * v_jit
    current = NOMINAL_CURRENT_A + CURRENT_JITTER_A * i_jit
    temp = NOMINAL_TEMP_C + TEMP_JITTER_C * t_jit
    # constant-current discharge: duration tracks delivered charge
    time_s = np.maximum(3600.0 * capacity / np.abs(current) + TIME_JITTER_S * time_jit, 1.0)

    records = tuple(
        CycleRecord(int(k[i]), float(time_s[i]), float(voltage[i]), float(current[i]),
                    float(temp[i]), float(capacity[i]), battery_id)
        for i in range(n)
    )
    return BatteryDataset(records, source="synthetic")


def concat(*datasets: BatteryDataset, source: str | None = None) -> BatteryDataset:
    recs = [r for ds in datasets for r in ds.records]
    return _group(recs, source or "+".join(ds.source for ds in datasets))


def partition_by_battery(ds: BatteryDataset, ids: Iterable[str]) -> tuple[BatteryDataset, BatteryDataset]:
    ids = set(ids)
    present = set(ds.battery_ids)
    missing = ids - present
    if missing:
        raise UnknownBatteryError(missing, present)
    selected = tuple(r for r in ds.records if r.battery_id in ids)
    rest = tuple(r for r in ds.records if r.battery_id not in ids)
    return BatteryDataset(selected, ds.source), BatteryDataset(rest, ds.source)
