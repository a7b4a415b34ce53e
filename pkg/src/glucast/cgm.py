"""CGM data handling: grid alignment, inclusion rules, windows, splits.

Readings live on a fixed 5-minute grid (288 slots per day).  A series
always spans whole UTC days: slot i sits at start_time + i * 5 min and
day boundaries fall at midnight UTC.  Missing readings are NaN slots.

Inclusion mirrors the availability rule the cohort was screened with:
days with at most 70% of their 288 readings are masked out, and a
patient whose remaining period availability is at most 70% is rejected
outright.

Windows of k consecutive slots feed the forecasters.  Training windows
must be fully present.  Test windows tolerate gaps as long as the most
recent slot is present and at most 4 of the final 12 slots (the last
hour) are missing; surviving gaps are linearly interpolated, with a
leading gap back-filled from the first present value.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

logger = logging.getLogger(__name__)

SLOTS_PER_DAY = 288
SLOT_SECONDS = 300

CSV_HEADER = ["patient_id", "timestamp", "glucose_mmol_l"]

# Inclusion thresholds: strictly more than 70% of readings must be
# present, per day and per period.
AVAILABILITY_THRESHOLD = 0.7

DAY_REJECT_CODE = "DAY_BELOW_70PCT"
PERIOD_REJECT_CODE = "PERIOD_BELOW_70PCT"


class IngestError(Exception):
    """Raised when an input file violates the CSV contract."""


@dataclass
class GlucoseSeries:
    """One patient's grid-aligned glucose values; NaN marks missing slots.

    standardized=False means raw mmol/L (present values must be strictly
    positive); True means z-scores, where that check does not apply.
    """

    patient_id: str
    start_time: datetime
    values: np.ndarray
    standardized: bool = False

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.start_time.tzinfo is None:
            raise ValueError("start_time must be timezone-aware (UTC)")
        epoch = self.start_time.timestamp()
        if epoch % SLOT_SECONDS != 0:
            raise ValueError("start_time must sit on a 5-minute boundary")
        if not self.standardized:
            present = self.values[np.isfinite(self.values)]
            if present.size and np.any(present <= 0.0):
                raise ValueError("present glucose values must be strictly positive")

    @property
    def mask(self) -> np.ndarray:
        """True where a reading is present."""
        return np.isfinite(self.values)

    @property
    def n_days(self) -> int:
        return len(self.values) // SLOTS_PER_DAY

    def slot_time(self, index: int) -> datetime:
        return datetime.fromtimestamp(
            self.start_time.timestamp() + index * SLOT_SECONDS, tz=timezone.utc
        )

    def replace_values(self, values: np.ndarray) -> "GlucoseSeries":
        return GlucoseSeries(self.patient_id, self.start_time, values, self.standardized)


@dataclass(frozen=True)
class StandardizationParams:
    """Affine map derived from training data only: z = (x - mean) / std."""

    mean: float
    std: float

    def __post_init__(self) -> None:
        if not self.std > 0.0:
            raise ValueError("std must be strictly positive")


@dataclass
class HistoryWindow:
    """k consecutive standardized values ending just before origin_index.

    values are post-interpolation (test mode); mask keeps the
    pre-interpolation present/missing flags.  origin_index is the grid
    slot immediately after the window, i.e. the first forecast target.
    """

    values: np.ndarray
    mask: np.ndarray
    origin_index: int
    patient_id: str


@dataclass
class DataPartition:
    population_train: list[str]
    heldout: list[str]


def parse_rfc3339(text: str) -> datetime:
    """RFC 3339 timestamp to an aware UTC datetime ('Z' suffix included)."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} lacks a UTC offset")
    return dt.astimezone(timezone.utc)


def _snap_slot(dt: datetime) -> int:
    """Global 5-minute slot index, nearest slot, ties toward the earlier one."""
    seconds = dt.timestamp()
    q, rem = divmod(seconds, SLOT_SECONDS)
    slot = int(q)
    if rem > SLOT_SECONDS / 2:
        slot += 1
    return slot


def ingest_csv(source) -> list[GlucoseSeries]:
    """Parse the reading CSV into per-patient grid-aligned series.

    source is a binary or text stream (or a path).  Rows are grouped by
    patient, snapped to the nearest 5-minute slot, and duplicate
    readings in one slot are averaged.  Each series is padded to whole
    UTC days around its readings.  A malformed row aborts the whole
    file; a non-positive glucose value only drops that row (logged).
    """
    if isinstance(source, (str, bytes)):
        with open(source, "rb") as fh:
            return ingest_csv(fh)
    if isinstance(source, io.TextIOBase):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8")
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: missing header") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise IngestError(f"bad header {header!r}, expected {CSV_HEADER!r}")

    per_patient: dict[str, dict[int, list[float]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise IngestError(f"row {row_no}: expected 3 columns, got {len(row)}")
        pid, ts_text, glucose_text = (cell.strip() for cell in row)
        if not pid:
            raise IngestError(f"row {row_no}: empty patient_id")
        try:
            ts = parse_rfc3339(ts_text)
        except ValueError as exc:
            raise IngestError(f"row {row_no}: bad timestamp {ts_text!r} ({exc})") from None
        try:
            glucose = float(glucose_text)
        except ValueError:
            raise IngestError(f"row {row_no}: bad glucose {glucose_text!r}") from None
        if not np.isfinite(glucose):
            raise IngestError(f"row {row_no}: non-finite glucose {glucose_text!r}")
        if glucose <= 0.0:
            logger.warning("row %d: non-positive glucose %s rejected", row_no, glucose_text)
            continue
        per_patient.setdefault(pid, {}).setdefault(_snap_slot(ts), []).append(glucose)

    series = []
    for pid in sorted(per_patient):
        slots = per_patient[pid]
        first_day = min(slots) // SLOTS_PER_DAY
        last_day = max(slots) // SLOTS_PER_DAY
        offset = first_day * SLOTS_PER_DAY
        values = np.full((last_day - first_day + 1) * SLOTS_PER_DAY, np.nan)
        for slot, readings in slots.items():
            values[slot - offset] = sum(readings) / len(readings)
        start = datetime.fromtimestamp(offset * SLOT_SECONDS, tz=timezone.utc)
        series.append(GlucoseSeries(patient_id=pid, start_time=start, values=values))
    return series


def apply_inclusion(series: GlucoseSeries) -> tuple[GlucoseSeries | None, list[str]]:
    """Enforce the 70% availability rules.

    Days at or below 70% availability are masked to all-missing (the
    grid must stay aligned, so slots are never removed).  If the
    remaining period availability is at or below 70%, the whole series
    is rejected and None is returned.  The second element lists one
    report line per dropped day / rejected period.
    """
    if len(series.values) % SLOTS_PER_DAY != 0:
        raise ValueError("series must span whole days")
    values = series.values.copy()
    report: list[str] = []
    n_days = series.n_days
    for day in range(n_days):
        sl = slice(day * SLOTS_PER_DAY, (day + 1) * SLOTS_PER_DAY)
        present = int(np.isfinite(values[sl]).sum())
        if present <= AVAILABILITY_THRESHOLD * SLOTS_PER_DAY:
            values[sl] = np.nan
            report.append(f"{series.patient_id} day {day}: {DAY_REJECT_CODE}")
    total_present = int(np.isfinite(values).sum())
    if total_present <= AVAILABILITY_THRESHOLD * len(values):
        report.append(f"{series.patient_id} period: {PERIOD_REJECT_CODE}")
        return None, report
    return series.replace_values(values), report


def fit_standardizer(training: list[GlucoseSeries]) -> StandardizationParams:
    """Mean and population standard deviation of all present training values."""
    chunks = [s.values[s.mask] for s in training]
    present = np.concatenate(chunks) if chunks else np.empty(0)
    if present.size < 2:
        raise ValueError("standardizer needs at least 2 present values")
    mean = float(present.mean())
    std = float(np.sqrt(np.mean((present - mean) ** 2)))
    if std == 0.0:
        raise ValueError("zero variance: cannot standardize a constant series")
    return StandardizationParams(mean=mean, std=std)


def standardize(series: GlucoseSeries, params: StandardizationParams) -> GlucoseSeries:
    """Apply (x - mean)/std to present slots; missing slots stay missing."""
    return GlucoseSeries(
        patient_id=series.patient_id,
        start_time=series.start_time,
        values=(series.values - params.mean) / params.std,
        standardized=True,
    )


def destandardize(values, params: StandardizationParams):
    """Invert `standardize` on a value or array."""
    return np.asarray(values) * params.std + params.mean


def interpolate_gaps(values: np.ndarray) -> np.ndarray:
    """Fill NaN gaps linearly between present neighbors.

    A leading gap back-fills from the first present value, a trailing
    gap carries the last present value forward.  At least one present
    value is required.
    """
    mask = np.isfinite(values)
    if not mask.any():
        raise ValueError("cannot interpolate an all-missing sequence")
    if mask.all():
        return values.copy()
    idx = np.arange(len(values))
    return np.interp(idx, idx[mask], values[mask])


def extract_windows(
    series: GlucoseSeries, k: int, step: int, mode: str
) -> list[HistoryWindow]:
    """Slide a k-slot window over the series and keep the valid ones.

    Train mode keeps only fully present windows.  Test mode keeps
    windows whose most recent slot is present with at most 4 missing
    among the last 12 slots, then interpolates the surviving gaps.
    Origins run from k to len(series)-1 in `step` strides, so every
    window has a grid slot to predict.
    """
    if k < 1 or step < 1:
        raise ValueError("k and step must be positive")
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    n = len(series.values)
    mask = series.mask
    windows = []
    for start in range(0, n - k, step):
        origin = start + k
        wmask = mask[start:origin]
        if mode == "train":
            if not wmask.all():
                continue
            vals = series.values[start:origin].copy()
        else:
            if not wmask[-1]:
                continue
            last_hour = wmask[-min(12, k):]
            if (~last_hour).sum() > 4:
                continue
            vals = interpolate_gaps(series.values[start:origin])
        windows.append(
            HistoryWindow(
                values=vals,
                mask=wmask.copy(),
                origin_index=origin,
                patient_id=series.patient_id,
            )
        )
    return windows


def partition_population(patients: list[str], seed: int) -> DataPartition:
    """Deterministic 35:15-ratio split of patient ids.

    The heldout count is the 30% share rounded to nearest (half up), at
    least 1 and at most len-1.
    """
    ids = sorted(patients)
    n = len(ids)
    if n < 2:
        raise ValueError("partition needs at least 2 patients")
    n_heldout = int(np.floor(n * 15.0 / 50.0 + 0.5))
    n_heldout = min(max(n_heldout, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    heldout = sorted(ids[i] for i in order[:n_heldout])
    train = sorted(ids[i] for i in order[n_heldout:])
    return DataPartition(population_train=train, heldout=heldout)


def split_patient_period(
    series: GlucoseSeries, train_days: int
) -> tuple[GlucoseSeries, GlucoseSeries]:
    """Cut the final 7 days as test and the preceding train_days as train."""
    if train_days not in (1, 3, 7):
        raise ValueError("train_days must be 1, 3 or 7")
    n_days = series.n_days
    if n_days < 14:
        raise ValueError(f"need a 14-day span, got {n_days} days")
    test_start_day = n_days - 7
    train_start_day = test_start_day - train_days
    def cut(day_lo: int, day_hi: int) -> GlucoseSeries:
        sl = slice(day_lo * SLOTS_PER_DAY, day_hi * SLOTS_PER_DAY)
        start = series.slot_time(day_lo * SLOTS_PER_DAY)
        return GlucoseSeries(
            series.patient_id, start, series.values[sl].copy(), series.standardized
        )

    return cut(train_start_day, test_start_day), cut(test_start_day, n_days)


def series_to_csv_rows(series: GlucoseSeries):
    """Yield CSV rows (patient_id, RFC 3339 timestamp, glucose) for present slots."""
    for i in np.flatnonzero(series.mask):
        ts = series.slot_time(int(i)).strftime("%Y-%m-%dT%H:%M:%SZ")
        yield series.patient_id, ts, repr(float(series.values[i]))


def write_cohort_csv(series_list: list[GlucoseSeries], path: str) -> None:
    """Write a cohort in the ingest CSV contract (deterministic order)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for series in sorted(series_list, key=lambda s: s.patient_id):
            for row in series_to_csv_rows(series):
                writer.writerow(row)
