"""Univariate labeled time series: loading, min-max scaling, sliding-window
segmentation, chronological splitting, and synthetic data generation.

Labels are per-point integers: -1 unknown, 0 normal, 1 anomaly. A window
inherits the label of its last point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

LABEL_UNKNOWN = -1
LABEL_NORMAL = 0
LABEL_ANOMALY = 1

SOURCE_NONE = "none"
SOURCE_HUMAN = "human"
SOURCE_PSEUDO = "pseudo"

# column layouts for the two supported CSV dialects
_FORMATS = {
    "yahoo": ("timestamp", "value", "is_anomaly"),
    "kpi": ("timestamp", "value", "label"),
}


class ParseError(ValueError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(ValueError):
    """Loaded or constructed data violates a series invariant."""


@dataclass(frozen=True)
class TimeSeries:
    """Timestamped univariate values with per-point labels in {-1, 0, 1}."""

    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if not (ts.shape == vals.shape == labs.shape) or ts.ndim != 1:
            raise IntegrityError("timestamps, values and labels must be 1-d and equally long")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise IntegrityError("timestamps must be strictly increasing")
        if not np.isfinite(vals).all():
            raise IntegrityError("values must be finite")
        if not np.isin(labs, (-1, 0, 1)).all():
            raise IntegrityError("labels must be in {-1, 0, 1}")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ScalerParams:
    """Per-series min/max used by the [0,1] scaler."""

    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise IntegrityError("scaler bounds must be finite")
        if self.max < self.min:
            raise IntegrityError("scaler max must be >= min")

    def transform(self, values: np.ndarray, clamp: bool = False) -> np.ndarray:
        span = self.max - self.min
        if span == 0.0:
            out = np.zeros_like(np.asarray(values, dtype=np.float64))
        else:
            out = (np.asarray(values, dtype=np.float64) - self.min) / span
        if clamp:
            out = np.clip(out, 0.0, 1.0)
        return out


@dataclass(frozen=True)
class WindowState:
    """A fixed-length window of scaled values; the unit the agent classifies.

    The window is labeled by its last raw point (``end_index``). When
    ``label_source`` is ``"none"`` the label must be -1; otherwise it is the
    0/1 label assigned to that point.
    """

    values: np.ndarray
    end_index: int
    label: int
    label_source: str = SOURCE_NONE

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or len(vals) == 0:
            raise IntegrityError("window values must be a non-empty 1-d array")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise IntegrityError("window values must lie in [0, 1]")
        if self.label_source not in (SOURCE_NONE, SOURCE_HUMAN, SOURCE_PSEUDO):
            raise IntegrityError(f"unknown label source {self.label_source!r}")
        if self.label_source == SOURCE_NONE:
            if self.label != LABEL_UNKNOWN:
                raise IntegrityError("unlabeled window must carry label -1")
        elif self.label not in (0, 1):
            raise IntegrityError("labeled window must carry a 0/1 label")
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return len(self.values)


def load_series(path, format: str = "yahoo") -> TimeSeries:
    """Load a (timestamp, value, label) CSV into a TimeSeries.

    ``yahoo`` expects columns ``timestamp,value,is_anomaly``; ``kpi`` expects
    ``timestamp,value,label`` (extra columns such as ``KPI ID`` are ignored).
    A header row is optional; when present, columns are located by name.
    Rows are sorted by timestamp; duplicate timestamps are an integrity error.
    """
    if format not in _FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {sorted(_FORMATS)}")
    ts_col, val_col, lab_col = _FORMATS[format]

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        col_idx = {ts_col: 0, val_col: 1, lab_col: 2}
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                header = [cell.strip().lower() for cell in row]
                try:
                    col_idx = {c: header.index(c) for c in (ts_col, val_col, lab_col)}
                except ValueError as exc:
                    raise ParseError(f"missing column for format {format!r}: {exc}", line=1)
                continue
            try:
                ts = _parse_int(row[col_idx[ts_col]])
                val = float(row[col_idx[val_col]])
                raw_label = row[col_idx[lab_col]].strip()
                label = LABEL_UNKNOWN if raw_label == "" else _parse_int(raw_label)
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno)
            if label not in (-1, 0, 1):
                raise ParseError(f"label {label} not in {{-1, 0, 1}}", line=lineno)
            rows.append((ts, val, label))

    if not rows:
        raise ParseError(f"no data rows in {path}")
    rows.sort(key=lambda r: r[0])
    ts, vals, labs = (np.array(col) for col in zip(*rows))
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        raise IntegrityError(f"duplicate timestamps in {path}")
    import os

    return TimeSeries(ts, vals, labs, name=os.path.basename(str(path)))


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _parse_int(cell: str) -> int:
    value = float(cell)
    if value != int(value):
        raise ValueError(f"expected integer, got {cell!r}")
    return int(value)


def scale_minmax(series: TimeSeries) -> tuple[TimeSeries, ScalerParams]:
    """Scale values to [0,1] via (v - min) / (max - min).

    A constant series maps to all zeros (its scaler has min == max).
    """
    if len(series) == 0:
        raise ValueError("cannot scale an empty series")
    params = ScalerParams(float(series.values.min()), float(series.values.max()))
    scaled = params.transform(series.values)
    return (
        TimeSeries(series.timestamps, scaled, series.labels, name=series.name),
        params,
    )


def apply_scaler(series: TimeSeries, params: ScalerParams, clamp: bool = True) -> TimeSeries:
    """Scale a series with previously fitted params, clamping to [0,1] by default.

    Used to carry training-split scaler params onto held-out data.
    """
    scaled = params.transform(series.values, clamp=clamp)
    return TimeSeries(series.timestamps, scaled, series.labels, name=series.name)


def segment(series: TimeSeries, window_size: int) -> list[WindowState]:
    """Cut a scaled series into n - window_size + 1 stride-1 windows.

    Window k covers raw indices [k, k + window_size - 1] and takes the label
    of its last point (source ``human`` when that label is 0/1, ``none`` when
    it is -1).
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    n = len(series)
    if n < window_size:
        raise ValueError(f"series of length {n} is shorter than window_size {window_size}")
    if series.values.min() < 0.0 or series.values.max() > 1.0:
        raise ValueError("segment expects an already scaled series (values in [0,1])")

    mat = np.lib.stride_tricks.sliding_window_view(series.values, window_size)
    windows = []
    for k in range(n - window_size + 1):
        end = k + window_size - 1
        label = int(series.labels[end])
        source = SOURCE_NONE if label == LABEL_UNKNOWN else SOURCE_HUMAN
        windows.append(
            WindowState(mat[k].copy(), end_index=end, label=label, label_source=source)
        )
    return windows


def stack_windows(windows) -> np.ndarray:
    """Stack window values into an (n_windows, window_size) matrix."""
    return np.stack([w.values for w in windows])


def split_train_test(series: TimeSeries, ratio: float) -> tuple[TimeSeries, TimeSeries]:
    """Chronological split at floor(n * ratio); no shuffling."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    n = len(series)
    if n < 2:
        raise ValueError("need at least 2 points to split")
    k = int(math.floor(n * ratio))
    if k < 1 or n - k < 1:
        raise ValueError(f"split of {n} points at ratio {ratio} leaves an empty part")
    head = TimeSeries(series.timestamps[:k], series.values[:k], series.labels[:k], name=series.name)
    tail = TimeSeries(series.timestamps[k:], series.values[k:], series.labels[k:], name=series.name)
    return head, tail


def gen_synthetic(
    n: int,
    anomaly_rate: float,
    kind: str = "spike",
    seed: int = 0,
    period: int = 50,
    noise_sigma: float = 0.05,
) -> TimeSeries:
    """Generate a labeled sinusoid-plus-noise series with injected anomalies.

    Exactly ceil(n * anomaly_rate) points are perturbed by at least 8x the
    noise standard deviation and labeled 1; all other points are labeled 0.
    ``spike`` injects isolated single-point outliers, ``level_shift`` shifts
    contiguous runs. Deterministic for a fixed seed.
    """
    if n < 100:
        raise ValueError("n must be >= 100")
    if not 0.0 < anomaly_rate < 0.1:
        raise ValueError("anomaly_rate must be in (0, 0.1)")
    if kind not in ("spike", "level_shift"):
        raise ValueError(f"unknown kind {kind!r}")

    rng = np.random.default_rng(seed)
    t = np.arange(n)
    base = np.sin(2.0 * np.pi * t / period)
    values = base + rng.normal(0.0, noise_sigma, n)
    labels = np.zeros(n, dtype=np.int64)
    m = int(math.ceil(n * anomaly_rate))
    # anomalies leave the normal envelope (amplitude + 3 sigma of noise) by
    # at least 8 sigma, the single-outlier regime this generator stands in for
    envelope = 1.0 + 3.0 * noise_sigma

    if kind == "spike":
        idx = _pick_separated(rng, n, m, min_gap=5)
        signs = rng.choice((-1.0, 1.0), size=m)
        gaps = np.where(signs > 0, envelope - base[idx], envelope + base[idx])
        magnitudes = gaps + (8.0 + 4.0 * rng.random(m)) * noise_sigma
        values[idx] += signs * magnitudes
        labels[idx] = 1
    else:
        blocks = _pick_blocks(rng, n, m, min_gap=50)
        for start, length in blocks:
            sign = float(rng.choice((-1.0, 1.0)))
            shift = sign * (envelope + 1.0 + (8.0 + 4.0 * rng.random()) * noise_sigma)
            values[start : start + length] += shift
            labels[start : start + length] = 1

    return TimeSeries(t + 1, values, labels, name=f"synthetic-{kind}-{seed}")


def _pick_separated(rng: np.random.Generator, n: int, m: int, min_gap: int) -> np.ndarray:
    """Greedily pick m indices pairwise at least min_gap apart."""
    chosen: list[int] = []
    for cand in rng.permutation(n):
        if all(abs(int(cand) - c) >= min_gap for c in chosen):
            chosen.append(int(cand))
            if len(chosen) == m:
                break
    if len(chosen) < m:
        raise ValueError(f"cannot place {m} anomalies with gap {min_gap} in {n} points")
    return np.sort(np.array(chosen))


def _pick_blocks(rng: np.random.Generator, n: int, m: int, min_gap: int) -> list[tuple[int, int]]:
    """Split m anomalous points into contiguous blocks placed without overlap."""
    n_blocks = max(1, m // 20)
    base, extra = divmod(m, n_blocks)
    lengths = [base + (1 if b < extra else 0) for b in range(n_blocks)]
    placed: list[tuple[int, int]] = []
    for length in lengths:
        for _ in range(10_000):
            start = int(rng.integers(0, n - length + 1))
            if all(
                start + length + min_gap <= s or s + ln + min_gap <= start
                for s, ln in placed
            ):
                placed.append((start, length))
                break
        else:
            raise ValueError("could not place anomaly blocks; series too short for rate")
    return sorted(placed)
