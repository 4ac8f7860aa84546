"""Multivariate time-series data model: ingestion, resampling, windowing,
and delay-coordinate embedding.

A :class:`TimeSeries` stores an (N, k) value matrix on a regular grid with
step ``dt`` seconds.  CSV ingestion accepts irregular timestamps; such a
series carries its raw timestamps and is flagged ``regular=False`` until it
has been passed through :func:`resample`.  All values are immutable after
construction; no operation mutates shared state.
"""

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import DataError

# Relative tolerance used to decide whether raw timestamps form a regular grid.
_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class TimeSeries:
    """Regularly sampled k-channel real-valued series.

    Parameters
    ----------
    values : ndarray, shape (N, k)
        One row per sample, one column per channel.  NaNs are rejected.
    dt : float
        Seconds per sample (median spacing while the series is irregular).
    t0 : float
        Epoch offset of the first sample, in seconds.
    channel_names : tuple of str
        One label per channel; generated as ``ch0, ch1, ...`` when omitted.
    regular : bool
        False only for freshly ingested series with uneven spacing.
    timestamps : ndarray or None
        Absolute sample times in seconds; present exactly when irregular.
    """

    values: np.ndarray
    dt: float
    t0: float = 0.0
    channel_names: tuple = ()
    regular: bool = True
    timestamps: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError("values must be a non-empty N x k matrix")
        if not np.isfinite(values).all():
            raise DataError("values contain NaN or infinite entries")
        if not self.dt > 0:
            raise DataError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", values)
        names = tuple(self.channel_names) or tuple(
            f"ch{i}" for i in range(values.shape[1])
        )
        if len(names) != values.shape[1]:
            raise DataError(
                f"{len(names)} channel names for {values.shape[1]} channels"
            )
        object.__setattr__(self, "channel_names", names)
        if self.regular:
            if self.timestamps is not None:
                raise DataError("regular series must not carry raw timestamps")
        else:
            ts = np.asarray(self.timestamps, dtype=float)
            if ts.shape != (values.shape[0],):
                raise DataError("timestamps must have one entry per sample")
            object.__setattr__(self, "timestamps", ts)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def times(self) -> np.ndarray:
        """Absolute sample times in seconds."""
        if self.timestamps is not None:
            return self.timestamps.copy()
        return self.t0 + np.arange(self.n) * self.dt


@dataclass(frozen=True)
class DelayEmbedding:
    """Delay-coordinate view of a series: row n is (y_n, y_{n+1}, ..., y_{n+q}).

    ``points`` has N - q rows in a k(q+1)-dimensional space; each row is the
    bit-exact horizontal concatenation of q+1 consecutive source rows.
    """

    source: TimeSeries
    q: int
    points: np.ndarray

    def __post_init__(self):
        expected = (self.source.n - self.q, self.source.k * (self.q + 1))
        if self.points.shape != expected:
            raise DataError(
                f"points shape {self.points.shape} does not match {expected}"
            )

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _parse_timestamp(text, line_no):
    try:
        return float(text)
    except ValueError:
        pass
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(raw)
    except ValueError:
        raise DataError(
            f"line {line_no}: timestamp {text!r} is neither seconds nor ISO-8601"
        ) from None
    if parsed.tzinfo is None:
        # naive ISO timestamps are taken as UTC; no other timezone arithmetic
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.timestamp()


def load_csv(path, timestamp="time", channels=None) -> TimeSeries:
    """Read a CSV file with a header row into a :class:`TimeSeries`.

    Parameters
    ----------
    path : str or Path
        CSV file with a header naming every column.
    timestamp : str
        Name of the timestamp column.  Entries may be seconds (integer or
        decimal) or ISO-8601; stored internally as seconds.
    channels : sequence of str, optional
        Value columns to keep, in the given order.  Defaults to every
        non-timestamp column.

    Raises
    ------
    DataError
        Missing columns, empty channel selection, malformed numeric cells
        (reported with line numbers), or non-increasing timestamps.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if timestamp not in header:
        raise DataError(f"{path}: no timestamp column named {timestamp!r}")
    if channels is None:
        channels = [c for c in header if c != timestamp]
    else:
        channels = list(channels)
        missing = [c for c in channels if c not in header]
        if missing:
            raise DataError(f"{path}: unknown channel columns {missing}")
    if not channels:
        raise DataError(f"{path}: empty channel selection")

    t_idx = header.index(timestamp)
    c_idx = [header.index(c) for c in channels]
    times, rows, bad = [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            bad.append(f"line {line_no}: expected {len(header)} cells, got {len(cells)}")
            continue
        times.append(_parse_timestamp(cells[t_idx], line_no))
        row = np.empty(len(c_idx))
        for j, (col, name) in enumerate(zip(c_idx, channels)):
            try:
                row[j] = float(cells[col])
            except ValueError:
                bad.append(f"line {line_no}: column {name!r} value {cells[col]!r}")
        rows.append(row)
    if bad:
        shown = "; ".join(bad[:10])
        more = f" (+{len(bad) - 10} more)" if len(bad) > 10 else ""
        raise DataError(f"{path}: malformed rows: {shown}{more}")
    if not rows:
        raise DataError(f"{path}: no data rows")

    times = np.asarray(times)
    values = np.asarray(rows)
    steps = np.diff(times)
    if len(steps) and not (steps > 0).all():
        first = int(np.argmin(steps > 0))
        raise DataError(
            f"{path}: timestamps not strictly increasing at line {first + 3}"
        )
    if len(steps) == 0:
        return TimeSeries(values, dt=1.0, t0=float(times[0]),
                          channel_names=tuple(channels))
    dt = float(np.median(steps))
    regular = bool(np.abs(steps - dt).max() <= _GRID_RTOL * dt)
    if regular:
        return TimeSeries(values, dt=dt, t0=float(times[0]),
                          channel_names=tuple(channels))
    return TimeSeries(values, dt=dt, t0=float(times[0]),
                      channel_names=tuple(channels),
                      regular=False, timestamps=times)


def write_csv(series: TimeSeries, path, timestamp="time"):
    """Write a series as CSV mirroring the ingestion layout (17 significant digits)."""
    times = series.times()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([timestamp, *series.channel_names]) + "\n")
        for t, row in zip(times, series.values):
            cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
            fh.write(",".join(cells) + "\n")


def resample(series: TimeSeries, dt: float, method="hold", max_gap=None) -> TimeSeries:
    """Resample onto the regular grid t0, t0+dt, ... covering the input span.

    Parameters
    ----------
    series : TimeSeries
        Input; may be irregular.
    dt : float
        Target step in seconds.
    method : {"hold", "linear"}
        "hold" carries the previous input value forward; "linear"
        interpolates between neighbours.
    max_gap : float, optional
        Largest tolerated spacing between consecutive input samples before
        interpolation is considered unsafe.  Defaults to ``10 * dt``; a wider
        gap raises :class:`DataError` rather than silently bridging an outage.
    """
    if not dt > 0:
        raise DataError(f"dt must be positive, got {dt}")
    if method not in ("hold", "linear"):
        raise DataError(f"unknown resample method {method!r}")
    times = series.times()
    span = times[-1] - times[0]
    if series.n > 1 and dt > span:
        raise DataError(f"dt={dt} exceeds total span {span}")
    if max_gap is None:
        max_gap = 10.0 * dt
    gaps = np.diff(times)
    if len(gaps) and gaps.max() > max_gap:
        at = int(np.argmax(gaps))
        raise DataError(
            f"gap of {gaps[at]:g} s after sample {at} exceeds max gap {max_gap:g} s"
        )
    n_out = int(np.floor(span / dt)) + 1 if series.n > 1 else 1
    grid = times[0] + np.arange(n_out) * dt
    if method == "hold":
        idx = np.searchsorted(times, grid, side="right") - 1
        out = series.values[np.maximum(idx, 0)]
    else:
        out = np.column_stack(
            [np.interp(grid, times, series.values[:, j]) for j in range(series.k)]
        )
    return TimeSeries(out, dt=float(dt), t0=float(times[0]),
                      channel_names=series.channel_names)


def window(series: TimeSeries, start: int, end: int) -> TimeSeries:
    """Contiguous sub-series over sample indices [start, end)."""
    if not (isinstance(start, (int, np.integer)) and isinstance(end, (int, np.integer))):
        raise DataError("window indices must be integers")
    if not (0 <= start < end <= series.n):
        raise DataError(
            f"window [{start}, {end}) out of range for {series.n} samples"
        )
    values = series.values[start:end]
    if series.timestamps is not None:
        ts = series.timestamps[start:end]
        return TimeSeries(values, dt=series.dt, t0=float(ts[0]),
                          channel_names=series.channel_names,
                          regular=False, timestamps=ts)
    return TimeSeries(values, dt=series.dt, t0=series.t0 + start * series.dt,
                      channel_names=series.channel_names)


def standardize(series: TimeSeries) -> TimeSeries:
    """Z-score each channel. Off by default in the pipeline; constant channels are rejected."""
    mean = series.values.mean(axis=0)
    std = series.values.std(axis=0)
    flat = np.where(std == 0)[0]
    if len(flat):
        names = [series.channel_names[i] for i in flat]
        raise DataError(f"cannot standardize constant channels {names}")
    return TimeSeries((series.values - mean) / std, dt=series.dt, t0=series.t0,
                      channel_names=series.channel_names, regular=series.regular,
                      timestamps=None if series.timestamps is None
                      else series.timestamps.copy())


def delay_embed(series: TimeSeries, q: int) -> DelayEmbedding:
    """Embed with q delays: row n of the result is (y_n, y_{n+1}, ..., y_{n+q}).

    Requires a regular series and q < N.  The output has N - q rows in
    k(q+1) dimensions; each row concatenates source rows bit-exactly.
    """
    if not series.regular:
        raise DataError("delay embedding requires a regular series; resample first")
    if not (isinstance(q, (int, np.integer)) and q >= 0):
        raise DataError(f"q must be a non-negative integer, got {q}")
    if q >= series.n:
        raise DataError(f"q={q} must be smaller than N={series.n}")
    n_rows = series.n - q
    points = np.hstack([series.values[i:n_rows + i] for i in range(q + 1)])
    return DelayEmbedding(source=series, q=int(q), points=points)
