"""Time-series containers and the numerical preprocessing primitives.

A :class:`TimeSeries` is a uniformly sampled multichannel record; a
:class:`Dataset` groups series and splits channels into control (exogenous
input) and dependent (state) roles.  The array-level helpers
(:func:`moving_average`, :func:`derivative`, :func:`curvature`) back the
series-level operations and are reused directly by the model-fitting code.

All operations are pure: they return new objects and never mutate their
inputs, so values can be shared freely across threads.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CsvFormatError


@dataclass
class TimeSeries:
    """Uniformly sampled multichannel series.

    Parameters
    ----------
    channel_names : list of str
        One label per column of ``values``.
    sample_period : float
        Spacing of the implicit time grid, seconds; strictly positive.
    values : ndarray, shape (n, m)
        One row per time step, one column per channel.  Must be finite.
    labels : ndarray of bool, shape (n,), optional
        Point-wise anomaly mask (True = anomalous).
    """

    channel_names: list
    sample_period: float
    values: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.channel_names = list(self.channel_names)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D array")
        if self.values.shape[1] != len(self.channel_names):
            raise ValueError(
                f"{len(self.channel_names)} channel names for "
                f"{self.values.shape[1]} columns"
            )
        if len(self.channel_names) < 1:
            raise ValueError("at least one channel required")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValueError("channel names must be unique")
        if not (float(self.sample_period) > 0.0):
            raise ValueError("sample_period must be strictly positive")
        self.sample_period = float(self.sample_period)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (self.values.shape[0],):
                raise ValueError("label count must equal row count")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    @property
    def times(self):
        """Implicit time grid: index times sample period, starting at zero."""
        return np.arange(len(self)) * self.sample_period

    def channel_index(self, name):
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise ValueError(f"unknown channel {name!r}") from None

    def channel(self, name):
        """Return a copy of one channel as a 1-D array."""
        return self.values[:, self.channel_index(name)].copy()

    def with_channel(self, name, new_values):
        """Return a new series with one channel replaced."""
        new_values = np.asarray(new_values, dtype=float)
        if new_values.shape != (len(self),):
            raise ValueError("replacement channel must match series length")
        values = self.values.copy()
        values[:, self.channel_index(name)] = new_values
        labels = None if self.labels is None else self.labels.copy()
        return TimeSeries(self.channel_names, self.sample_period, values, labels)

    def with_labels(self, labels):
        return TimeSeries(self.channel_names, self.sample_period,
                          self.values.copy(), np.asarray(labels, dtype=bool))


@dataclass
class Dataset:
    """A list of series sharing a channel layout, split into roles.

    ``control_channels`` and ``dependent_channels`` must be disjoint and
    together cover every channel name; every series must share the same
    channel names in the same order.
    """

    series: list
    control_channels: tuple
    dependent_channels: tuple

    def __post_init__(self):
        self.series = list(self.series)
        self.control_channels = tuple(self.control_channels)
        self.dependent_channels = tuple(self.dependent_channels)
        if not self.series:
            raise ValueError("dataset needs at least one series")
        names = self.series[0].channel_names
        for s in self.series[1:]:
            if s.channel_names != names:
                raise ValueError("all series must share channel names and order")
        ctrl, dep = set(self.control_channels), set(self.dependent_channels)
        if ctrl & dep:
            raise ValueError("control and dependent channel sets overlap")
        if ctrl | dep != set(names):
            raise ValueError("control + dependent sets must cover all channels")


# ---------------------------------------------------------------------------
# array-level primitives

def moving_average(y, window):
    """Centered moving average; the window shrinks symmetrically at the ends.

    The output has the same length as ``y``; point ``t`` averages
    ``y[t-h : t+h+1]`` with ``h = min(window // 2, t, n - 1 - t)``, so
    constants are preserved and the output never leaves ``[min(y), max(y)]``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd positive integer")
    if window > n:
        raise ValueError(f"window {window} exceeds series length {n}")
    half = window // 2
    if half == 0:
        return y.copy()
    csum = np.concatenate(([0.0], np.cumsum(y)))
    out = np.empty(n)
    for t in range(n):
        h = min(half, t, n - 1 - t)
        out[t] = (csum[t + h + 1] - csum[t - h]) / (2 * h + 1)
    return out


def _first_derivative(y, dt):
    """Second-order finite differences: central inside, one-sided at the ends."""
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt)
    d[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * dt)
    return d


def derivative(y, dt, order):
    """Order-th derivative estimate, one value per sample.

    The first-derivative stencil is applied recursively ``order`` times,
    so units are y-units per second**order.
    """
    y = np.asarray(y, dtype=float)
    order = int(order)
    if order < 1:
        raise ValueError("order must be a positive integer")
    if y.shape[0] < order + 2:
        raise ValueError(
            f"series of length {y.shape[0]} too short for order-{order} derivative"
        )
    d = y
    for _ in range(order):
        d = _first_derivative(d, dt)
    return d


def curvature(y, dt, max_order=3):
    """Local-variation score: sum of normalized absolute derivatives.

    Each derivative of order 1..max_order is scaled by its series-wide
    standard deviation before the absolute values are summed; a constant
    derivative contributes with scale 1 instead.
    """
    y = np.asarray(y, dtype=float)
    if int(max_order) < 1:
        raise ValueError("max_order must be >= 1")
    score = np.zeros_like(y)
    d = y
    for _ in range(int(max_order)):
        d = _first_derivative(d, dt)
        s = float(np.std(d))
        if s <= 1e-12 * max(1.0, float(np.max(np.abs(d))) if d.size else 1.0):
            s = 1.0
        score += np.abs(d) / s
    return score


# ---------------------------------------------------------------------------
# series-level operations

def smooth(series, channel, window=5):
    """Return the series with one channel replaced by its moving average."""
    return series.with_channel(channel, moving_average(series.channel(channel), window))


def numerical_derivative(series, channel, order=1):
    """Order-th time derivative of a channel, in channel units per second**order."""
    return derivative(series.channel(channel), series.sample_period, order)


def curvature_score(series, channel, max_order=3):
    """Per-point sharpness score of a channel; higher = sharper local variation."""
    return curvature(series.channel(channel), series.sample_period, max_order)


# ---------------------------------------------------------------------------
# CSV interface
#
# Schema: header "t,<channel names...>[,label]"; t strictly increasing with
# a constant step; label column, when present, holds only 0 or 1.

LABEL_COLUMN = "label"
_REL_STEP_TOL = 1e-6


def read_csv(path):
    """Read one series from a CSV file, validating the schema.

    Raises :class:`CsvFormatError` with the offending line number on any
    deviation from the schema.
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, "empty file") from None
        if not header or header[0] != "t":
            raise CsvFormatError(path, 1, "header must start with 't'")
        has_label = len(header) > 1 and header[-1] == LABEL_COLUMN
        names = header[1:-1] if has_label else header[1:]
        if not names:
            raise CsvFormatError(path, 1, "no data channels in header")

        times, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    path, lineno, f"expected {len(header)} fields, got {len(row)}"
                )
            try:
                fields = [float(v) for v in row]
            except ValueError:
                raise CsvFormatError(path, lineno, "non-numeric field") from None
            times.append(fields[0])
            if has_label:
                if fields[-1] not in (0.0, 1.0):
                    raise CsvFormatError(path, lineno, "label must be 0 or 1")
                labels.append(bool(fields[-1]))
                rows.append(fields[1:-1])
            else:
                rows.append(fields[1:])

    if len(rows) < 2:
        raise CsvFormatError(path, 2, "need at least two data rows")
    t = np.asarray(times)
    steps = np.diff(t)
    dt = steps[0]
    if dt <= 0:
        raise CsvFormatError(path, 3, "t must be strictly increasing")
    bad = np.nonzero(np.abs(steps - dt) > _REL_STEP_TOL * max(abs(dt), 1e-300))[0]
    if bad.size:
        raise CsvFormatError(
            path, int(bad[0]) + 3, "t step differs from the first step"
        )
    values = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        row = int(np.nonzero(~np.all(np.isfinite(values), axis=1))[0][0])
        raise CsvFormatError(path, row + 2, "non-finite value")
    return TimeSeries(
        names, float(dt), values, np.asarray(labels, dtype=bool) if has_label else None
    )


def write_csv(series, path):
    """Write a series in the standard schema; floats use shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["t"] + list(series.channel_names)
        if series.labels is not None:
            header.append(LABEL_COLUMN)
        writer.writerow(header)
        dt = series.sample_period
        for i in range(len(series)):
            row = [repr(i * dt)] + [repr(float(v)) for v in series.values[i]]
            if series.labels is not None:
                row.append(str(int(series.labels[i])))
            writer.writerow(row)


def read_csv_dir(path):
    """Read every ``*.csv`` under ``path`` (sorted by name) as one series each."""
    import os

    files = sorted(f for f in os.listdir(path) if f.endswith(".csv"))
    if not files:
        raise ValueError(f"no CSV files under {path}")
    return [read_csv(os.path.join(path, f)) for f in files]
