"""Dataset ingestion, chronological splits, window pairs, and decimation.

CSV layout: a header row, one datetime column (``YYYY-MM-DD HH:MM:SS``), and
numeric channels in file order. Loading rejects (or forward-fills, per
policy) missing values and sampling gaps, so downstream code never sees NaNs
or an irregular grid.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

_TS_FORMAT = "%Y-%m-%d %H:%M:%S"


@dataclass
class SeriesTable:
    """A multivariate series: strictly increasing timestamps plus a T x C matrix."""

    timestamps: np.ndarray  # datetime64[s], shape (T,)
    values: np.ndarray      # float64, shape (T, C)
    channel_names: list[str]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise UsageError("SeriesTable: values must be 2-D (T, C)")
        if len(self.timestamps) != self.values.shape[0]:
            raise UsageError("SeriesTable: timestamp count != value rows")
        if self.values.shape[1] != len(self.channel_names):
            raise UsageError("SeriesTable: channel name count != value columns")
        if len(self.timestamps) > 1:
            diffs = np.diff(self.timestamps.astype("int64"))
            if not (diffs > 0).all():
                raise DataError("SeriesTable: timestamps not strictly increasing")
        if not np.isfinite(self.values).all():
            raise DataError("SeriesTable: non-finite values present")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def interval_seconds(self) -> int:
        """Most common sampling step, in seconds."""
        if self.length < 2:
            raise UsageError("interval undefined for a single-row table")
        diffs = np.diff(self.timestamps.astype("int64"))
        return int(Counter(diffs.tolist()).most_common(1)[0][0])

    def slice_rows(self, start: int, stop: int) -> "SeriesTable":
        return SeriesTable(self.timestamps[start:stop], self.values[start:stop],
                           list(self.channel_names))


@dataclass
class WindowPair:
    """History block H (S x C) and future block F (L x C) of one sample."""

    H: np.ndarray
    F: np.ndarray
    start_index: int
    decimation_factor: int = 1
    phase: int = 0


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if not all(0.0 < f < 1.0 for f in fracs):
            raise UsageError(f"SplitSpec: fractions must lie in (0,1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise UsageError(f"SplitSpec: fractions must sum to 1, got {sum(fracs)}")


# ETT datasets follow the 0.6/0.2/0.2 convention, the other benchmarks 0.7/0.1/0.2.
ETT_SPLIT = SplitSpec(0.6, 0.2, 0.2)
DEFAULT_SPLIT = SplitSpec(0.7, 0.1, 0.2)


def split_for_dataset(name: str) -> SplitSpec:
    return ETT_SPLIT if name.lower().startswith("ett") else DEFAULT_SPLIT


@dataclass(frozen=True)
class TaskSpec:
    """One of the three experiment settings.

    ``S`` and ``L`` are the model's input/output lengths. For TSSR and CRTL,
    ``S`` counts low-rate samples and the underlying high-rate history block
    spans ``S * decimation_factor`` grid points.
    """

    kind: str                 # "cft" | "tssr" | "crtl"
    S: int
    L: int
    decimation_factor: int = 1
    phase: int = 0

    def __post_init__(self):
        if self.kind not in ("cft", "tssr", "crtl"):
            raise UsageError(f"TaskSpec: unknown kind {self.kind!r}")
        if self.S < 1 or self.L < 1:
            raise UsageError("TaskSpec: S and L must be >= 1")
        if self.kind == "cft":
            if self.decimation_factor != 1:
                raise UsageError("TaskSpec: cft requires decimation_factor == 1")
        else:
            if self.decimation_factor < 2:
                raise UsageError(f"TaskSpec: {self.kind} requires decimation_factor >= 2")
            if self.kind == "tssr" and self.S * self.decimation_factor != self.L:
                raise UsageError("TaskSpec: tssr requires S * decimation_factor == L")
        if not 0 <= self.phase < self.decimation_factor:
            raise UsageError("TaskSpec: phase must satisfy 0 <= phase < factor")

    @property
    def hsr_history(self) -> int:
        """High-rate grid length covered by the history block."""
        return self.S * self.decimation_factor


# -- loading ------------------------------------------------------------------


def load_csv(path: str | Path, datetime_column: str = "date",
             fill_policy: str = "reject") -> SeriesTable:
    """Load a delimited series file into a :class:`SeriesTable`.

    ``fill_policy`` is ``"reject"`` (any missing cell or sampling gap is an
    error naming its position) or ``"ffill"`` (missing cells and gap rows are
    forward-filled from the previous sample).
    """
    path = Path(path)
    if fill_policy not in ("reject", "ffill"):
        raise UsageError(f"load_csv: unknown fill_policy {fill_policy!r}")
    if not path.exists():
        raise DataError(f"load_csv: no such file: {path}")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"load_csv: {path} is empty") from None
        header = [h.strip() for h in header]
        if datetime_column not in header:
            raise DataError(f"load_csv: column {datetime_column!r} not in header {header}")
        dt_idx = header.index(datetime_column)
        channels = [h for i, h in enumerate(header) if i != dt_idx]
        if not channels:
            raise DataError("load_csv: no value columns besides the datetime column")

        stamps: list[datetime] = []
        rows: list[list[float]] = []
        bad_lines: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                bad_lines.append(lineno)
                continue
            try:
                stamp = datetime.strptime(row[dt_idx].strip(), _TS_FORMAT)
            except ValueError:
                bad_lines.append(lineno)
                continue
            vals: list[float] = []
            ok = True
            for i, cell in enumerate(row):
                if i == dt_idx:
                    continue
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    if fill_policy == "ffill" and rows:
                        vals.append(rows[-1][len(vals)])
                    else:
                        ok = False
                        break
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        ok = False
                        break
            if not ok:
                bad_lines.append(lineno)
                continue
            stamps.append(stamp)
            rows.append(vals)

    if bad_lines:
        shown = ", ".join(str(n) for n in bad_lines[:10])
        more = "" if len(bad_lines) <= 10 else f" (+{len(bad_lines) - 10} more)"
        raise DataError(f"load_csv: {path}: unusable rows at lines {shown}{more}")
    if len(rows) < 2:
        raise DataError(f"load_csv: {path}: need at least 2 data rows")

    ts = np.array([np.datetime64(s, "s") for s in stamps])
    vals = np.asarray(rows, dtype=np.float64)
    order = np.diff(ts.astype("int64"))
    if (order <= 0).any():
        where = int(np.argmax(order <= 0))
        raise DataError(f"load_csv: {path}: non-monotone timestamp at data row "
                        f"{where + 2} ({stamps[where + 1]})")

    ts, vals = _regularize_grid(path, ts, vals, fill_policy)
    return SeriesTable(ts, vals, channels)


def _regularize_grid(path, ts, vals, fill_policy):
    diffs = np.diff(ts.astype("int64"))
    step = int(Counter(diffs.tolist()).most_common(1)[0][0])
    gaps = np.nonzero(diffs != step)[0]
    if gaps.size == 0:
        return ts, vals
    if fill_policy == "reject":
        i = int(gaps[0])
        raise DataError(f"load_csv: {path}: sampling gap after {ts[i]} "
                        f"(row {i + 2}: step {int(diffs[i])}s, expected {step}s)")
    off = np.nonzero(diffs % step != 0)[0]
    if off.size:
        i = int(off[0])
        raise DataError(f"load_csv: {path}: irregular step after {ts[i]} "
                        f"(row {i + 2}) is not a multiple of {step}s")
    n_steps = diffs // step
    total = int(n_steps.sum()) + 1
    full_ts = ts[0] + np.arange(total) * np.timedelta64(step, "s")
    full_vals = np.empty((total, vals.shape[1]))
    pos = np.concatenate([[0], np.cumsum(n_steps)])
    full_vals[:] = np.nan
    full_vals[pos] = vals
    # forward-fill inserted rows
    mask = np.isnan(full_vals[:, 0])
    idx = np.where(~mask, np.arange(total), 0)
    np.maximum.accumulate(idx, out=idx)
    return full_ts, full_vals[idx]


# -- splits and windows --------------------------------------------------------


def chronological_split(table: SeriesTable, spec: SplitSpec,
                        min_segment: int | None = None):
    """Contiguous, disjoint train/val/test segments (row counts floored)."""
    T = table.length
    b1 = int(np.floor(spec.train_fraction * T))
    b2 = int(np.floor((spec.train_fraction + spec.val_fraction) * T))
    parts = (table.slice_rows(0, b1), table.slice_rows(b1, b2),
             table.slice_rows(b2, T))
    if min_segment is not None:
        for name, part in zip(("train", "val", "test"), parts):
            if part.length < min_segment:
                raise DataError(f"chronological_split: {name} segment has "
                                f"{part.length} rows, need >= {min_segment}")
    return parts


def make_windows(table: SeriesTable | np.ndarray, S: int, L: int,
                 stride: int = 1, allow_empty: bool = False) -> list[WindowPair]:
    """All (H, F) pairs at start indices 0, stride, 2*stride, ..."""
    values = table.values if isinstance(table, SeriesTable) else np.asarray(table)
    if stride < 1:
        raise UsageError(f"make_windows: stride must be >= 1, got {stride}")
    if S < 1 or L < 1:
        raise UsageError("make_windows: S and L must be >= 1")
    T = values.shape[0]
    if T < S + L:
        if allow_empty:
            warnings.warn(f"make_windows: series length {T} < S+L={S + L}; no windows")
            return []
        raise DataError(f"make_windows: series length {T} < S+L={S + L}")
    pairs = []
    for start in range(0, T - S - L + 1, stride):
        pairs.append(WindowPair(H=values[start:start + S],
                                F=values[start + S:start + S + L],
                                start_index=start))
    return pairs


def decimate(x: np.ndarray, factor: int, phase: int = 0) -> np.ndarray:
    """Keep samples phase, phase+factor, ... along the leading (time) axis."""
    if factor < 1:
        raise UsageError(f"decimate: factor must be >= 1, got {factor}")
    if not 0 <= phase < factor:
        raise UsageError(f"decimate: need 0 <= phase < factor, got phase={phase}")
    return np.asarray(x)[phase::factor]


def build_task_pairs(table: SeriesTable, task: TaskSpec,
                     stride: int = 1) -> list[WindowPair]:
    """Window pairs for one split table under a task configuration.

    cft:  contiguous (S x C, L x C) pairs.
    tssr: H is the decimated view of an L-length high-rate block, F the block.
    crtl: H is the decimated view of the S*factor history block, F the L-length
          high-rate future block; pairs carry (factor, phase) so predictions
          can be downsampled for scoring.
    """
    f, ph = task.decimation_factor, task.phase
    if task.kind == "cft":
        return make_windows(table, task.S, task.L, stride)
    if task.kind == "tssr":
        values = table.values
        T, block = values.shape[0], task.L
        if T < block:
            raise DataError(f"build_task_pairs: series length {T} < block {block}")
        pairs = []
        for start in range(0, T - block + 1, stride):
            hsr = values[start:start + block]
            pairs.append(WindowPair(H=decimate(hsr, f, ph), F=hsr,
                                    start_index=start, decimation_factor=f, phase=ph))
        return pairs
    # crtl
    base = make_windows(table, task.hsr_history, task.L, stride)
    return [WindowPair(H=decimate(p.H, f, ph), F=p.F, start_index=p.start_index,
                       decimation_factor=f, phase=ph) for p in base]


def stack_pairs(pairs: list[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    """Batch a pair list into (N, S, C) and (N, L, C) arrays."""
    if not pairs:
        raise UsageError("stack_pairs: empty list")
    H = np.stack([p.H for p in pairs])
    F = np.stack([p.F for p in pairs])
    return H, F


# -- per-channel standardization ------------------------------------------------


@dataclass
class Scaler:
    """Per-channel z-score statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def fit_scaler(table: SeriesTable) -> Scaler:
    mean = table.values.mean(axis=0)
    std = table.values.std(axis=0)
    return Scaler(mean=mean, std=np.maximum(std, 1e-8))


def apply_scaler(table: SeriesTable, scaler: Scaler) -> SeriesTable:
    return SeriesTable(table.timestamps, scaler.transform(table.values),
                       list(table.channel_names))


# -- window-pair cache -----------------------------------------------------------


def export_pairs(pairs: list[WindowPair], prefix: str | Path,
                 split: str = "train", stride: int = 1) -> tuple[Path, Path]:
    """Write pairs to ``<prefix>.bin`` with a JSON manifest for reproducibility."""
    if not pairs:
        raise UsageError("export_pairs: empty list")
    prefix = Path(prefix)
    H, F = stack_pairs(pairs)
    bin_path = prefix.with_suffix(".bin")
    with open(bin_path, "wb") as fh:
        fh.write(H.astype("<f8").tobytes())
        fh.write(F.astype("<f8").tobytes())
    manifest = {
        "count": len(pairs),
        "S": int(H.shape[1]),
        "L": int(F.shape[1]),
        "channels": int(H.shape[2]),
        "stride": stride,
        "split": split,
        "decimation": pairs[0].decimation_factor,
        "phase": pairs[0].phase,
        "start_indices": [p.start_index for p in pairs],
    }
    man_path = prefix.with_suffix(".manifest.json")
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return bin_path, man_path


def load_pairs(prefix: str | Path) -> list[WindowPair]:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".manifest.json").read_text())
    n, S, L, C = (manifest[k] for k in ("count", "S", "L", "channels"))
    raw = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    expect = n * (S + L) * C
    if raw.size != expect:
        raise DataError(f"load_pairs: cache holds {raw.size} values, expected {expect}")
    H = raw[:n * S * C].reshape(n, S, C)
    F = raw[n * S * C:].reshape(n, L, C)
    return [WindowPair(H=H[i], F=F[i], start_index=manifest["start_indices"][i],
                       decimation_factor=manifest["decimation"],
                       phase=manifest["phase"]) for i in range(n)]
