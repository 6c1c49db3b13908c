"""Synthetic series generators with known noise floors, used by the test
harness and the CLI demo paths."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import SeriesTable


def _hourly_stamps(T: int, start: str = "2016-01-01 00:00:00") -> np.ndarray:
    t0 = np.datetime64(start.replace(" ", "T"), "s")
    return t0 + np.arange(T) * np.timedelta64(3600, "s")


def chirp_mixture(T: int = 6000, n_channels: int = 3, noise_sigma: float = 0.5,
                  base_periods=(16.0, 24.0, 32.0), mod_depth: float = 0.35,
                  mod_period: float = 487.0, seed: int = 0) -> SeriesTable:
    """Frequency-modulated sinusoids plus iid Gaussian observation noise.

    The instantaneous period of channel c wanders over
    ``base_periods[c] * (1 +/- mod_depth)``, so the clean future is a smooth
    but nonlinear function of the clean history: a single shared linear
    filter cannot extrapolate the whole frequency continuum, while an
    adaptive model can approach the observation-noise floor ``noise_sigma**2``.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    cols = []
    for c in range(n_channels):
        base = base_periods[c % len(base_periods)]
        psi = rng.uniform(0.0, 2.0 * np.pi)
        inst_period = base * (1.0 + mod_depth * np.sin(2.0 * np.pi * t / mod_period + psi))
        phase = np.cumsum(2.0 * np.pi / inst_period)
        cols.append(np.sin(phase + rng.uniform(0.0, 2.0 * np.pi)))
    clean = np.stack(cols, axis=1)
    noisy = clean + noise_sigma * rng.standard_normal(clean.shape)
    names = [f"ch{c}" for c in range(n_channels)]
    return SeriesTable(_hourly_stamps(T), noisy, names)


def sinusoid(T: int = 2000, period: float = 12.0, noise_sigma: float = 0.3,
             n_channels: int = 1, seed: int = 0) -> SeriesTable:
    """Single fixed-frequency sinusoid per channel; the clean future is an
    exact linear map of the clean history, so the noise floor is noise_sigma**2."""
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    cols = [np.sin(2.0 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
            for _ in range(n_channels)]
    clean = np.stack(cols, axis=1)
    noisy = clean + noise_sigma * rng.standard_normal(clean.shape)
    return SeriesTable(_hourly_stamps(T), noisy,
                       [f"ch{c}" for c in range(n_channels)])


def etth1_like(T: int = 17420, n_channels: int = 7, seed: int = 7) -> SeriesTable:
    """An hourly surrogate with daily/weekly structure, level drift, and noise.

    Shaped like the ETTh1 benchmark file (T x 7, hourly) for demos and smoke
    runs; it does not reproduce the benchmark's values.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    cols = []
    for _ in range(n_channels):
        daily = rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * t / 24.0 + rng.uniform(0, 2 * np.pi))
        weekly = rng.uniform(0.2, 0.8) * np.sin(2 * np.pi * t / 168.0 + rng.uniform(0, 2 * np.pi))
        drift = np.cumsum(rng.normal(0.0, 0.01, size=T))
        ar = np.zeros(T)
        eps = rng.normal(0.0, 0.25, size=T)
        for i in range(1, T):
            ar[i] = 0.7 * ar[i - 1] + eps[i]
        cols.append(rng.uniform(2.0, 10.0) + daily + weekly + drift + ar)
    return SeriesTable(_hourly_stamps(T), np.stack(cols, axis=1),
                       ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"])


def to_csv(table: SeriesTable, path: str | Path,
           datetime_column: str = "date") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([datetime_column] + table.channel_names)
        stamps = table.timestamps.astype("datetime64[s]").astype(str)
        for i in range(table.length):
            row = [stamps[i].replace("T", " ")]
            row += [f"{v:.10g}" for v in table.values[i]]
            writer.writerow(row)
    return path
