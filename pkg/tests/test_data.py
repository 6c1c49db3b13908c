import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neutsflow import data as d
from neutsflow import synth
from neutsflow.errors import DataError, UsageError


def write_csv(tmp_path, rows, header="date,a,b"):
    p = tmp_path / "series.csv"
    p.write_text(header + "\n" + "\n".join(rows) + "\n")
    return p


BASE_ROWS = [
    "2020-01-01 00:00:00,1.0,10.0",
    "2020-01-01 01:00:00,2.0,20.0",
    "2020-01-01 02:00:00,3.0,30.0",
    "2020-01-01 03:00:00,4.0,40.0",
]


# -- load_csv -------------------------------------------------------------------

def test_load_csv_small(tmp_path):
    table = d.load_csv(write_csv(tmp_path, BASE_ROWS))
    assert table.length == 4
    assert table.n_channels == 2
    assert table.channel_names == ["a", "b"]
    assert table.interval_seconds() == 3600
    assert np.allclose(table.values[:, 0], [1, 2, 3, 4])


def test_load_csv_etth1_format(tmp_path):
    table = synth.etth1_like(T=300)
    p = synth.to_csv(table, tmp_path / "ETTh1.csv")
    loaded = d.load_csv(p)
    assert loaded.n_channels == 7
    assert loaded.channel_names[-1] == "OT"
    assert loaded.interval_seconds() == 3600
    assert np.allclose(loaded.values, table.values, atol=1e-6)


def test_load_csv_gap_rejected(tmp_path):
    rows = BASE_ROWS[:2] + ["2020-01-01 05:00:00,9.0,90.0",
                            "2020-01-01 06:00:00,9.5,95.0"]
    with pytest.raises(DataError, match="gap"):
        d.load_csv(write_csv(tmp_path, rows))


def test_load_csv_gap_ffilled(tmp_path):
    rows = BASE_ROWS[:2] + ["2020-01-01 04:00:00,9.0,90.0"]
    table = d.load_csv(write_csv(tmp_path, rows), fill_policy="ffill")
    assert table.length == 5
    assert np.allclose(table.values[:, 0], [1.0, 2.0, 2.0, 2.0, 9.0])


def test_load_csv_unparseable_rows_listed(tmp_path):
    rows = BASE_ROWS[:2] + ["not-a-date,5.0,50.0"] + BASE_ROWS[2:]
    with pytest.raises(DataError, match="lines 4"):
        d.load_csv(write_csv(tmp_path, rows))


def test_load_csv_missing_value_rejected(tmp_path):
    rows = list(BASE_ROWS)
    rows[2] = "2020-01-01 02:00:00,,30.0"
    with pytest.raises(DataError, match="lines 4"):
        d.load_csv(write_csv(tmp_path, rows))


def test_load_csv_nonmonotone(tmp_path):
    rows = BASE_ROWS + ["2020-01-01 02:30:00,9,9"]
    with pytest.raises(DataError, match="non-monotone"):
        d.load_csv(write_csv(tmp_path, rows))


def test_load_csv_missing_file():
    with pytest.raises(DataError, match="no such file"):
        d.load_csv("/nonexistent/file.csv")


def test_load_csv_missing_datetime_column(tmp_path):
    with pytest.raises(DataError, match="'when'"):
        d.load_csv(write_csv(tmp_path, BASE_ROWS), datetime_column="when")


# -- splits --------------------------------------------------------------------

def _table(T, C=1):
    ts = np.datetime64("2020-01-01", "s") + np.arange(T) * np.timedelta64(3600, "s")
    vals = np.arange(T * C, dtype=float).reshape(T, C)
    return d.SeriesTable(ts, vals, [f"c{i}" for i in range(C)])


def test_split_lengths_simple():
    tr, va, te = d.chronological_split(_table(100), d.SplitSpec(0.7, 0.1, 0.2))
    assert (tr.length, va.length, te.length) == (70, 10, 20)


def test_split_ett_boundaries():
    T = 1117
    spec = d.SplitSpec(0.6, 0.2, 0.2)
    tr, va, te = d.chronological_split(_table(T), spec)
    assert tr.length == int(np.floor(0.6 * T))
    assert tr.length + va.length == int(np.floor(0.8 * T))
    assert tr.length + va.length + te.length == T


def test_split_disjoint_ordered_cover():
    table = _table(100)
    tr, va, te = d.chronological_split(table, d.SplitSpec(0.7, 0.1, 0.2))
    glued = np.concatenate([tr.values, va.values, te.values])
    assert np.array_equal(glued, table.values)
    assert tr.timestamps[-1] < va.timestamps[0] < te.timestamps[0]


def test_split_too_short_segment():
    with pytest.raises(DataError, match="val segment"):
        d.chronological_split(_table(1000), d.SplitSpec(0.98, 0.01, 0.01),
                              min_segment=192)


def test_split_spec_validation():
    with pytest.raises(UsageError):
        d.SplitSpec(0.5, 0.5, 0.5)
    with pytest.raises(UsageError):
        d.SplitSpec(1.0, 0.0, 0.0)


def test_split_for_dataset_convention():
    assert d.split_for_dataset("ETTh1") == d.ETT_SPLIT
    assert d.split_for_dataset("weather") == d.DEFAULT_SPLIT


# -- windows ----------------------------------------------------------------------

def test_make_windows_count():
    pairs = d.make_windows(_table(200), S=96, L=96, stride=1)
    assert len(pairs) == 9


def test_make_windows_exact_fit():
    pairs = d.make_windows(_table(192), S=96, L=96)
    assert len(pairs) == 1
    assert pairs[0].start_index == 0


def test_make_windows_stride_zero():
    with pytest.raises(UsageError):
        d.make_windows(_table(200), S=10, L=5, stride=0)


def test_make_windows_too_short():
    with pytest.raises(DataError):
        d.make_windows(_table(50), S=40, L=20)
    with pytest.warns(UserWarning):
        assert d.make_windows(_table(50), S=40, L=20, allow_empty=True) == []


def test_windows_contiguity():
    pairs = d.make_windows(_table(50, C=2), S=10, L=5, stride=3)
    for p in pairs:
        assert p.F.shape == (5, 2)
        # F begins exactly at the sample following H's last sample
        assert p.F[0, 0] == p.H[-1, 0] + 2.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(1, 20), st.integers(1, 20), st.integers(1, 7))
def test_window_count_formula_fuzz(T, S, L, stride):
    if T < S + L:
        with pytest.raises(DataError):
            d.make_windows(_table(T), S=S, L=L, stride=stride)
        return
    pairs = d.make_windows(_table(T), S=S, L=L, stride=stride)
    assert len(pairs) == (T - S - L) // stride + 1


# -- decimate ---------------------------------------------------------------------

def test_decimate_basic():
    x = np.arange(96.0)
    out = d.decimate(x, 4)
    assert len(out) == 24
    assert out[0] == 0 and out[-1] == 92


def test_decimate_identity():
    x = np.arange(10.0)
    assert np.array_equal(d.decimate(x, 1), x)


def test_decimate_phase_end_aligned():
    out = d.decimate(np.arange(96.0), 4, phase=3)
    assert len(out) == 24
    assert out[0] == 3 and out[-1] == 95


def test_decimate_bad_args():
    with pytest.raises(UsageError):
        d.decimate(np.arange(8.0), 0)
    with pytest.raises(UsageError):
        d.decimate(np.arange(8.0), 4, phase=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(10, 200))
def test_decimate_composition(a, b, T):
    x = np.arange(float(T))
    lhs = d.decimate(d.decimate(x, a), b)
    rhs = d.decimate(x, a * b)
    assert np.array_equal(lhs, rhs)


# -- task pairs --------------------------------------------------------------------

def test_task_spec_validation():
    with pytest.raises(UsageError):
        d.TaskSpec(kind="cft", S=96, L=96, decimation_factor=4)
    with pytest.raises(UsageError):
        d.TaskSpec(kind="tssr", S=24, L=96, decimation_factor=2)
    with pytest.raises(UsageError):
        d.TaskSpec(kind="nope", S=1, L=1)


def test_cft_pairs():
    task = d.TaskSpec(kind="cft", S=96, L=96)
    pairs = d.build_task_pairs(_table(400), task)
    assert len(pairs) == 209
    assert pairs[0].H.shape == (96, 1) and pairs[0].F.shape == (96, 1)
    for p in pairs[:5]:
        assert p.F[0, 0] == p.H[-1, 0] + 1.0


def test_tssr_pairs_share_span():
    task = d.TaskSpec(kind="tssr", S=24, L=96, decimation_factor=4)
    pairs = d.build_task_pairs(_table(200), task)
    assert len(pairs) == 105
    p = pairs[0]
    assert p.H.shape == (24, 1) and p.F.shape == (96, 1)
    # same span: H is the decimated view of F
    assert np.array_equal(p.H, p.F[::4])


def test_crtl_pairs():
    task = d.TaskSpec(kind="crtl", S=24, L=96, decimation_factor=4)
    pairs = d.build_task_pairs(_table(300), task)
    p = pairs[0]
    assert p.H.shape == (24, 1) and p.F.shape == (96, 1)
    assert p.decimation_factor == 4
    # H covers the 96 grid points before F
    assert p.F[0, 0] == 96.0 and p.H[-1, 0] == 92.0


# -- scaler and cache ---------------------------------------------------------------

def test_scaler_roundtrip(rng):
    table = _table(50, C=3)
    table.values[:] = rng.normal(2.0, 5.0, size=(50, 3))
    sc = d.fit_scaler(table)
    out = d.apply_scaler(table, sc)
    assert np.abs(out.values.mean(axis=0)).max() < 1e-12
    assert np.abs(sc.inverse(out.values) - table.values).max() < 1e-10


def test_pair_cache_roundtrip(tmp_path):
    task = d.TaskSpec(kind="cft", S=12, L=6)
    pairs = d.build_task_pairs(_table(60, C=2), task, stride=2)
    d.export_pairs(pairs, tmp_path / "cache", split="train", stride=2)
    back = d.load_pairs(tmp_path / "cache")
    assert len(back) == len(pairs)
    for a, b in zip(pairs, back):
        assert np.array_equal(a.H, b.H)
        assert np.array_equal(a.F, b.F)
        assert a.start_index == b.start_index
