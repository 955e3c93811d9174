import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccf.errors import ConfigError, DataQualityError, EmptySampleError
from ccf.panel import (LagDesign, StandardizationInfo, TimeSeriesPanel, build_lag_matrix,
                       component_window, lag_rows, read_csv, split, split_lengths, standardize,
                       write_csv)


def test_panel_rejects_non_finite_and_short():
    with pytest.raises(DataQualityError):
        TimeSeriesPanel(np.array([[1.0], [np.nan]]))
    with pytest.raises(DataQualityError):
        TimeSeriesPanel(np.array([[1.0]]))


def test_panel_is_read_only():
    p = TimeSeriesPanel(np.arange(6.0).reshape(3, 2), ("a", "b"))
    with pytest.raises(ValueError):
        p.values[0, 0] = 5.0


def test_columns_unknown_name():
    p = TimeSeriesPanel(np.arange(6.0).reshape(3, 2), ("a", "b"))
    assert p.columns(["b"]).values[:, 0].tolist() == [1.0, 3.0, 5.0]
    with pytest.raises(ConfigError, match="zz"):
        p.columns(["a", "zz"])


def test_standardize_three_point_column():
    s, info = standardize(TimeSeriesPanel(np.array([[1.0], [2.0], [3.0]])))
    np.testing.assert_allclose(s.values[:, 0], [-1.0, 0.0, 1.0], atol=1e-15)
    assert info.means[0] == 2.0 and info.scales[0] == 1.0


def test_standardize_idempotent(rng):
    s, _ = standardize(TimeSeriesPanel(rng.standard_normal((40, 3))))
    s2, info2 = standardize(s)
    np.testing.assert_allclose(s2.values, s.values, atol=1e-12)
    np.testing.assert_allclose(info2.scales, 1.0, atol=1e-12)
    np.testing.assert_allclose(info2.means, 0.0, atol=1e-12)


def test_standardize_moments_and_round_trip(rng):
    x = rng.standard_normal((200, 50)) * rng.uniform(0.1, 10, 50) + rng.uniform(-5, 5, 50)
    s, info = standardize(TimeSeriesPanel(x))
    assert np.max(np.abs(s.values.mean(axis=0))) < 1e-12
    assert np.max(np.abs(s.values.var(axis=0, ddof=1) - 1)) < 1e-9
    np.testing.assert_allclose(info.inverse(info.transform(x)), x, atol=1e-10, rtol=0)


def test_standardize_constant_column_warns():
    x = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    with pytest.warns(RuntimeWarning, match="constant"):
        s, info = standardize(TimeSeriesPanel(x))
    assert info.scales[1] == 1.0
    np.testing.assert_array_equal(s.values[:, 1], 0.0)
    assert info.constant_columns == (1,)


def test_standardize_subset_rows(rng):
    x = rng.standard_normal((30, 2))
    s, info = standardize(TimeSeriesPanel(x), slice(0, 20))
    np.testing.assert_allclose(s.values[:20].mean(axis=0), 0, atol=1e-12)
    assert s.values.shape == (30, 2)


def test_standardization_info_serialization():
    info = StandardizationInfo(np.array([1.0, 2.0]), np.array([0.5, 3.0]))
    again = StandardizationInfo.from_dict(info.to_dict())
    np.testing.assert_array_equal(again.means, info.means)
    np.testing.assert_array_equal(again.scales, info.scales)
    with pytest.raises(ValueError):
        StandardizationInfo(np.array([0.0]), np.array([0.0]))


def test_build_lag_matrix_examples():
    x = build_lag_matrix(np.array([[1.0], [2.0], [3.0], [4.0]]), 1)
    np.testing.assert_array_equal(x, [[2, 1], [3, 2], [4, 3]])
    z = np.arange(10.0).reshape(5, 2)
    np.testing.assert_array_equal(build_lag_matrix(z, 0), z)
    x = build_lag_matrix(z, 2)
    assert x.shape == (3, 6)
    # 1-based t = 3 is the first row: (z_3', z_2', z_1')
    np.testing.assert_array_equal(x[0], np.concatenate([z[2], z[1], z[0]]))
    with pytest.raises(EmptySampleError):
        build_lag_matrix(z, 5)


def test_component_window_examples():
    f = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(component_window(f, 1, 2), [3.0, 2.0])
    np.testing.assert_array_equal(component_window(f, 0, 1), [2.0])
    with pytest.raises(IndexError):
        component_window(f, 2, 1)
    with pytest.raises(IndexError):
        component_window(f, 0, 3)


def test_window_operator_equals_windowed_series(rng):
    z = rng.standard_normal((30, 3))
    c, k = 2, 2
    beta = rng.standard_normal(9)
    X = build_lag_matrix(z, c)          # row i is x_{c+i}
    f = np.full(30, np.nan)
    f[c:] = X @ beta
    for t in range(c + k, 30):
        Xt = np.vstack([X[t - c - a] for a in range(k + 1)])
        np.testing.assert_allclose(Xt @ beta, component_window(f, k, t), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)), st.integers(0, 3),
       arrays(np.float64, (12,), elements=st.floats(-1, 1)))
def test_lag_embedding_matches_series_by_series(z, c, b):
    beta = b[:3 * (c + 1)]
    X = build_lag_matrix(z, c)
    direct = np.array([sum(z[t - j] @ beta[3 * j:3 * (j + 1)] for j in range(c + 1))
                       for t in range(c, 12)])
    np.testing.assert_allclose(X @ beta, direct, atol=1e-12 * (1 + np.abs(direct).max()))


def test_lag_rows_guard():
    with pytest.raises(EmptySampleError):
        lag_rows(np.zeros((5, 1)), 2, 1, 3)


def test_lag_design():
    d = LagDesign(c=1, k=2, h=1, m=5)
    assert d.p == 10
    assert d.origin_range(20) == (3, 18)
    assert d.n_effective(20) == 16
    with pytest.raises(ConfigError):
        LagDesign(c=-1, k=0, h=0, m=1)


@pytest.mark.parametrize("T,alpha,expected", [(264, 0.7, (184, 40, 40)), (200, 0.7, (140, 30, 30)),
                                               (10, 0.5, (5, 2, 3))])
def test_split_lengths(T, alpha, expected):
    s = split_lengths(T, alpha)
    assert (s.T1, s.T2, s.T3) == expected


def test_split_degenerate():
    with pytest.raises(ConfigError):
        split_lengths(3, 0.9)
    with pytest.raises(ConfigError):
        split_lengths(100, 1.2)


@settings(max_examples=50, deadline=None)
@given(st.integers(6, 500), st.floats(0.2, 0.8))
def test_split_partition(T, alpha):
    try:
        parts = split(TimeSeriesPanel(np.arange(float(T))[:, None]), alpha)
    except ConfigError:
        return
    joined = np.concatenate([p.values[:, 0] for p in parts])
    np.testing.assert_array_equal(joined, np.arange(float(T)))
    assert all(p.T >= 1 for p in parts)


def test_csv_round_trip(tmp_path, rng):
    x = rng.standard_normal((7, 3))
    p = TimeSeriesPanel(x, ("a", "b", "c"))
    path = tmp_path / "d.csv"
    write_csv(path, p, [f"2020-{i + 1:02d}" for i in range(7)])
    back = read_csv(path)
    np.testing.assert_array_equal(back.values, x)
    assert back.labels == ("a", "b", "c")
    assert back.t0 == "2020-01"


def test_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(DataQualityError, match="row 3"):
        read_csv(bad)
    bad.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataQualityError):
        read_csv(bad)
    bad.write_text("a,b\n1,2\n3,nan\n")
    with pytest.raises(DataQualityError):
        read_csv(bad)
