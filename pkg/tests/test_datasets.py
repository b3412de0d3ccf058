"""Synthetic data generators, tabular parsing and the long-tail sampler."""

import numpy as np
import pytest

from sqs.datasets import (
    F0_CATALOG,
    DatasetError,
    RegressionTask,
    gen_classification,
    gen_longtail_weights,
    gen_regression,
    load_tabular,
)


# -- regression -------------------------------------------------------------


def test_zero_noise_targets_are_exact():
    task = RegressionTask(f0="sum_of_sines", p=3, n=100, sigma_eps=0.0, seed=1)
    (Xtr, ytr), (Xte, yte) = gen_regression(task)
    f0 = lambda X: np.sin(2 * np.pi * X).sum(axis=1) / 3
    np.testing.assert_array_equal(ytr, f0(Xtr))
    np.testing.assert_array_equal(yte, f0(Xte))


def test_noise_variance_matches_sigma_eps():
    # f0 = polynomial is deterministic given X: residual variance ~ sigma^2
    task = RegressionTask(f0="polynomial", p=2, n=10_000, sigma_eps=0.3, seed=2)
    (Xtr, ytr), _ = gen_regression(task)
    s = Xtr.sum(axis=1) / 2
    resid = ytr - (2 * s * s - s)
    assert abs(resid.var() - 0.09) < 0.1 * 0.09


def test_regression_deterministic_and_split_shape():
    task = RegressionTask(n=250, seed=5)
    a = gen_regression(task)
    b = gen_regression(task)
    np.testing.assert_array_equal(a[0][0], b[0][0])
    np.testing.assert_array_equal(a[1][1], b[1][1])
    assert a[0][0].shape == (200, 4) and a[1][0].shape == (50, 4)


def test_regression_split_disjoint_and_exhaustive():
    task = RegressionTask(n=100, seed=0)
    (Xtr, _), (Xte, _) = gen_regression(task)
    X = np.concatenate([Xtr, Xte])
    assert X.shape[0] == 100
    # rows are continuous uniforms: duplicates across the split would mean
    # the partition reuses samples
    assert len(np.unique(X[:, 0])) == 100


def test_every_catalog_entry_runs():
    for f0 in F0_CATALOG:
        (Xtr, ytr), _ = gen_regression(RegressionTask(f0=f0, n=50, seed=0))
        assert np.all(np.isfinite(ytr))


def test_regression_validation():
    with pytest.raises(DatasetError):
        RegressionTask(f0="nope")
    with pytest.raises(DatasetError):
        RegressionTask(p=0)
    with pytest.raises(DatasetError):
        RegressionTask(n=5)


# -- classification ---------------------------------------------------------


def test_classification_shapes_and_standardization():
    (Xtr, ytr), (Xte, yte) = gen_classification(1000, seed=0)
    assert Xtr.shape == (800, 2) and Xte.shape == (200, 2)
    X = np.concatenate([Xtr, Xte])
    np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-12)
    assert set(np.unique(np.concatenate([ytr, yte]))) == {0, 1}


def test_classification_deterministic():
    a = gen_classification(500, seed=3)
    b = gen_classification(500, seed=3)
    np.testing.assert_array_equal(a[0][0], b[0][0])
    np.testing.assert_array_equal(a[1][1], b[1][1])


def test_classification_low_noise_is_separable_by_sign_structure():
    (Xtr, ytr), _ = gen_classification(2000, seed=0, noise=0.01)
    # both classes present in roughly equal measure
    frac = ytr.mean()
    assert 0.4 < frac < 0.6


# -- tabular ----------------------------------------------------------------


def test_tabular_two_row_hand_example(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,3.0,0\n3.0,7.0,1\n")
    t = load_tabular(p)
    # features z-scored: means (2, 5), stds (1, 2)
    np.testing.assert_allclose(t.mean, [2.0, 5.0])
    np.testing.assert_allclose(t.std, [1.0, 2.0])
    np.testing.assert_allclose(t.features, [[-1.0, -1.0], [1.0, 1.0]])
    np.testing.assert_array_equal(t.labels, [0, 1])


def test_tabular_header_and_blank_lines(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n\n1.0,2.0,0\n\n2.0,4.0,1\n")
    t = load_tabular(p, has_header=True)
    assert t.features.shape == (2, 2)


def test_tabular_empty_rejected(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("\n\n")
    with pytest.raises(DatasetError, match="no data rows"):
        load_tabular(p)


def test_tabular_non_numeric_cell_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,0\n2.0,oops\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_tabular(p)


def test_tabular_inconsistent_widths(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0,0\n1.0,1\n")
    with pytest.raises(DatasetError, match="inconsistent"):
        load_tabular(p)


def test_tabular_label_checks(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,0.5\n2.0,1.0\n")
    with pytest.raises(DatasetError, match="integers"):
        load_tabular(p)
    p.write_text("1.0,-1\n2.0,0\n")
    with pytest.raises(DatasetError, match="nonnegative"):
        load_tabular(p)
    p.write_text("1.0\n2.0\n")
    with pytest.raises(DatasetError, match="at least one feature"):
        load_tabular(p)


# -- long-tail sampler ------------------------------------------------------


def test_longtail_zero_fraction_is_pure_gaussian():
    w = gen_longtail_weights(50_000, 0.0, 1.0, seed=0)
    assert len(w) == 50_000
    assert abs(w.std() - 0.02) < 0.002
    assert np.abs(w).max() < 0.02 * 6  # no planted outliers


def test_longtail_bulk_quantiles():
    w = gen_longtail_weights(100_000, 0.01, 1.0, seed=1)
    q1, q3 = np.quantile(w, [0.25, 0.75])
    # bulk dominates the quartiles: compare with N(0, 0.02)
    ref = 0.02 * 0.67449
    assert abs(q1 + ref) < 0.05 * ref
    assert abs(q3 - ref) < 0.05 * ref


def test_longtail_tail_points_beyond_iqr_fence():
    w = gen_longtail_weights(10_000, 0.01, 1.0, seed=2)
    n_tail = 100
    bulk, tail = w[:-n_tail], w[-n_tail:]
    q1, q3 = np.quantile(bulk, [0.25, 0.75])
    iqr = q3 - q1
    assert np.all((tail < q1 - 5 * iqr) | (tail > q3 + 5 * iqr))
    assert np.all(np.abs(tail) >= 1.0)


def test_longtail_fraction_validation():
    with pytest.raises(DatasetError):
        gen_longtail_weights(100, 0.2, 1.0)
    with pytest.raises(DatasetError):
        gen_longtail_weights(100, -0.01, 1.0)


def test_longtail_deterministic():
    np.testing.assert_array_equal(
        gen_longtail_weights(1000, 0.01, 2.0, seed=7),
        gen_longtail_weights(1000, 0.01, 2.0, seed=7),
    )
