import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icfit.core import (
    ChainTrace,
    IncompleteMatrix,
    ParameterSnapshot,
    chain_average,
    make_incomplete,
    median_fill,
    read_incomplete_csv,
    read_matrix_csv,
    read_trace_csv,
    write_incomplete_csv,
    write_matrix_csv,
    write_trace_csv,
)
from icfit.exceptions import AllMissingColumn, DimensionMismatch, NonFiniteObserved


def _toy():
    values = np.array([[1.0, np.nan, 3.0], [4.0, 5.0, np.nan], [7.0, 8.0, 9.0]])
    return make_incomplete(values)


def test_make_incomplete_mask_matches_nans():
    data = _toy()
    assert data.mask.tolist() == [[True, False, True], [True, True, False], [True, True, True]]
    assert data.n_missing == 2
    assert not data.is_complete


def test_observed_values_preserved_exactly():
    data = _toy()
    assert data.values[0, 0] == 1.0
    assert data.values[2, 2] == 9.0
    assert np.isnan(data.export()[0, 1])


def test_custom_missing_marker_roundtrip():
    values = np.array([[1.0, -999.0], [2.0, 3.0]])
    data = make_incomplete(values, missing_marker=-999.0)
    assert data.mask.tolist() == [[True, False], [True, True]]
    out = data.export(missing_marker=-999.0)
    assert out[0, 1] == -999.0
    assert out[0, 0] == 1.0


def test_nonfinite_observed_rejected():
    with pytest.raises(NonFiniteObserved):
        make_incomplete(np.array([[np.inf, 1.0], [2.0, 3.0]]))


def test_all_missing_column_rejected():
    with pytest.raises(AllMissingColumn):
        make_incomplete(np.array([[1.0, np.nan], [2.0, np.nan]]))


def test_arrays_are_read_only():
    data = _toy()
    with pytest.raises(ValueError):
        data.values[0, 0] = 0.0
    with pytest.raises(ValueError):
        data.mask[0, 0] = False
    with pytest.raises(ValueError):
        data.imputed[0, 0] = 0.0


def test_with_overlay_requires_agreement_on_observed():
    data = _toy()
    bad = np.ones((3, 3))
    with pytest.raises(DimensionMismatch):
        data.with_overlay(bad)
    good = np.array(data.imputed)
    good[0, 1] = 42.0
    new = data.with_overlay(good)
    assert new.imputed[0, 1] == 42.0
    assert new.values is not None
    # the original is untouched
    assert data.imputed[0, 1] != 42.0


def test_median_fill_uses_observed_column_medians():
    data = _toy()
    filled = median_fill(data)
    # column 1 observed values are 5, 8 -> median 6.5
    assert filled.imputed[0, 1] == 6.5
    # column 2 observed values are 3, 9 -> median 6.0
    assert filled.imputed[1, 2] == 6.0
    # observed cells untouched
    assert filled.imputed[0, 0] == 1.0


def test_median_fill_complete_data_is_identity():
    values = np.arange(6.0).reshape(2, 3)
    data = make_incomplete(values)
    assert data.is_complete
    filled = median_fill(data)
    np.testing.assert_array_equal(filled.imputed, values)


def test_snapshot_rejects_nonfinite_payload():
    with pytest.raises(ValueError):
        ParameterSnapshot(0, np.array([1.0, np.nan]))


def test_trace_labels_strictly_increasing():
    trace = ChainTrace(burn_in=1)
    trace.append(ParameterSnapshot(0, np.array([1.0])))
    trace.append(ParameterSnapshot(1, np.array([2.0])))
    with pytest.raises(ValueError):
        trace.append(ParameterSnapshot(1, np.array([3.0])))


def test_trace_constant_payload_dimension():
    trace = ChainTrace(burn_in=0)
    trace.append(ParameterSnapshot(0, np.array([1.0, 2.0])))
    with pytest.raises(DimensionMismatch):
        trace.append(ParameterSnapshot(1, np.array([1.0])))


def test_chain_average_post_burn_in_only():
    trace = ChainTrace(burn_in=2)
    for t, v in enumerate([10.0, 20.0, 1.0, 3.0]):
        trace.append(ParameterSnapshot(t, np.array([v])))
    # labels 2 and 3 survive the burn-in: mean of 1 and 3
    np.testing.assert_allclose(chain_average(trace), [2.0])


def test_incomplete_csv_roundtrip(tmp_path):
    data = _toy()
    path = tmp_path / "data.csv"
    write_incomplete_csv(path, data)
    back = read_incomplete_csv(path)
    np.testing.assert_array_equal(back.mask, data.mask)
    np.testing.assert_array_equal(
        np.asarray(back.values)[back.mask], np.asarray(data.values)[data.mask]
    )


def test_incomplete_csv_skips_comment_lines(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("# a comment\nc0,c1\n1.0,NA\n# another\n2.0,3.0\n")
    back = read_incomplete_csv(path)
    assert back.shape == (2, 2)
    assert back.n_missing == 1


def test_matrix_csv_roundtrip(tmp_path):
    mat = np.array([[1.5, -2.25], [0.0, 1e-7]])
    path = tmp_path / "m.csv"
    write_matrix_csv(path, mat)
    np.testing.assert_allclose(read_matrix_csv(path), mat)


def test_trace_csv_roundtrip(tmp_path):
    trace = ChainTrace(burn_in=1)
    trace.append(ParameterSnapshot(0, np.array([1.0, 2.0])))
    trace.append(ParameterSnapshot(1, np.array([3.0, 4.0])))
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    back = read_trace_csv(path, burn_in=1)
    np.testing.assert_allclose(back.payload_matrix(), trace.payload_matrix())
    assert [s.label for s in back.snapshots] == [0, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=8), st.integers(min_value=2, max_value=6),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_median_fill_fills_every_cell_deterministically(n, p, seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n, p))
    drop = rng.random((n, p)) < 0.2
    # keep at least one observation per column
    drop[0, :] = False
    values = np.where(drop, np.nan, values)
    data = make_incomplete(values)
    once = median_fill(data)
    assert np.isfinite(once.imputed).all()
    np.testing.assert_array_equal(np.asarray(once.imputed)[data.mask],
                                  np.asarray(data.values)[data.mask])
    np.testing.assert_array_equal(median_fill(data).imputed, once.imputed)
