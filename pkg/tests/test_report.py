import numpy as np

from cv2x_gbmu.regression import reference_table
from cv2x_gbmu.report import gain_curve, histogram_rows, surface_grid, write_histograms, write_surface


def test_surface_monotone_for_nsv2():
    dd, ll, p, raw = surface_grid(reference_table(), 2)
    assert dd.min() == 1 and dd.max() == 400 and ll.min() == 1 and ll.max() == 400
    assert np.all(np.diff(raw, axis=1) < 0)  # along d
    assert np.all(np.diff(raw, axis=0) > 0)  # along l
    assert np.all(np.diff(p, axis=1) <= 0) and np.all(np.diff(p, axis=0) >= 0)


def test_surface_csv_skips_unfitted(tmp_path, fitted_table):
    grids = write_surface(fitted_table, tmp_path / "s.csv", points=5)
    fitted = [r.nsv for r in fitted_table.rows if r.fitted]
    assert sorted(grids) == fitted
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "nsv,d_m,l_m,p,p_raw"
    assert len(lines) == 1 + 25 * len(fitted)


def test_empty_histogram_has_header_only(tmp_path):
    write_histograms({"utility_gain": []}, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "metric,bin_lo,bin_hi,count\n"


def test_histogram_counts():
    rows = histogram_rows("g", [0.1, 0.2, float("nan"), 0.3, 0.9], bins=4)
    assert sum(r[3] for r in rows) == 4


def test_gain_curve():
    np.testing.assert_allclose(gain_curve(np.array([-2.0, -1.5, -1.0])), [0.0, 0.25, 0.5])
    assert np.isnan(gain_curve(np.array([0.0, 1.0]))).all()
