"""Tests for the data model, CSV ingestion and completeness classification."""

import numpy as np
import pytest

from fdrecon import (
    Curve,
    DataError,
    DomainGrid,
    ParseError,
    UsageError,
    build_dataset,
    classify_complete,
    dataset_summary,
    load_dataset,
    write_dataset_csv,
)


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestDomainGrid:
    def test_regular(self):
        g = DomainGrid.regular((0.0, 1.0), 51)
        assert g.size == 51
        assert g.a == 0.0 and g.b == 1.0
        assert g.delta == pytest.approx(0.02)

    def test_trapezoid_weights_sum(self):
        g = DomainGrid.regular((0.0, 2.0), 21)
        assert g.trapezoid_weights().sum() == pytest.approx(2.0)

    def test_rejects_uneven_spacing(self):
        with pytest.raises(DataError):
            DomainGrid(np.array([0.0, 0.1, 0.3]))

    def test_rejects_single_point(self):
        with pytest.raises(DataError):
            DomainGrid(np.array([0.5]))


class TestCurve:
    def test_sorting_and_interval(self):
        c = Curve("a", np.array([0.5, 0.1, 0.3]), np.array([2.0, 1.0, 3.0]))
        assert c.u.tolist() == [0.1, 0.3, 0.5]
        assert c.y.tolist() == [1.0, 3.0, 2.0]
        assert c.observed_interval == (0.1, 0.5)

    def test_interval_equals_extrema_exactly(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(0.2, 0.9, 17)
        c = Curve("a", u, np.zeros(17))
        assert c.observed_interval == (float(u.min()), float(u.max()))

    def test_rejects_single_distinct_abscissa(self):
        with pytest.raises(DataError, match="distinct"):
            Curve("a", np.array([0.5, 0.5]), np.array([1.0, 2.0]))

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            Curve("a", np.array([0.1, np.nan]), np.array([1.0, 2.0]))


class TestLoadDataset:
    def test_groups_and_sorts(self, tmp_path):
        p = _write(tmp_path, "curve_id,u,y\nc1,0.1,1.0\nc1,0.5,2.0\nc1,0.3,3.0\n")
        ds = load_dataset(p)
        c = ds.curve("c1")
        assert c.u.tolist() == [0.1, 0.3, 0.5]
        assert c.observed_interval == (0.1, 0.5)

    def test_empty_file_is_no_curves(self, tmp_path):
        p = _write(tmp_path, "curve_id,u,y\n")
        with pytest.raises(DataError, match="no curves"):
            load_dataset(p)

    def test_two_ids_domain_extrema(self, tmp_path):
        # Oracle: grouping this fixture by hand gives intervals
        # c1 -> [0.0, 0.8], c2 -> [0.2, 1.0], global domain [0.0, 1.0].
        rows = ["curve_id,u,y"]
        c1_u = [0.0, 0.4, 0.8, 0.2, 0.6]
        c2_u = [0.2, 1.0, 0.5, 0.7, 0.9]
        rows += [f"c1,{u},{u + 1}" for u in c1_u]
        rows += [f"c2,{u},{2 * u}" for u in c2_u]
        p = _write(tmp_path, "\n".join(rows) + "\n")
        ds = load_dataset(p)
        assert ds.n_curves == 2
        assert ds.domain == (0.0, 1.0)
        assert ds.curve("c1").observed_interval == (0.0, 0.8)
        assert ds.curve("c2").observed_interval == (0.2, 1.0)

    def test_malformed_row_carries_line_number(self, tmp_path):
        p = _write(tmp_path, "curve_id,u,y\nc1,0.1,1.0\nc1,oops,2.0\nc1,0.3,1.0\n")
        with pytest.raises(ParseError, match="line 3"):
            load_dataset(p)

    def test_short_curve_rejected_with_id(self, tmp_path):
        p = _write(tmp_path, "curve_id,u,y\nc9,0.1,1.0\n")
        with pytest.raises(DataError, match="c9"):
            load_dataset(p)

    def test_observation_outside_explicit_domain(self, tmp_path):
        p = _write(tmp_path, "curve_id,u,y\nc1,0.1,1.0\nc1,0.9,2.0\n")
        with pytest.raises(DataError, match="outside"):
            load_dataset(p, domain=(0.0, 0.5))

    def test_duplicate_abscissae_kept_in_file_order(self, tmp_path):
        p = _write(tmp_path, "curve_id,u,y\nc1,0.5,1.0\nc1,0.5,2.0\nc1,0.1,0.0\n")
        ds = load_dataset(p)
        c = ds.curve("c1")
        assert c.u.tolist() == [0.1, 0.5, 0.5]
        assert c.y.tolist() == [0.0, 1.0, 2.0]

    def test_round_trip_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        curves = [
            Curve(f"c{i}", rng.uniform(0, 1, 9), rng.normal(size=9)) for i in range(4)
        ]
        ds = build_dataset(curves)
        out = tmp_path / "ds.csv"
        write_dataset_csv(ds, out)
        ds2 = load_dataset(out)
        assert ds2.n_curves == ds.n_curves
        for c in ds.curves:
            c2 = ds2.curve(c.id)
            assert np.array_equal(c.u, c2.u)
            assert np.array_equal(c.y, c2.y)
        # second round trip is byte-identical
        out2 = tmp_path / "ds2.csv"
        write_dataset_csv(ds2, out2)
        assert out.read_bytes() == out2.read_bytes()


class TestClassifyComplete:
    def _dataset(self, intervals):
        curves = []
        for i, (a, b) in enumerate(intervals):
            u = np.linspace(a, b, 5)
            curves.append(Curve(f"c{i}", u, np.zeros(5)))
        return build_dataset(curves, domain=(0.0, 1.0))

    def test_full_span_included(self):
        ds = self._dataset([(0.0, 1.0)])
        assert classify_complete(ds, 0.1) == {"c0"}

    def test_late_start_excluded(self):
        ds = self._dataset([(0.2, 1.0)])
        assert classify_complete(ds, 0.1) == set()

    def test_matches_hand_classification(self):
        # Oracle: direct extrema check with margin 0.1 keeps exactly the
        # curves starting at or below 0.1 and ending at or above 0.9.
        intervals = [
            (0.0, 1.0), (0.05, 0.95), (0.1, 0.9), (0.11, 1.0), (0.0, 0.89),
            (0.3, 0.7), (0.02, 0.97), (0.0, 0.5), (0.5, 1.0), (0.09, 0.91),
        ]
        ds = self._dataset(intervals)
        expected = {f"c{i}" for i, (a, b) in enumerate(intervals) if a <= 0.1 and b >= 0.9}
        assert classify_complete(ds, 0.1) == expected
        assert expected == {"c0", "c1", "c2", "c6", "c9"}

    def test_monotone_in_margin(self):
        rng = np.random.default_rng(8)
        intervals = [(rng.uniform(0, 0.3), rng.uniform(0.7, 1.0)) for _ in range(20)]
        ds = self._dataset(intervals)
        small = classify_complete(ds, 0.05)
        large = classify_complete(ds, 0.25)
        assert small <= large

    def test_margin_validation(self):
        ds = self._dataset([(0.0, 1.0)])
        with pytest.raises(UsageError):
            classify_complete(ds, 0.6)


def test_dataset_summary_shape():
    curves = [Curve("a", np.array([0.0, 1.0]), np.array([1.0, 2.0]))]
    ds = build_dataset(curves, domain=(0.0, 1.0))
    s = dataset_summary(ds)
    assert s["n_curves"] == 1
    assert s["curves"][0]["complete"] is True
    assert s["curves"][0]["interval"] == [0.0, 1.0]
