import itertools
import math
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oya.grid import GeoScene, GriddedPair
from oya.synthetic import channel_set
from oya.verification import (
    CellContingency,
    ContingencyTable,
    STANDARD_THRESHOLDS,
    ThresholdMismatchError,
    accumulate,
    case_report,
    csi_map,
    merge,
    metrics,
    render_csi_field,
    render_rate_field,
    write_metrics_csv,
    write_ppm,
)

from conftest import small_grid


def per_cell_oracle(m, y_true, y_pred, thresholds):
    """Quadruple-branch per-cell reference."""
    counts = {t: [0, 0, 0, 0] for t in thresholds}  # tp, fp, fn, tn
    rows, cols = m.shape
    for t in thresholds:
        for i in range(rows):
            for j in range(cols):
                if not m[i, j]:
                    continue
                a = y_true[i, j] >= t
                b = y_pred[i, j] >= t
                if a and b:
                    counts[t][0] += 1
                elif b:
                    counts[t][1] += 1
                elif a:
                    counts[t][2] += 1
                else:
                    counts[t][3] += 1
    return counts


def random_fields(rng, size=16):
    m = rng.random((size, size)) < 0.7
    y_true = np.where(rng.random((size, size)) < 0.5, rng.gamma(1.0, 2.0, (size, size)), 0.0)
    y_pred = np.where(rng.random((size, size)) < 0.5, rng.gamma(1.0, 2.0, (size, size)), 0.0)
    return m, y_true, y_pred


class TestAccumulate:
    def test_perfect_prediction_no_errors(self, rng):
        m, y_true, _ = random_fields(rng)
        table = accumulate(m, y_true, y_true)
        assert not table.fp.any() and not table.fn.any()

    def test_empty_mask_all_zero(self, rng):
        _, y_true, y_pred = random_fields(rng)
        table = accumulate(np.zeros_like(y_true, dtype=bool), y_true, y_pred)
        assert not (table.tp.any() or table.fp.any() or table.fn.any() or table.tn.any())

    def test_matches_per_cell_oracle(self, rng):
        for _ in range(5):
            m, y_true, y_pred = random_fields(rng, size=12)
            table = accumulate(m, y_true, y_pred)
            ref = per_cell_oracle(m, y_true, y_pred, STANDARD_THRESHOLDS)
            for i, t in enumerate(STANDARD_THRESHOLDS):
                assert [table.tp[i], table.fp[i], table.fn[i], table.tn[i]] == ref[t]

    def test_counts_conserve_valid_cells(self, rng):
        m, y_true, y_pred = random_fields(rng)
        table = accumulate(m, y_true, y_pred)
        total = table.tp + table.fp + table.fn + table.tn
        assert (total == int(m.sum())).all()

    def test_permutation_invariance(self, rng):
        m, y_true, y_pred = random_fields(rng, size=10)
        perm = rng.permutation(100)
        table1 = accumulate(m, y_true, y_pred)
        table2 = accumulate(
            m.ravel()[perm].reshape(10, 10),
            y_true.ravel()[perm].reshape(10, 10),
            y_pred.ravel()[perm].reshape(10, 10),
        )
        assert np.array_equal(table1.tp, table2.tp) and np.array_equal(table1.tn, table2.tn)

    def test_nonincreasing_thresholds_rejected(self, rng):
        m, y_true, y_pred = random_fields(rng)
        with pytest.raises(ValueError):
            accumulate(m, y_true, y_pred, thresholds=(1.0, 0.2))


class TestMetrics:
    def test_hand_case(self):
        table = ContingencyTable((0.2,), [3], [1], [1], [0])
        rep = metrics(table)
        assert rep.csi[0] == pytest.approx(0.6)
        assert rep.pod[0] == pytest.approx(0.75)
        assert rep.far[0] == pytest.approx(0.25)
        assert rep.bias[0] == pytest.approx(1.0)

    def test_perfect_forecast(self):
        rep = metrics(ContingencyTable((1.0,), [10], [0], [0], [5]))
        assert rep.csi[0] == 1.0 and rep.pod[0] == 1.0
        assert rep.far[0] == 0.0 and rep.bias[0] == 1.0

    def test_empty_events_undefined(self):
        rep = metrics(ContingencyTable((1.0,), [0], [0], [0], [9]))
        assert math.isnan(rep.csi[0]) and math.isnan(rep.pod[0])
        assert math.isnan(rep.far[0]) and math.isnan(rep.bias[0])

    @settings(max_examples=200, deadline=None)
    @given(
        tp=st.integers(0, 50), fp=st.integers(0, 50), fn=st.integers(0, 50), tn=st.integers(0, 50)
    )
    def test_identities(self, tp, fp, fn, tn):
        rep = metrics(ContingencyTable((0.2,), [tp], [fp], [fn], [tn]))
        if tp + fp + fn > 0 and tp + fn > 0:
            assert rep.csi[0] <= rep.pod[0] + 1e-15
        if tp + fp > 0:
            assert rep.far[0] + tp / (tp + fp) == pytest.approx(1.0, abs=1e-12)


class TestMerge:
    def test_identity_element(self, rng):
        m, y_true, y_pred = random_fields(rng)
        table = accumulate(m, y_true, y_pred)
        empty = ContingencyTable.empty(STANDARD_THRESHOLDS)
        merged = merge(table, empty)
        assert np.array_equal(merged.tp, table.tp) and np.array_equal(merged.tn, table.tn)

    def test_commutative_associative(self, rng):
        tables = [accumulate(*random_fields(rng)) for _ in range(3)]
        a = merge(merge(tables[0], tables[1]), tables[2])
        b = merge(tables[2], merge(tables[1], tables[0]))
        assert np.array_equal(a.tp, b.tp) and np.array_equal(a.fn, b.fn)

    def test_pooled_recomputation(self, rng):
        fields = [random_fields(rng, size=9) for _ in range(4)]
        merged = merge(*[accumulate(m, yt, yp) for m, yt, yp in fields])
        m_all = np.concatenate([f[0].ravel() for f in fields])
        yt_all = np.concatenate([f[1].ravel() for f in fields])
        yp_all = np.concatenate([f[2].ravel() for f in fields])
        pooled = accumulate(m_all.reshape(1, -1), yt_all.reshape(1, -1), yp_all.reshape(1, -1))
        assert np.array_equal(merged.tp, pooled.tp)
        assert np.array_equal(merged.fn, pooled.fn)
        rep_a, rep_b = metrics(merged), metrics(pooled)
        assert np.allclose(rep_a.csi, rep_b.csi, equal_nan=True)

    def test_threshold_mismatch_rejected(self, rng):
        m, y_true, y_pred = random_fields(rng)
        a = accumulate(m, y_true, y_pred, thresholds=(0.2, 1.0))
        b = accumulate(m, y_true, y_pred, thresholds=(0.2, 2.0))
        with pytest.raises(ThresholdMismatchError):
            merge(a, b)


class TestCsiMap:
    def test_perfect_prediction(self, rng):
        g = small_grid(6, 6)
        m = rng.random((6, 6)) < 0.5
        y = np.where(rng.random((6, 6)) < 0.9, 1.0, 0.0) + 0.2  # raining everywhere
        out = csi_map([(m, y, y)], 0.2, g)
        assert np.all(out[m] == 1.0)
        assert np.all(np.isnan(out[~m]))

    def test_never_valid_cell_undefined(self):
        g = small_grid(4, 4)
        m = np.zeros((4, 4), dtype=bool)
        out = csi_map([(m, np.ones((4, 4)), np.ones((4, 4)))], 0.2, g)
        assert np.isnan(out).all()

    def test_matches_merge_then_metrics_oracle(self, rng):
        g = small_grid(8, 8)
        pairs = [random_fields(rng, size=8) for _ in range(20)]
        out = csi_map(pairs, 1.0, g)
        for i in range(8):
            for j in range(8):
                tables = [
                    accumulate(
                        np.array([[m[i, j]]]),
                        np.array([[yt[i, j]]]),
                        np.array([[yp[i, j]]]),
                        thresholds=(1.0,),
                    )
                    for m, yt, yp in pairs
                ]
                ref = metrics(merge(*tables)).csi[0]
                if math.isnan(ref):
                    assert math.isnan(out[i, j])
                else:
                    assert out[i, j] == pytest.approx(ref, abs=1e-12)

    def test_sharded_merge(self, rng):
        g = small_grid(8, 8)
        pairs = [random_fields(rng, size=8) for _ in range(6)]
        whole = csi_map(pairs, 0.2, g)
        a = CellContingency(g, 0.2)
        b = CellContingency(g, 0.2)
        for m, yt, yp in pairs[:3]:
            a.update(m, yt, yp)
        for m, yt, yp in pairs[3:]:
            b.update(m, yt, yp)
        a.merge_with(b)
        assert np.allclose(a.csi(), whole, equal_nan=True)


class TestCaseReport:
    def _scene_pair(self, rng, size=8):
        g = small_grid(size, size)
        t0 = datetime(2022, 8, 8, 12, 45)
        scene = GeoScene(
            t_start=t0,
            t_end=t0 + timedelta(minutes=15),
            grid=g,
            channels=channel_set(2),
            data=rng.normal(250, 20, (size, size, 2)).astype(np.float32),
        )
        m = rng.random((size, size)) < 0.6
        y = np.where(rng.random((size, size)) < 0.5, rng.gamma(1.5, 2.0, (size, size)), 0.0)
        y = np.where(m, y, 0.0).astype(np.float32)
        pair = GriddedPair(x=scene.data, y=y, m=m, t_start=scene.t_start, t_end=scene.t_end)
        return scene, pair

    def test_identical_product_perfect_csi(self, rng):
        scene, pair = self._scene_pair(rng)
        report = case_report(scene, pair, {"mirror": pair.y.copy()})
        rep = report.reports["mirror"]
        defined = ~np.isnan(rep.csi)
        assert np.all(rep.csi[defined] == 1.0)

    def test_all_zero_product(self, rng):
        scene, pair = self._scene_pair(rng)
        pair.y[pair.m] += 1.0  # ensure events exist
        report = case_report(scene, pair, {"silent": np.zeros_like(pair.y)})
        rep = report.reports["silent"]
        assert rep.pod[0] == 0.0 and rep.bias[0] == 0.0

    def test_table_internal_consistency(self, rng):
        scene, pair = self._scene_pair(rng)
        pred = np.abs(rng.normal(1.0, 2.0, pair.y.shape))
        report = case_report(scene, pair, {"p": pred})
        ref = accumulate(pair.m, pair.y, pred, STANDARD_THRESHOLDS)
        assert np.array_equal(report.tables["p"].tp, ref.tp)
        assert np.array_equal(report.tables["p"].fn, ref.fn)

    def test_window_mismatch_rejected(self, rng):
        scene, pair = self._scene_pair(rng)
        with pytest.raises(ValueError):
            case_report(scene, pair, {"bad": np.zeros((4, 4))})

    def test_images_and_fields_present(self, rng):
        scene, pair = self._scene_pair(rng)
        report = case_report(scene, pair, {"p": np.zeros_like(pair.y)})
        assert set(report.fields) == {"truth", "p"}
        assert report.images["p"].shape == (*pair.y.shape, 3)


class TestRendering:
    def test_ppm_header_and_size(self, tmp_path, rng):
        img = render_rate_field(rng.gamma(1.0, 2.0, (5, 7)))
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n7 5\n255\n")
        assert len(raw) == len(b"P6\n7 5\n255\n") + 5 * 7 * 3

    def test_csi_rendering_marks_undefined(self):
        csi = np.array([[0.0, 1.0], [np.nan, 0.5]])
        img = render_csi_field(csi)
        assert tuple(img[1, 0]) == (160, 60, 160)
        assert tuple(img[0, 1]) == (255, 255, 255)

    def test_metrics_csv(self, tmp_path):
        table = ContingencyTable((0.2, 1.0), [3, 0], [1, 0], [1, 0], [5, 10])
        write_metrics_csv(tmp_path / "m.csv", table)
        lines = (tmp_path / "m.csv").read_text().strip().splitlines()
        assert lines[0] == "threshold,CSI,POD,FAR,Bias,TP,FP,FN,TN"
        cells = lines[1].split(",")
        assert float(cells[1]) == pytest.approx(0.6)
        assert cells[5:] == ["3", "1", "1", "5"]
        assert lines[2].split(",")[1] == "nan"
