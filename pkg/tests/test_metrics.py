import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spxrefine.metrics import (
    IOU_THRESHOLDS,
    MetricError,
    ar_by_size,
    average_recall,
    boundary_recall,
    evaluate,
    iou_matrix,
    join_best_proposals,
    mask_iou,
    undersegmentation_error,
)

from oracles import average_recall_loops


def box(shape, y0, x0, y1, x1):
    m = np.zeros(shape, bool)
    m[y0:y1, x0:x1] = True
    return m


def iou_072_fixture():
    """GT of 100 px and a proposal sharing 72 px with union 100."""
    gt = box((20, 20), 0, 0, 10, 10)
    p = gt.copy()
    p.ravel()[np.flatnonzero(gt.ravel())[:28]] = False
    # 72 px overlap, union 100
    return [[p]], [[gt]]


class TestIou:
    def test_basic(self):
        a = box((20, 20), 0, 0, 10, 10)
        assert mask_iou(a, a) == 1.0
        assert mask_iou(a, box((20, 20), 10, 10, 20, 20)) == 0.0
        assert mask_iou(a, box((20, 20), 0, 5, 10, 15)) == pytest.approx(50 / 150)

    def test_both_empty(self):
        assert mask_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            mask_iou(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_matrix_matches_pairwise(self, rng):
        gts = [rng.uniform(size=(7, 7)) < 0.4 for _ in range(3)]
        ps = [rng.uniform(size=(7, 7)) < 0.5 for _ in range(4)]
        m = iou_matrix(gts, ps)
        for i, g in enumerate(gts):
            for j, p in enumerate(ps):
                assert m[i, j] == pytest.approx(mask_iou(g, p), abs=1e-15)


class TestAverageRecall:
    def test_thresholds(self):
        assert IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)

    def test_exact(self, rng):
        gts = [[box((10, 10), 0, 0, 4, 4), box((10, 10), 5, 5, 9, 9)]]
        assert average_recall(gts, gts, 10) == 1.0

    def test_no_proposals(self):
        assert average_recall([[]], [[box((5, 5), 0, 0, 2, 2)]], 10) == 0.0

    def test_iou_072(self):
        props, gts = iou_072_fixture()
        assert mask_iou(props[0][0], gts[0][0]) == 0.72
        assert average_recall(props, gts, 10) == 0.5

    def test_no_gts(self):
        with pytest.raises(MetricError):
            average_recall([[]], [[]], 10)

    def test_top_n_only(self):
        g = box((10, 10), 0, 0, 5, 5)
        props = [[box((10, 10), 5, 5, 10, 10), g]]
        assert average_recall(props, [[g]], 1) == 0.0
        assert average_recall(props, [[g]], 2) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_loop_oracle(self, seed):
        r = np.random.default_rng(seed)
        props, gts = [], []
        for _ in range(r.integers(1, 4)):
            gts.append([r.uniform(size=(6, 6)) < r.uniform(0.2, 0.7) for _ in range(r.integers(1, 4))])
            props.append([r.uniform(size=(6, 6)) < r.uniform(0.2, 0.7) for _ in range(r.integers(0, 6))])
        gts = [[g for g in gi if g.any()] or [np.eye(6, dtype=bool)] for gi in gts]
        for n in (1, 3, 10):
            assert average_recall(props, gts, n) == average_recall_loops(props, gts, n, IOU_THRESHOLDS)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_in_n(self, seed):
        r = np.random.default_rng(seed)
        gts = [[r.uniform(size=(5, 5)) < 0.5 for _ in range(3)]]
        gts = [[g for g in gts[0] if g.any()] or [np.ones((5, 5), bool)]]
        props = [[r.uniform(size=(5, 5)) < 0.5 for _ in range(30)]]
        a = [average_recall(props, gts, n) for n in (10, 100, 1000)]
        assert a[0] <= a[1] <= a[2]


class TestBySize:
    def test_all_small(self):
        g = box((40, 40), 0, 0, 10, 10)
        s, m, l = ar_by_size([[g]], [[g]], 100)
        assert s == 1.0 and m is None and l is None

    def test_partition(self):
        shape = (200, 200)
        gts = [box(shape, 0, 0, 20, 25), box(shape, 30, 0, 80, 100), box(shape, 100, 100, 200, 200)]
        areas = [g.sum() for g in gts]
        assert areas == [500, 5000, 10000]
        s, m, l = ar_by_size([gts], [gts], 100)
        assert (s, m, l) == (1.0, 1.0, 1.0)

    def test_boundaries(self):
        from spxrefine.metrics import size_class

        assert size_class(1023) == "small" and size_class(1024) == "medium"
        assert size_class(9216) == "medium" and size_class(9217) == "large"


class TestJoin:
    def test_perfect(self):
        g = box((8, 8), 2, 2, 6, 6)
        pm, gm = join_best_proposals([g], [g])
        np.testing.assert_array_equal(pm, gm)

    def test_two_disjoint(self):
        gts = [box((8, 8), 0, 0, 3, 3), box((8, 8), 5, 5, 8, 8)]
        _, gm = join_best_proposals(gts, gts)
        assert set(np.unique(gm).tolist()) == {0, 1, 2}

    def test_overlap_later_wins(self):
        gts = [box((8, 8), 0, 0, 5, 5), box((8, 8), 3, 3, 8, 8)]
        _, gm = join_best_proposals(gts, gts)
        assert gm[4, 4] == 2 and gm[0, 0] == 1

    def test_needs_gt(self):
        with pytest.raises(MetricError):
            join_best_proposals([], [])


class TestBoundaryRecall:
    def test_identical(self):
        gm = box((12, 12), 3, 3, 9, 9).astype(int)
        assert boundary_recall(gm, gm) == 1.0

    def test_no_pred_boundary(self):
        gm = box((12, 12), 3, 3, 9, 9).astype(int)
        assert boundary_recall(np.zeros_like(gm), gm) == 0.0

    def test_shift_one(self):
        gm = box((16, 16), 4, 4, 10, 10).astype(int)
        pm = box((16, 16), 5, 5, 11, 11).astype(int)
        assert boundary_recall(pm, gm, 2) == 1.0
        assert boundary_recall(pm, gm, 0) < 1.0

    def test_no_gt_boundary(self):
        assert boundary_recall(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    def test_relabel_invariant(self, rng):
        gm = rng.integers(0, 3, (10, 10))
        pm = rng.integers(0, 4, (10, 10))
        perm = np.array([7, 2, 9, 5])
        assert boundary_recall(perm[pm], gm + 10) == boundary_recall(pm, gm)


class TestUndersegmentation:
    def test_identical(self):
        gm = box((10, 10), 2, 2, 7, 7).astype(int)
        assert undersegmentation_error(gm, gm) == 0.0

    def test_straddle(self):
        gm = np.zeros((10, 10), int)
        gm[:, 5:] = 1
        pm = np.zeros((10, 10), int)
        # pred region 1: 30 px in gt 0, 10 px in gt 1
        pm[0:6, 0:5] = 1
        pm[0:2, 5:10] = 1
        assert (pm == 1).sum() == 40
        # other regions stay inside one gt region and cost nothing
        pm[6:, :5] = 2
        pm[2:, 5:] = 3
        assert undersegmentation_error(pm, gm) == pytest.approx((10 + 10) / 100)

    def test_single_region(self):
        gm = np.zeros((10, 10), int)
        gm[2:5, 2:8] = 1
        gm[6:, :] = 2
        sizes = np.bincount(gm.ravel())
        ref = sum(min(s, 100 - s) for s in sizes) / 100
        assert undersegmentation_error(np.zeros_like(gm), gm) == pytest.approx(ref)

    def test_zero_iff_refines(self, rng):
        gm = rng.integers(0, 3, (8, 8))
        fine = gm * 10 + rng.integers(0, 5, (8, 8))
        assert undersegmentation_error(fine, gm) == 0.0
        assert undersegmentation_error(gm % 2, gm) > 0.0

    def test_relabel_invariant(self, rng):
        gm = rng.integers(0, 3, (10, 10))
        pm = rng.integers(0, 4, (10, 10))
        assert undersegmentation_error(pm * 3 + 1, gm + 5) == pytest.approx(undersegmentation_error(pm, gm))


class TestEvaluate:
    def test_perfect(self):
        gts = [[box((30, 30), 2, 2, 10, 12), box((30, 30), 15, 15, 25, 28)]]
        rep = evaluate(gts, gts, ns=(10,))
        d = rep.to_json()
        assert d["AR@10"] == 1.0 and d["BR"] == 1.0 and d["UE"] == 0.0

    def test_empty_proposals(self):
        gts = [[box((30, 30), 2, 2, 10, 12)]]
        rep = evaluate([[]], gts, ns=(10, 100))
        assert rep.ar[10] == 0.0 and rep.ar[100] == 0.0

    def test_values_in_range(self, rng):
        gts = [[box((20, 20), 0, 0, 8, 8)], [box((20, 20), 5, 5, 15, 15)]]
        props = [[rng.uniform(size=(20, 20)) < 0.5 for _ in range(3)] for _ in range(2)]
        d = evaluate(props, gts).to_json()
        for k, v in d.items():
            if k.startswith("AR") and v is not None:
                assert 0 <= v <= 1
        assert 0 <= d["BR"] <= 1 and d["UE"] >= 0

    def test_csv_rows(self):
        gts = [[box((20, 20), 0, 0, 8, 8)]]
        rows = dict(evaluate(gts, gts, ns=(10,), size_n=10).csv_rows())
        assert rows["AR@10"] == "1.0" and rows["AR_M@10"] == ""
