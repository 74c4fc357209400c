from fractions import Fraction

import numpy as np
import pytest

from shootseg.clustering import InstancePrediction
from shootseg.metrics import (
    AP_THRESHOLDS,
    MetricsError,
    instance_ap,
    r2,
    report_json,
    rmse,
    semantic_metrics,
)


class TestSemanticMetrics:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 2, 500)
        rep = semantic_metrics(gt, gt, [0, 1])
        for m in rep.per_class.values():
            assert m.precision == m.recall == m.f1 == m.iou == 1.0
        assert rep.miou == 1.0

    def test_all_stem_hand_example(self):
        # gt: 3 stem, 1 leaf; pred all stem
        gt = np.array([0, 0, 0, 1])
        pred = np.zeros(4, dtype=int)
        rep = semantic_metrics(pred, gt, [0, 1])
        stem = rep.per_class[0]
        assert abs(stem.precision - 0.75) < 1e-12
        assert stem.recall == 1.0
        assert abs(stem.f1 - 2 * 0.75 / 1.75) < 1e-12
        assert abs(stem.iou - 0.75) < 1e-12
        assert rep.per_class[1].iou == 0.0
        assert abs(rep.miou - 0.375) < 1e-12

    def test_class_swap_symmetry(self):
        rng = np.random.default_rng(1)
        gt = rng.integers(0, 2, 300)
        pred = rng.integers(0, 2, 300)
        a = semantic_metrics(pred, gt, [0, 1])
        b = semantic_metrics(1 - pred, 1 - gt, [0, 1])
        assert a.miou == pytest.approx(b.miou, abs=1e-15)
        assert a.per_class[0].iou == pytest.approx(b.per_class[1].iou, abs=1e-15)

    def test_unlabeled_gt_excluded(self):
        gt = np.array([-1, -1, 0, 1])
        pred = np.array([1, 0, 0, 1])
        rep = semantic_metrics(pred, gt, [0, 1])
        assert rep.miou == 1.0

    def test_absent_class_excluded_with_note(self):
        gt = np.array([0, 0, 0])
        pred = np.array([0, 0, 0])
        rep = semantic_metrics(pred, gt, [0, 1])
        assert rep.excluded_classes == [1]
        assert rep.miou == 1.0

    def test_f1_recomputable(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            gt = rng.integers(0, 3, 200)
            pred = rng.integers(0, 3, 200)
            rep = semantic_metrics(pred, gt, [0, 1, 2])
            for m in rep.per_class.values():
                expect = 2 * m.precision * m.recall / (m.precision + m.recall) if m.precision + m.recall else 0.0
                assert abs(m.f1 - expect) < 1e-12

    def test_iou_bounded_by_p_and_r(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            gt = rng.integers(0, 2, 100)
            pred = rng.integers(0, 2, 100)
            rep = semantic_metrics(pred, gt, [0, 1])
            for m in rep.per_class.values():
                assert m.iou <= min(m.precision, m.recall) + 1e-12

    def test_length_mismatch(self):
        with pytest.raises(MetricsError):
            semantic_metrics(np.zeros(3, int), np.zeros(4, int), [0, 1])


# ---------------------------------------------------------------------------
# exhaustive-matching AP oracle: explicit loops and exact Fraction arithmetic
# ---------------------------------------------------------------------------


def ap_oracle(preds, gts, thresholds):
    """Greedy score-ordered matcher + all-point interpolated area, in Fractions."""
    order = sorted(
        range(len(preds)),
        key=lambda i: (-preds[i].score, int(preds[i].indices[0]), i),
    )

    def iou(a, b):
        inter = len(set(a) & set(b))
        return Fraction(inter, len(set(a) | set(b))) if inter else Fraction(0)

    out = {}
    for t in thresholds:
        taken = set()
        flags = []
        for pi in order:
            best, best_iou = -1, Fraction(0)
            for gi, g in enumerate(gts):
                if gi in taken:
                    continue
                v = iou(preds[pi].indices, g)
                if v >= Fraction(t).limit_denominator(100) and v > best_iou:
                    best, best_iou = gi, v
            flags.append(best >= 0)
            if best >= 0:
                taken.add(best)
        # PR points
        precisions, recalls = [], []
        tp = fp = 0
        for f in flags:
            tp, fp = tp + f, fp + (not f)
            precisions.append(Fraction(tp, tp + fp))
            recalls.append(Fraction(tp, len(gts)))
        area = Fraction(0)
        prev_r = Fraction(0)
        for i, r in enumerate(recalls):
            if r > prev_r:
                best_p = max(precisions[j] for j in range(len(recalls)) if recalls[j] >= r)
                area += (r - prev_r) * best_p
                prev_r = r
        out[t] = area
    return out


def random_instances(rng, n_points=60):
    n_gt = int(rng.integers(1, 6))
    n_pred = int(rng.integers(0, 6))
    gts, preds = [], []
    for _ in range(n_gt):
        size = int(rng.integers(3, 15))
        gts.append(np.sort(rng.choice(n_points, size, replace=False)))
    for _ in range(n_pred):
        size = int(rng.integers(3, 15))
        idx = np.sort(rng.choice(n_points, size, replace=False))
        preds.append(InstancePrediction(idx, 1, float(rng.random()), "original"))
    return preds, gts


class TestInstanceAp:
    def test_exact_match_is_one(self):
        gt = [np.arange(10)]
        pred = [InstancePrediction(np.arange(10), 1, 0.9, "original")]
        rep = instance_ap(pred, gt)
        assert rep.ap == rep.ap50 == rep.ap25 == 1.0

    def test_half_iou_hand_walk(self):
        # |P|=|G|=15, intersection 10 -> IoU = 10/20 = 0.5 exactly
        gt = [np.arange(15)]
        pred = [InstancePrediction(np.arange(5, 20), 1, 0.8, "original")]
        rep = instance_ap(pred, gt)
        assert rep.ap50 == 1.0 and rep.ap25 == 1.0
        assert abs(rep.ap - 0.1) < 1e-12

    def test_duplicate_prediction_is_fp(self):
        gt = [np.arange(10)]
        preds = [
            InstancePrediction(np.arange(10), 1, 0.9, "original"),
            InstancePrediction(np.arange(10), 1, 0.7, "shifted"),
        ]
        rep = instance_ap(preds, gt)
        assert rep.ap50 <= 1.0
        curve = rep.curves[0.5]
        assert curve.precisions[-1] == 0.5  # trailing FP halves the raw precision

    def test_no_gt_reported_undefined(self):
        rep = instance_ap([], [])
        assert rep.ap is None and "undefined" in rep.note

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 500:
            preds, gts = random_instances(rng)
            rep = instance_ap(preds, gts)
            want = ap_oracle(preds, gts, [0.25, 0.5] + list(AP_THRESHOLDS))
            for t in (0.25, 0.5):
                assert abs(rep.curves[t].ap - float(want[t])) < 1e-12
            mean_ap = float(sum(want[t] for t in AP_THRESHOLDS) / len(AP_THRESHOLDS))
            assert abs(rep.ap - mean_ap) < 1e-12
            checked += 1

    def test_monotonicity_on_fuzzed_inputs(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            preds, gts = random_instances(rng)
            rep = instance_ap(preds, gts)  # internal assert guards monotonicity
            assert rep.ap25 >= rep.ap50 - 1e-12 >= rep.ap - 2e-12

    def test_ignored_points_removed_from_predictions(self):
        gt = [np.arange(10)]
        ignore = np.zeros(30, dtype=bool)
        ignore[20:] = True
        pred = [InstancePrediction(np.concatenate([np.arange(10), np.arange(20, 30)]), 1, 0.9, "original")]
        rep = instance_ap(pred, gt, ignore_points=ignore)
        assert rep.ap50 == 1.0


class TestTraitStats:
    def test_perfect(self):
        t = [1.0, 2.0, 3.0]
        assert r2(t, t) == 1.0
        assert rmse(t, t) == 0.0

    def test_mean_predictor_gives_zero(self):
        t = np.array([1.0, 2.0, 3.0])
        p = np.full(3, t.mean())
        assert abs(r2(t, p)) < 1e-15

    def test_hand_example(self):
        t = [1.0, 2.0, 3.0]
        p = [1.0, 2.0, 4.0]
        assert abs(rmse(t, p) - np.sqrt(1 / 3)) < 1e-12
        assert abs(r2(t, p) - 0.5) < 1e-12

    def test_constant_truth_undefined(self):
        with pytest.raises(MetricsError):
            r2([2.0, 2.0], [1.0, 3.0])

    def test_too_short(self):
        with pytest.raises(MetricsError):
            r2([1.0], [1.0])


def test_report_json_layout():
    rng = np.random.default_rng(6)
    gt = rng.integers(0, 2, 100)
    pred = rng.integers(0, 2, 100)
    rep = semantic_metrics(pred, gt, [0, 1])
    ap = instance_ap(
        [InstancePrediction(np.arange(5), 1, 0.9, "original")], [np.arange(5)]
    )
    import json

    doc = json.loads(report_json(rep, ap))
    assert set(doc["semantic"]) == {"stem", "leaf", "mean"}
    assert doc["instance"]["ap50"] == 100.0
    # one-decimal percent formatting
    for row in doc["semantic"].values():
        for v in row.values():
            assert v == round(v, 1)
