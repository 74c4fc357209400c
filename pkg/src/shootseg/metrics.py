"""Semantic metrics, instance average precision and trait-accuracy statistics.

Per-class precision/recall/F1/IoU come from point-wise confusion counts with
mIoU the class mean; instance AP uses greedy score-ordered matching against
ground-truth instances at inclusive IoU thresholds with all-point PR
interpolation, averaged over thresholds 0.50..0.95 (step 0.05) plus the
fixed AP@50 / AP@25 readings. Unlabeled (-1) ground-truth points are
excluded from both semantic and instance scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

AP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


class MetricsError(ValueError):
    pass


@dataclass
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    iou: float


@dataclass
class SemanticReport:
    per_class: dict[int, ClassMetrics]
    mean_precision: float
    mean_recall: float
    mean_f1: float
    miou: float
    excluded_classes: list[int] = field(default_factory=list)


def confusion_counts(pred: np.ndarray, gt: np.ndarray, classes: list[int]) -> dict[int, tuple[int, int, int]]:
    """Per-class (TP, FP, FN) over points with labeled ground truth."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise MetricsError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    labeled = gt >= 0
    bad = np.setdiff1d(np.unique(gt[labeled]), np.asarray(classes))
    if bad.size:
        raise MetricsError(f"ground truth contains classes outside {classes}: {bad.tolist()}")
    p, g = pred[labeled], gt[labeled]
    out = {}
    for c in classes:
        tp = int(np.sum((p == c) & (g == c)))
        fp = int(np.sum((p == c) & (g != c)))
        fn = int(np.sum((p != c) & (g == c)))
        out[c] = (tp, fp, fn)
    return out


def semantic_metrics(pred: np.ndarray, gt: np.ndarray, classes: list[int]) -> SemanticReport:
    """Precision, recall, F1, IoU per class plus means (mIoU over classes).

    Classes with TP+FP+FN = 0 never occur in either prediction or ground
    truth; they are excluded from the means and listed in the report.
    """
    counts = confusion_counts(pred, gt, classes)
    per_class: dict[int, ClassMetrics] = {}
    excluded: list[int] = []
    for c in classes:
        tp, fp, fn = counts[c]
        if tp + fp + fn == 0:
            excluded.append(c)
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        iou = tp / (tp + fp + fn)
        per_class[c] = ClassMetrics(tp, fp, fn, prec, rec, f1, iou)
    if not per_class:
        raise MetricsError("no class has any support")
    ms = lambda attr: float(np.mean([getattr(m, attr) for m in per_class.values()]))
    return SemanticReport(
        per_class=per_class,
        mean_precision=ms("precision"),
        mean_recall=ms("recall"),
        mean_f1=ms("f1"),
        miou=ms("iou"),
        excluded_classes=excluded,
    )


# ---------------------------------------------------------------------------
# instance AP
# ---------------------------------------------------------------------------


@dataclass
class ThresholdCurve:
    threshold: float
    precisions: list[float]
    recalls: list[float]
    ap: float


@dataclass
class APReport:
    ap: float | None
    ap50: float | None
    ap25: float | None
    curves: dict[float, ThresholdCurve] = field(default_factory=dict)
    note: str = ""


def _instance_iou(pred_idx: np.ndarray, gt_idx: np.ndarray) -> float:
    inter = np.intersect1d(pred_idx, gt_idx, assume_unique=True).size
    if inter == 0:
        return 0.0
    return inter / (pred_idx.size + gt_idx.size - inter)


def _pr_area(tp_flags: list[bool], n_gt: int, interpolation: str) -> tuple[list[float], list[float], float]:
    """Precision/recall along the ranked predictions and the interpolated area."""
    precisions, recalls = [], []
    tp = fp = 0
    for flag in tp_flags:
        tp += flag
        fp += not flag
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    if interpolation == "11-point":
        ap = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            pmax = max((p for p, rr in zip(precisions, recalls) if rr >= r - 1e-12), default=0.0)
            ap += pmax / 11.0
        return precisions, recalls, ap
    # all-point: running max of precision from the right, summed over recall steps
    ap = 0.0
    prev_r = 0.0
    env = 0.0
    best = [0.0] * len(precisions)
    for i in range(len(precisions) - 1, -1, -1):
        env = max(env, precisions[i])
        best[i] = env
    for i, r in enumerate(recalls):
        if r > prev_r:
            ap += (r - prev_r) * best[i]
            prev_r = r
    return precisions, recalls, ap


def match_greedy(
    pred_order: list[int],
    iou: np.ndarray,
    threshold: float,
) -> list[int]:
    """Per ranked prediction, the matched GT index or -1 (greedy, max IoU >= t).

    IoU ties between ground-truth candidates resolve to the lowest GT index.
    """
    matched_gt: set[int] = set()
    out = []
    for pi in pred_order:
        best_gt, best_iou = -1, 0.0
        for gi in range(iou.shape[1]):
            if gi in matched_gt:
                continue
            v = iou[pi, gi]
            if v >= threshold and v > best_iou:
                best_gt, best_iou = gi, v
        out.append(best_gt)
        if best_gt >= 0:
            matched_gt.add(best_gt)
    return out


def instance_ap(
    preds,
    gt_instances: list[np.ndarray],
    ap_thresholds: tuple[float, ...] = AP_THRESHOLDS,
    fixed_thresholds: tuple[float, ...] = (0.25, 0.5),
    ignore_points: np.ndarray | None = None,
    interpolation: str = "all-point",
) -> APReport:
    """Average precision of scored instance predictions against GT instances.

    `preds` carry .indices and .score; `ignore_points` marks ground-truth
    unlabeled points removed from predictions before IoU. Returns AP averaged
    over `ap_thresholds` plus AP@50 / AP@25; asserts the threshold-leniency
    monotonicity AP@25 >= AP@50 >= AP.
    """
    if not gt_instances:
        return APReport(None, None, None, note="undefined: no ground-truth instances")
    gts = [np.unique(np.asarray(g, dtype=np.int64)) for g in gt_instances]
    cleaned = []
    for p in preds:
        idx = np.unique(np.asarray(p.indices, dtype=np.int64))
        if ignore_points is not None:
            idx = idx[~ignore_points[idx]]
        cleaned.append((idx, float(p.score)))
    # rank by score desc; ties by smallest member index then insertion order
    order = sorted(
        range(len(cleaned)),
        key=lambda i: (
            -cleaned[i][1],
            int(cleaned[i][0][0]) if cleaned[i][0].size else np.iinfo(np.int64).max,
            i,
        ),
    )
    iou = np.zeros((len(cleaned), len(gts)))
    for i, (idx, _) in enumerate(cleaned):
        for j, g in enumerate(gts):
            iou[i, j] = _instance_iou(idx, g)

    def ap_at(t: float) -> ThresholdCurve:
        matches = match_greedy(order, iou, t)
        flags = [m >= 0 for m in matches]
        precisions, recalls, ap = _pr_area(flags, len(gts), interpolation)
        return ThresholdCurve(t, precisions, recalls, ap)

    curves = {}
    for t in sorted(set(ap_thresholds) | set(fixed_thresholds)):
        curves[t] = ap_at(t)
    ap = float(np.mean([curves[t].ap for t in ap_thresholds]))
    ap50 = curves[0.5].ap
    ap25 = curves[0.25].ap
    if not (ap25 >= ap50 - 1e-12 and ap50 >= ap - 1e-12):
        raise AssertionError(
            f"AP monotonicity violated: AP@25={ap25} AP@50={ap50} AP={ap}"
        )
    return APReport(ap, ap50, ap25, curves)


# ---------------------------------------------------------------------------
# trait accuracy
# ---------------------------------------------------------------------------


def r2(truth, pred) -> float:
    """1 - SSres/SStot; undefined (error) when the truth is constant."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise MetricsError("r2 needs two equal-length 1-D sequences")
    if t.size < 2:
        raise MetricsError("r2 needs at least 2 values")
    sstot = float(np.sum((t - t.mean()) ** 2))
    if sstot == 0.0:
        raise MetricsError("r2 undefined for constant truth")
    ssres = float(np.sum((t - p) ** 2))
    return 1.0 - ssres / sstot


def rmse(truth, pred) -> float:
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise MetricsError("rmse needs two equal-length 1-D sequences")
    if t.size == 0:
        raise MetricsError("rmse needs at least 1 value")
    return float(np.sqrt(np.mean((t - p) ** 2)))


# ---------------------------------------------------------------------------
# report serialization (values x100 to one decimal, table layout)
# ---------------------------------------------------------------------------


def _x100(v: float | None):
    return None if v is None else round(v * 100.0, 1)


def report_json(
    semantic: SemanticReport | None = None,
    ap: APReport | None = None,
    class_names: dict[int, str] | None = None,
) -> str:
    names = class_names or {0: "stem", 1: "leaf", 2: "soil"}
    doc: dict = {}
    if semantic is not None:
        table = {}
        for c, m in semantic.per_class.items():
            table[names.get(c, str(c))] = {
                "precision": _x100(m.precision),
                "recall": _x100(m.recall),
                "f1": _x100(m.f1),
                "iou": _x100(m.iou),
            }
        table["mean"] = {
            "precision": _x100(semantic.mean_precision),
            "recall": _x100(semantic.mean_recall),
            "f1": _x100(semantic.mean_f1),
            "iou": _x100(semantic.miou),
        }
        doc["semantic"] = table
        doc["semantic_raw"] = {
            "miou": semantic.miou,
            "excluded_classes": semantic.excluded_classes,
        }
    if ap is not None:
        doc["instance"] = {
            "ap": _x100(ap.ap),
            "ap50": _x100(ap.ap50),
            "ap25": _x100(ap.ap25),
        }
        if ap.note:
            doc["instance"]["note"] = ap.note
        doc["instance_raw"] = {"ap": ap.ap, "ap50": ap.ap50, "ap25": ap.ap25}
    return json.dumps(doc, sort_keys=True, indent=1)
