"""Detection and segmentation metrics: average precision at an IoU
threshold, mean IoU under optimal matching, and label classification
reports with support-weighted aggregation.

AP uses all-point interpolation (area under the precision envelope), so
results are reproducible bit for bit and invariant to any positive monotone
rescaling of confidences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .geom import Aabb3
from .objects import Box3


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome at one IoU threshold."""

    order: tuple[int, ...]  # prediction indices in score order
    pred_is_tp: tuple[bool, ...]  # aligned with `order`
    gt_matched: tuple[bool, ...]
    ious: tuple[float, ...]  # IoU of each ordered prediction with its match (0 if FP)


def mask_iou(a, b) -> float:
    a, b = set(map(tuple, a)), set(map(tuple, b))
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def box_iou(a: Box3 | Aabb3, b: Box3 | Aabb3) -> float:
    """3D IoU of axis-aligned boxes (oriented boxes via their enclosing AABB)."""
    box_a = a.aabb() if isinstance(a, Box3) else a
    box_b = b.aabb() if isinstance(b, Box3) else b
    lo = np.maximum(box_a.min, box_b.min)
    hi = np.minimum(box_a.max, box_b.max)
    inter = float(np.clip(hi - lo, 0.0, None).prod())
    vol_a = float(np.prod(box_a.extent))
    vol_b = float(np.prod(box_b.extent))
    union = vol_a + vol_b - inter
    return inter / union if union > 0 else 0.0


def greedy_match(iou_matrix: np.ndarray, scores, iou_thresh: float) -> MatchResult:
    """Score-descending greedy matching: each prediction takes the unmatched
    ground truth with the highest IoU at or above the threshold. Score ties
    break by prediction index, IoU ties by ground-truth index."""
    iou_matrix = np.asarray(iou_matrix, dtype=np.float64)
    num_pred, num_gt = iou_matrix.shape
    order = sorted(range(num_pred), key=lambda k: (-float(scores[k]), k))
    matched = [False] * num_gt
    flags = []
    ious = []
    for k in order:
        best_gt = -1
        best_iou = 0.0
        for g in range(num_gt):
            if matched[g]:
                continue
            iou = iou_matrix[k, g]
            if iou >= iou_thresh and iou > best_iou + 1e-15:
                best_iou = iou
                best_gt = g
        if best_gt >= 0:
            matched[best_gt] = True
            flags.append(True)
            ious.append(float(best_iou))
        else:
            flags.append(False)
            ious.append(0.0)
    return MatchResult(tuple(order), tuple(flags), tuple(matched), tuple(ious))


def average_precision(tp_flags, num_gt: int) -> float:
    """All-point interpolated AP from score-ordered TP flags."""
    if num_gt == 0:
        return 0.0
    tp = 0
    precision = []
    recall = []
    for k, flag in enumerate(tp_flags, start=1):
        tp += 1 if flag else 0
        precision.append(tp / k)
        recall.append(tp / num_gt)
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(recall)):
        if recall[i] == prev_recall:
            continue
        ap += (recall[i] - prev_recall) * max(precision[i:])
        prev_recall = recall[i]
    return ap


def _optimal_total_iou(iou_matrix: np.ndarray, exhaustive_limit: int = 8):
    """One-to-one matching maximizing total IoU: exhaustive for small
    instances, greedy by descending IoU above the limit."""
    num_pred, num_gt = iou_matrix.shape
    if num_pred == 0 or num_gt == 0:
        return {}
    if max(num_pred, num_gt) <= exhaustive_limit:
        best_total = -1.0
        best: dict[int, int] = {}
        preds = range(num_pred)
        r = min(num_pred, num_gt)
        for pred_subset in itertools.combinations(preds, r):
            for gt_perm in itertools.permutations(range(num_gt), r):
                total = sum(iou_matrix[p, g] for p, g in zip(pred_subset, gt_perm))
                if total > best_total + 1e-15:
                    best_total = total
                    best = dict(zip(pred_subset, gt_perm))
        return best
    pairs = sorted(
        ((iou_matrix[p, g], p, g) for p in range(num_pred) for g in range(num_gt)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_p: set[int] = set()
    used_g: set[int] = set()
    assign: dict[int, int] = {}
    for iou, p, g in pairs:
        if iou <= 0 or p in used_p or g in used_g:
            continue
        assign[p] = g
        used_p.add(p)
        used_g.add(g)
    return assign


def segmentation_metrics(
    pred_masks, confidences, gt_masks, iou_thresh: float = 0.5
) -> dict:
    """Room segmentation quality: AP at the IoU threshold plus mean IoU.

    mIoU averages over ground-truth rooms under the optimal one-to-one
    matching; unmatched ground truth counts as zero.
    """
    if len(pred_masks) != len(confidences):
        raise ValueError("one confidence per predicted mask required")
    iou_matrix = np.array(
        [[mask_iou(p, g) for g in gt_masks] for p in pred_masks], dtype=np.float64
    ).reshape(len(pred_masks), len(gt_masks))
    match = greedy_match(iou_matrix, confidences, iou_thresh)
    ap = average_precision(match.pred_is_tp, len(gt_masks))
    assign = _optimal_total_iou(iou_matrix)
    if len(gt_masks) == 0:
        miou = 0.0
    else:
        per_gt = {g: iou_matrix[p, g] for p, g in assign.items()}
        miou = float(sum(per_gt.get(g, 0.0) for g in range(len(gt_masks))) / len(gt_masks))
    return {"ap": ap, "miou": miou, "match": match}


def detection_ap(preds_by_class, gts_by_class, iou_thresh: float) -> dict:
    """Per-class detection AP and the mean over classes with ground truth.

    preds_by_class: {class: [(Box3, score), ...]}; gts_by_class:
    {class: [Box3, ...]}. Oriented boxes are compared as enclosing AABBs.
    """
    per_class: dict[str, float] = {}
    for cls, gts in gts_by_class.items():
        if len(gts) == 0:
            continue
        preds = preds_by_class.get(cls, [])
        iou_matrix = np.array(
            [[box_iou(box, gt) for gt in gts] for box, _ in preds], dtype=np.float64
        ).reshape(len(preds), len(gts))
        match = greedy_match(iou_matrix, [s for _, s in preds], iou_thresh)
        per_class[cls] = average_precision(match.pred_is_tp, len(gts))
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return {"per_class": per_class, "mean_ap": mean}


@dataclass(frozen=True)
class ClassStats:
    support: int
    precision: float
    recall: float
    f1: float
    ap: float = field(default=0.0)


def classification_report(pred_labels, confidences, gt_labels) -> dict:
    """Precision/recall/F1 (support-weighted) plus mAP over categories.

    Per-class F1 is 2PR/(P+R), zero when both are zero. mAP ranks each
    class's predictions by confidence (one-vs-rest); macro accuracy over
    classes is reported alongside for transparency.
    """
    if len(pred_labels) != len(gt_labels) or len(pred_labels) != len(confidences):
        raise ValueError("prediction, confidence, and truth lists must align")
    if len(gt_labels) == 0:
        raise ValueError("empty evaluation set")
    classes = sorted(set(gt_labels) | set(pred_labels))
    stats: dict[str, ClassStats] = {}
    for cls in classes:
        tp = sum(1 for p, g in zip(pred_labels, gt_labels) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(pred_labels, gt_labels) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(pred_labels, gt_labels) if p != cls and g == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        detections = sorted(
            (
                (float(confidences[k]), k)
                for k in range(len(pred_labels))
                if pred_labels[k] == cls
            ),
            key=lambda t: (-t[0], t[1]),
        )
        flags = [gt_labels[k] == cls for _, k in detections]
        ap = average_precision(flags, tp + fn)
        stats[cls] = ClassStats(tp + fn, precision, recall, f1, ap)

    total = sum(s.support for s in stats.values())
    weighted = lambda attr: sum(
        getattr(s, attr) * s.support for s in stats.values()
    ) / total
    with_gt = [cls for cls, s in stats.items() if s.support > 0]
    mean_ap = float(np.mean([stats[c].ap for c in with_gt])) if with_gt else 0.0
    macro_acc = (
        float(np.mean([stats[c].recall for c in with_gt])) if with_gt else 0.0
    )
    return {
        "precision": weighted("precision"),
        "recall": weighted("recall"),
        "f1": weighted("f1"),
        "map": mean_ap,
        "macro_accuracy": macro_acc,
        "per_class": stats,
    }
