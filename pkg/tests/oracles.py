"""Independent reference implementations used to check the library.

Everything here is written as plain loops, separately from the library's
vectorized code paths, and stays deliberately naive: these are the
oracles the real implementations are measured against.
"""

from __future__ import annotations

import math

import numpy as np


def numeric_grad(f, arr: np.ndarray, idx: tuple, h: float = 1e-6) -> float:
    """Central finite difference of scalar f with respect to arr[idx]."""
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2.0 * h)


def ddl_by_hand(probs, y, z, w1) -> float:
    """Loop evaluation of the domain discrimination loss."""
    total = 0.0
    for i in range(len(y)):
        y_hat, z_hat = probs[i][0], probs[i][1]
        total += -w1 * (y[i] * math.log(y_hat) + (1 - y[i]) * math.log(1 - y_hat))
        total += -y[i] * (z[i] * math.log(z_hat) + (1 - z[i]) * math.log(1 - z_hat))
    return total


def pose_loss_by_hand(pred, target, vis, y, w2) -> float:
    """Loop evaluation of the rebalanced pose loss."""
    n, d, h, w = pred.shape
    total = 0.0
    for i in range(n):
        annotated = [k for k in range(d) if vis[i][k]]
        if not annotated:
            continue
        acc = 0.0
        for k in annotated:
            for r in range(h):
                for c in range(w):
                    acc += (pred[i, k, r, c] - target[i, k, r, c]) ** 2
        mse = acc / (len(annotated) * h * w)
        total += (w2 if y[i] == 1 else 1.0) * mse
    return total


def pplo_loss_by_hand(pred, target, flags) -> float:
    n, d, h, w = pred.shape
    total = 0.0
    for j in range(n):
        if not flags[j]:
            continue
        acc = 0.0
        for k in range(d):
            for r in range(h):
                for c in range(w):
                    acc += (pred[j, k, r, c] - target[j, k, r, c]) ** 2
        total += acc / (d * h * w)
    return total


def oks_by_hand(pred_xy, gt_xy, gt_v, k, s) -> float:
    vals = []
    for i in range(len(gt_v)):
        if gt_v[i] <= 0:
            continue
        d2 = (pred_xy[i][0] - gt_xy[i][0]) ** 2 + (pred_xy[i][1] - gt_xy[i][1]) ** 2
        vals.append(math.exp(-d2 / (2.0 * s * s * k[i] * k[i])))
    return sum(vals) / len(vals)


def ap_by_hand(scored: list[tuple[float, int, int, bool]], n_gt: int) -> float:
    """101-point interpolated AP from (score, image, index, is_tp) records,
    spelled out as the literal definition."""
    ordered = sorted(scored, key=lambda r: (-r[0], r[1], r[2]))
    precisions, recalls = [], []
    tp = fp = 0
    for _, _, _, is_tp in ordered:
        if is_tp:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    total = 0.0
    for r100 in range(101):
        r = r100 / 100.0
        best = 0.0
        for p, rec in zip(precisions, recalls):
            if rec >= r and p > best:
                best = p
        total += best
    return total / 101.0


def map_by_hand(predictions, ground_truths, k, thresholds) -> float:
    """Greedy confidence-ordered matching plus hand AP, all in loops.

    predictions[i]: list of (xy array, score); ground_truths[i]: list of
    (xy array, v array, bbox). Tie-breaks: higher score first then lower
    index; best OKS wins a ground truth, lower index on ties; a match
    requires OKS >= threshold.
    """
    usable = []
    n_gt = 0
    for gts in ground_truths:
        keep = [(xy, v, bbox) for xy, v, bbox in gts if any(vv > 0 for vv in v)]
        usable.append(keep)
        n_gt += len(keep)
    aps = []
    for t in thresholds:
        records = []
        for img, preds in enumerate(predictions):
            order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
            taken = [False] * len(usable[img])
            for pi in order:
                best_gi, best = -1, -1.0
                for gi, (gxy, gv, bbox) in enumerate(usable[img]):
                    if taken[gi]:
                        continue
                    s = math.sqrt(bbox[2] * bbox[3])
                    score = oks_by_hand(preds[pi][0], gxy, gv, k, s)
                    if score > best:
                        best, best_gi = score, gi
                is_tp = best_gi >= 0 and best >= t
                if is_tp:
                    taken[best_gi] = True
                records.append((preds[pi][1], img, pi, is_tp))
        aps.append(ap_by_hand(records, n_gt))
    return sum(aps) / len(aps)
