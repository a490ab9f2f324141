"""Keypoint metrics: OKS, greedy-matched mAP over OKS thresholds, PCK,
and experiment comparison reports.

OKS follows the reference convention: the mean over annotated keypoints
of ``exp(-d_i^2 / (2 s^2 k_i^2))`` with object scale ``s`` the square
root of the bounding-box area. mAP matches predictions to ground truths
greedily in descending confidence order per image at each threshold,
then integrates a 101-point interpolated precision-recall curve; ties
break deterministically (higher score first, then lower index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose, SkeletonSchema
from .errors import EvaluationError

# Reference per-keypoint falloff sigmas (k_i = 2 * sigma_i), indexed like
# the 17-keypoint reference schema.
REFERENCE_SIGMAS = np.array([
    .026, .025, .025, .035, .035, .079, .079, .072, .072,
    .062, .062, .107, .107, .087, .087, .089, .089,
])
REFERENCE_K = 2.0 * REFERENCE_SIGMAS

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))


@dataclass
class OKSParams:
    """Falloff constants, object scale, and the threshold grid."""

    k: np.ndarray
    scale: float | None = None
    thresholds: tuple = DEFAULT_THRESHOLDS

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if np.any(self.k <= 0):
            raise EvaluationError("per-keypoint falloff constants must be positive")
        if any(t <= 0 or t > 1 for t in self.thresholds):
            raise EvaluationError("thresholds must lie in (0, 1]")

    @staticmethod
    def for_schema(schema: SkeletonSchema) -> "OKSParams":
        """Reference constants routed through the schema's alignment map;
        unmapped keypoints get the median constant."""
        if schema.name == "reference17" and schema.d == len(REFERENCE_K):
            return OKSParams(REFERENCE_K.copy())
        med = float(np.median(REFERENCE_K))
        k = np.full(schema.d, med)
        if schema.alignment and schema.alignment_to == "reference17":
            for src, dst in schema.alignment.items():
                k[src] = REFERENCE_K[dst]
        return OKSParams(k)

    def with_scale(self, scale: float) -> "OKSParams":
        return OKSParams(self.k.copy(), scale, self.thresholds)


def oks(pred: Pose, gt: Pose, params: OKSParams, scale: float | None = None) -> float:
    """Object keypoint similarity between a prediction and a ground truth.

    Only keypoints annotated in the ground truth count; a ground truth
    with none is undefined and raises rather than returning 0.
    """
    if len(pred) != len(gt):
        raise EvaluationError(f"pose lengths differ: {len(pred)} vs {len(gt)}")
    s = scale if scale is not None else params.scale
    if s is None or s <= 0:
        raise EvaluationError("OKS needs a positive object scale")
    mask = gt.vis() > 0
    if not mask.any():
        raise EvaluationError("OKS undefined: ground truth has no annotated keypoints")
    d2 = ((pred.xy() - gt.xy()) ** 2).sum(axis=1)
    vals = np.exp(-d2[mask] / (2.0 * s * s * params.k[mask] ** 2))
    return float(vals.mean())


def _bbox_scale(bbox) -> float:
    area = float(bbox[2]) * float(bbox[3])
    if area <= 0:
        raise EvaluationError(f"bbox {bbox} has non-positive area")
    return float(np.sqrt(area))


@dataclass
class MapResult:
    map: float
    ap_by_threshold: dict
    n_gt: int
    n_pred: int


def map_score(predictions: list[list[tuple[Pose, float]]],
              ground_truths: list[list[tuple[Pose, tuple]]],
              params: OKSParams) -> MapResult:
    """Mean average precision over the OKS threshold grid.

    ``predictions[i]`` are (pose, confidence) pairs of image i;
    ``ground_truths[i]`` are (pose, bbox) pairs. Ground truths without a
    single annotated keypoint are ignored. Raises when no usable ground
    truth exists anywhere.
    """
    if len(predictions) != len(ground_truths):
        raise EvaluationError("predictions and ground truths cover different image counts")

    per_image = []
    n_gt_total = 0
    for preds, gts in zip(predictions, ground_truths):
        usable = [(pose, bbox) for pose, bbox in gts if (pose.vis() > 0).any()]
        n_gt_total += len(usable)
        matrix = np.zeros((len(preds), len(usable)))
        for pi, (ppose, _) in enumerate(preds):
            for gi, (gpose, bbox) in enumerate(usable):
                matrix[pi, gi] = oks(ppose, gpose, params, _bbox_scale(bbox))
        order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
        per_image.append((preds, order, matrix, len(usable)))
    if n_gt_total == 0:
        raise EvaluationError("mAP undefined: no annotated ground truth anywhere")

    ap_by_threshold = {}
    for t in params.thresholds:
        records = []  # (score, image_idx, pred_idx, is_tp)
        for img_idx, (preds, order, matrix, n_gt) in enumerate(per_image):
            matched = np.zeros(n_gt, dtype=bool)
            for pi in order:
                best_gi, best_oks = -1, -1.0
                for gi in range(n_gt):
                    if matched[gi]:
                        continue
                    if matrix[pi, gi] > best_oks:
                        best_oks, best_gi = matrix[pi, gi], gi
                tp = best_gi >= 0 and best_oks >= t
                if tp:
                    matched[best_gi] = True
                records.append((preds[pi][1], img_idx, pi, tp))
        records.sort(key=lambda r: (-r[0], r[1], r[2]))
        tps = np.array([r[3] for r in records], dtype=np.float64)
        if len(tps) == 0:
            ap_by_threshold[float(t)] = 0.0
            continue
        cum_tp = np.cumsum(tps)
        cum_fp = np.cumsum(1.0 - tps)
        recall = cum_tp / n_gt_total
        precision = cum_tp / (cum_tp + cum_fp)
        # monotone envelope from the right, then 101-point interpolation
        for i in range(len(precision) - 2, -1, -1):
            precision[i] = max(precision[i], precision[i + 1])
        grid = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, grid, side="left")
        interp = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
        ap_by_threshold[float(t)] = float(interp.mean())

    aps = list(ap_by_threshold.values())
    return MapResult(map=float(np.mean(aps)), ap_by_threshold=ap_by_threshold,
                     n_gt=n_gt_total, n_pred=sum(len(p) for p in predictions))


def pck(pred: Pose, gt: Pose, fraction: float, bbox: tuple | None = None) -> float:
    """Share of annotated keypoints within ``fraction`` of the longest
    bounding-box side. Without an explicit bbox, the tight box around the
    annotated ground-truth keypoints is used."""
    if fraction <= 0:
        raise EvaluationError(f"fraction must be positive, got {fraction}")
    mask = gt.vis() > 0
    if not mask.any():
        raise EvaluationError("PCK undefined: ground truth has no annotated keypoints")
    gxy = gt.xy()
    if bbox is None:
        lo = gxy[mask].min(axis=0)
        hi = gxy[mask].max(axis=0)
        side = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    else:
        side = float(max(bbox[2], bbox[3]))
    if side <= 0:
        raise EvaluationError("degenerate bounding box for PCK")
    dist = np.linalg.norm(pred.xy() - gxy, axis=1)
    return float((dist[mask] <= fraction * side).mean())


def evaluate_model(model, aset, pck_fraction: float = 0.2,
                   params: OKSParams | None = None, chunk: int = 32) -> dict:
    """Predict every instance of a set and score against its ground truth.

    Labeled instances use their own pose; blinded target sets are scored
    against ``hidden_truth`` (this is the one place that sidecar may be
    read). Returns mAP, per-threshold AP, mean PCK and per-instance rows.
    """
    from .core import decode_heatmaps, HeatmapStack

    params = params or OKSParams.for_schema(aset.schema)
    preds_per_image = []
    gts_per_image = []
    rows = []
    pcks = []
    instances = aset.instances
    for lo in range(0, len(instances), chunk):
        batch = instances[lo:lo + chunk]
        images = np.stack([inst.image for inst in batch])
        out = model.forward(images)
        for i, inst in enumerate(batch):
            gt = inst.pose if inst.pose is not None else (
                aset.hidden_truth.get(inst.id) if aset.hidden_truth else None)
            if gt is None:
                continue
            stack = HeatmapStack.from_maps(out.maps[i])
            pose, conf = decode_heatmaps(stack, model.config.output_stride, aset.schema.name)
            bbox = inst.bbox
            if bbox is None:
                gxy = gt.xy()[gt.vis() > 0]
                lo_xy, hi_xy = gxy.min(axis=0), gxy.max(axis=0)
                bbox = (float(lo_xy[0]), float(lo_xy[1]),
                        float(hi_xy[0] - lo_xy[0]) + 1, float(hi_xy[1] - lo_xy[1]) + 1)
            p = pck(pose, gt, pck_fraction, bbox)
            pcks.append(p)
            preds_per_image.append([(pose, conf)])
            gts_per_image.append([(gt, bbox)])
            rows.append({"id": inst.id, "confidence": conf, "pck": p,
                         "oks": oks(pose, gt, params, _bbox_scale(bbox))})
    if not rows:
        raise EvaluationError("nothing to evaluate: no ground truth available")
    mr = map_score(preds_per_image, gts_per_image, params)
    return {
        "map": mr.map,
        "ap_by_threshold": mr.ap_by_threshold,
        "mean_pck": float(np.mean(pcks)),
        "pck_fraction": pck_fraction,
        "n_instances": len(rows),
        "instances": rows,
        "eval_set_id": dataset_fingerprint(aset),
    }


def dataset_fingerprint(aset) -> str:
    import hashlib
    h = hashlib.sha256()
    for inst_id in sorted(inst.id for inst in aset.instances):
        h.update(inst_id.encode())
    return h.hexdigest()[:16]


@dataclass
class RunRecord:
    """One training run's artifacts, as the report consumes them."""

    name: str
    eval_result: dict
    metrics_rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)


def report(runs: list[RunRecord], out_dir) -> dict:
    """Comparison table plus training-curve plots for a family of runs
    sharing one evaluation set. Refuses mismatched evaluation sets."""
    if not runs:
        raise EvaluationError("no runs to report")
    set_ids = {r.eval_result.get("eval_set_id") for r in runs}
    if len(set_ids) != 1:
        raise EvaluationError(f"runs evaluate different sets: {sorted(set_ids)}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(runs, key=lambda r: json.dumps(r.config, sort_keys=True))
    table = []
    for r in ordered:
        row = {"name": r.name,
               "map": r.eval_result["map"],
               "mean_pck": r.eval_result["mean_pck"],
               "n_instances": r.eval_result["n_instances"]}
        row.update({f"cfg_{k}": v for k, v in sorted(r.config.items())})
        table.append(row)
    with open(out / "comparison.json", "w") as f:
        json.dump(table, f, indent=1)

    import csv as _csv
    keys = sorted({k for row in table for k in row}, key=lambda k: (k != "name", k))
    with open(out / "comparison.csv", "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        w.writerows(table)

    curves_plotted = False
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for r in ordered:
        if not r.metrics_rows:
            continue
        epochs = [row["epoch"] for row in r.metrics_rows]
        for ax, key in zip(axes, ("apel", "ddl")):
            if key in r.metrics_rows[0]:
                ax.plot(epochs, [row[key] for row in r.metrics_rows], label=r.name)
                curves_plotted = True
    for ax, title in zip(axes, ("animal pose loss", "domain discrimination loss")):
        ax.set_xlabel("epoch")
        ax.set_title(title)
        if curves_plotted:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "training_curves.png", dpi=110)
    plt.close(fig)

    return {"table": table,
            "files": [str(out / "comparison.json"), str(out / "comparison.csv"),
                      str(out / "training_curves.png")]}
