"""Annotation ingestion, skeleton alignment, bone-proportion analysis and
dataset splitting.

The annotation file format mirrors the common keypoint-dataset JSON
convention: ``images``, ``annotations`` with flat ``[x, y, v] * d``
keypoint triples, and ``categories`` carrying keypoint names plus a
1-indexed skeleton edge list. Files written by this module round-trip
bit-compatibly through that convention.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Instance, Keypoint, Pose, SkeletonSchema, VIS_ABSENT
from .errors import ConfigError, ParseError, SchemaError


@dataclass
class AnnotationSet:
    """Instances sharing one skeleton schema, with per-instance split tags.

    ``split_tags`` maps instance id to its split name; ids absent from the
    map are untagged (``split`` fills the map for every instance).
    ``hidden_truth`` exists only on synthetic target-domain sets: it maps
    instance id to the generator's ground-truth pose and must be read by
    evaluation code only, never by a trainer.
    """

    instances: list[Instance]
    schema: SkeletonSchema
    split_tags: dict[str, str] = field(default_factory=dict)
    hidden_truth: dict[str, Pose] | None = None

    def __post_init__(self):
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate instance ids in annotation set")
        for inst in self.instances:
            if inst.pose is not None and len(inst.pose) != self.schema.d:
                raise SchemaError(
                    f"instance {inst.id}: pose has {len(inst.pose)} keypoints, schema "
                    f"{self.schema.name!r} expects {self.schema.d}"
                )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]

    def species_list(self) -> list[str]:
        return sorted({inst.species or "unknown" for inst in self.instances})

    def subset(self, ids) -> "AnnotationSet":
        wanted = set(ids)
        kept = [inst for inst in self.instances if inst.id in wanted]
        return AnnotationSet(
            kept, self.schema,
            {i: t for i, t in self.split_tags.items() if i in wanted},
            {i: p for i, p in self.hidden_truth.items() if i in wanted} if self.hidden_truth else None,
        )

    def by_split(self, tag: str) -> "AnnotationSet":
        return self.subset([i for i, t in self.split_tags.items() if t == tag])


def _load_image(image_root, file_name):
    if image_root is None:
        return None
    path = Path(image_root) / file_name
    if not path.exists():
        return None
    from PIL import Image
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def parse_annotations(path, image_root=None, human_category_names=("person", "human")) -> AnnotationSet:
    """Read an annotation file into an AnnotationSet.

    Annotations carrying keypoints become pose-labeled instances (z = 0);
    box-only annotations become pose-unlabeled animal instances (z = 1).
    The domain flag y is 0 for categories named like a human and 1
    otherwise. Keypoint order follows the category's name list; skeleton
    edges in the file are 1-indexed per the usual convention.
    """
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e

    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise ParseError(f"{path}: missing top-level key {key!r}")
    if not data["categories"]:
        raise ParseError(f"{path}: no categories defined")

    categories = {c["id"]: c for c in data["categories"]}
    first = data["categories"][0]
    keypoint_names = first.get("keypoints", [])
    if not keypoint_names:
        raise ParseError(f"{path}: category {first.get('name')!r} defines no keypoints")
    bones = [(int(i) - 1, int(j) - 1) for i, j in first.get("skeleton", [])]
    schema = SkeletonSchema(first.get("name", "ingested"), list(keypoint_names), bones)

    images = {im["id"]: im for im in data["images"]}
    instances = []
    tags: dict[str, str] = {}
    for ann in data["annotations"]:
        ann_id = str(ann.get("id", len(instances)))
        cat = categories.get(ann.get("category_id"), first)
        species = cat.get("name")
        is_human = species in human_category_names
        image = _load_image(image_root, images.get(ann.get("image_id"), {}).get("file_name", ""))
        bbox = tuple(float(v) for v in ann["bbox"]) if "bbox" in ann else None

        if "keypoints" in ann:
            flat = ann["keypoints"]
            if len(flat) != 3 * schema.d:
                raise SchemaError(
                    f"annotation {ann_id}: expected {3 * schema.d} keypoint values "
                    f"for schema {schema.name!r}, got {len(flat)}"
                )
            kps = [Keypoint(float(flat[3 * k]), float(flat[3 * k + 1]), int(flat[3 * k + 2]))
                   for k in range(schema.d)]
            pose = Pose(kps, schema.name)
            inst = Instance(ann_id, image, pose, y=0 if is_human else 1, z=0,
                            species=species, bbox=bbox)
        else:
            inst = Instance(ann_id, image, None, y=1, z=1, species=species, bbox=bbox)
        instances.append(inst)
        if "split" in ann:
            tags[ann_id] = ann["split"]

    return AnnotationSet(instances, schema, tags)


def save_annotations(aset: AnnotationSet, path, image_sizes: dict | None = None) -> None:
    """Write an AnnotationSet back to the ingestion format. Hidden truth is
    never written here; synthetic sidecars are handled by the generator."""
    images = []
    annotations = []
    for n, inst in enumerate(aset.instances):
        h, w = (inst.image.shape[:2] if inst.image is not None
                else (image_sizes or {}).get(inst.id, (0, 0)))
        images.append({"id": n, "file_name": f"{inst.id}.png", "width": int(w), "height": int(h)})
        ann = {"id": inst.id, "image_id": n, "category_id": 1}
        if inst.bbox is not None:
            ann["bbox"] = list(inst.bbox)
        if inst.id in aset.split_tags:
            ann["split"] = aset.split_tags[inst.id]
        if inst.pose is not None:
            flat = []
            for kp in inst.pose.keypoints:
                flat.extend([float(kp.x), float(kp.y), int(kp.v)])
            ann["keypoints"] = flat
            ann["num_keypoints"] = int(sum(1 for kp in inst.pose.keypoints if kp.v > 0))
        annotations.append(ann)
    payload = {
        "images": images,
        "annotations": annotations,
        "categories": [{
            "id": 1,
            "name": aset.schema.name,
            "keypoints": list(aset.schema.keypoint_names),
            "skeleton": [[i + 1, j + 1] for i, j in aset.schema.bones],
        }],
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def align_skeleton(pose: Pose, from_schema: SkeletonSchema, to_schema: SkeletonSchema) -> Pose:
    """Convert a pose between schemas through the source's alignment map.

    Mapped keypoints copy coordinates and visibility; target slots with no
    source get v = 0; source keypoints outside the map are dropped. Same
    schema in and out is the identity.
    """
    if from_schema.name == to_schema.name:
        return Pose([Keypoint(k.x, k.y, k.v) for k in pose.keypoints], to_schema.name)
    if from_schema.alignment is None or from_schema.alignment_to != to_schema.name:
        raise ConfigError(
            f"schema {from_schema.name!r} has no alignment into {to_schema.name!r}"
        )
    kps = [Keypoint(0.0, 0.0, VIS_ABSENT) for _ in range(to_schema.d)]
    for src, dst in from_schema.alignment.items():
        kp = pose.keypoints[src]
        kps[dst] = Keypoint(kp.x, kp.y, kp.v)
    return Pose(kps, to_schema.name)


def align_set(aset: AnnotationSet, to_schema: SkeletonSchema) -> AnnotationSet:
    """Align every labeled pose in a set into the target schema."""
    out = []
    for inst in aset.instances:
        pose = align_skeleton(inst.pose, aset.schema, to_schema) if inst.pose else None
        out.append(Instance(inst.id, inst.image, pose, inst.y, inst.z, inst.species, inst.bbox))
    return AnnotationSet(out, to_schema, dict(aset.split_tags))


@dataclass
class BoneReport:
    """Per-class mean relative bone-length proportions.

    Each class vector sums to 1; classes with no instance contributing a
    single fully-visible bone are absent rather than zero.
    """

    proportions: dict[str, np.ndarray]
    counts: dict[str, int]
    bones: list[tuple[int, int]]

    def l1_distance(self, a: str, b: str) -> float:
        return float(np.abs(self.proportions[a] - self.proportions[b]).sum())


def compute_bone_proportions(aset: AnnotationSet, bones: list[tuple[int, int]] | None = None) -> BoneReport:
    """Relative bone-length profile per class.

    A bone contributes on an instance only when both endpoints are
    annotated (v > 0); per instance, each visible bone's length is divided
    by the instance's total visible skeleton length, the ratios are
    averaged per class over the instances where the bone was measurable,
    and the class vector is renormalized to sum to exactly 1.
    """
    if bones is None:
        bones = aset.schema.bones
    n_bones = len(bones)
    sums: dict[str, np.ndarray] = {}
    nums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}

    for inst in aset.instances:
        pose = inst.pose if inst.pose is not None else (
            aset.hidden_truth.get(inst.id) if aset.hidden_truth else None)
        if pose is None:
            continue
        xy = pose.xy()
        vis = pose.vis() > 0
        lengths = np.full(n_bones, np.nan)
        for b, (i, j) in enumerate(bones):
            if vis[i] and vis[j]:
                lengths[b] = np.linalg.norm(xy[i] - xy[j])
        total = np.nansum(lengths)
        if not np.any(np.isfinite(lengths)) or total <= 0:
            continue
        cls = inst.species or "unknown"
        if cls not in sums:
            sums[cls] = np.zeros(n_bones)
            nums[cls] = np.zeros(n_bones)
            counts[cls] = 0
        measurable = np.isfinite(lengths)
        sums[cls][measurable] += lengths[measurable] / total
        nums[cls][measurable] += 1
        counts[cls] += 1

    proportions = {}
    for cls in sums:
        mean = np.where(nums[cls] > 0, sums[cls] / np.maximum(nums[cls], 1), 0.0)
        s = mean.sum()
        if s <= 0:
            continue
        proportions[cls] = mean / s
    return BoneReport(proportions, {c: counts[c] for c in proportions}, list(bones))


def split(aset: AnnotationSet, fractions: dict[str, float], seed: int) -> AnnotationSet:
    """Deterministic class-stratified split; returns a re-tagged copy.

    Per class, counts follow largest-remainder rounding of the fractions.
    A class too small to stratify goes wholly to 'train' with a warning.
    """
    total = sum(fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {total}")
    names = list(fractions)
    rng = np.random.default_rng(seed)
    tags: dict[str, str] = {}

    by_class: dict[str, list[str]] = {}
    for inst in aset.instances:
        by_class.setdefault(inst.species or "unknown", []).append(inst.id)

    for cls in sorted(by_class):
        ids = sorted(by_class[cls])
        rng.shuffle(ids)
        n = len(ids)
        if n < len(names):
            warnings.warn(f"class {cls!r} has only {n} instances; placing all in 'train'")
            for i in ids:
                tags[i] = "train"
            continue
        raw = [fractions[name] * n for name in names]
        base = [int(np.floor(r)) for r in raw]
        remainder = n - sum(base)
        order = sorted(range(len(names)), key=lambda k: (-(raw[k] - base[k]), k))
        for k in order[:remainder]:
            base[k] += 1
        pos = 0
        for name, cnt in zip(names, base):
            for i in ids[pos:pos + cnt]:
                tags[i] = name
            pos += cnt

    return AnnotationSet(list(aset.instances), aset.schema, tags, aset.hidden_truth)
